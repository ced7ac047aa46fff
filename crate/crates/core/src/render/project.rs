use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};

use super::{SplatInputs, COVARIANCE_FLOOR, MIN_CONTRIBUTION, TILE_SIZE};
use crate::camera::Camera;
use crate::error::Result;
use crate::gaussian::{quat_to_matrix, sh_degree_of, sigmoid, GaussianCloud, SH_COEFFS};
use crate::sh;

/// Public summary of one projected Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub mean: [f64; 2],
    /// Screen-space covariance `[xx, xy, yy]` including the floor.
    pub cov: [f64; 3],
    pub depth: f64,
    pub culled: bool,
}

/// Everything the rasterizer and the backward pass need about a Gaussian.
#[derive(Debug, Clone)]
pub struct ProjectedGaussian {
    pub culled: bool,
    pub depth: f64,
    pub mean: [f64; 2],
    /// Inverse 2D covariance `[a, b, c]` for `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    pub cov2: Matrix2<f64>,
    pub radius: f64,
    /// Inclusive tile rectangle `(x0, y0, x1, y1)`.
    pub tiles: (usize, usize, usize, usize),
    /// Masked activated opacity.
    pub alpha: f64,
    pub color: [f64; 3],
    // Intermediates of the projection chain.
    pub p_cam: Vector3<f64>,
    pub jw: Matrix2x3<f64>,
    pub cov3: Matrix3<f64>,
    pub rot: Matrix3<f64>,
    pub quat_unit: [f64; 4],
    pub quat_norm: f64,
    /// Masked activated scale.
    pub scale: [f64; 3],
    pub view_dir: Vector3<f64>,
    pub view_dist: f64,
}

impl ProjectedGaussian {
    fn culled() -> Self {
        ProjectedGaussian {
            culled: true,
            depth: 0.0,
            mean: [0.0; 2],
            conic: [0.0; 3],
            cov2: Matrix2::zeros(),
            radius: 0.0,
            tiles: (0, 0, 0, 0),
            alpha: 0.0,
            color: [0.0; 3],
            p_cam: Vector3::zeros(),
            jw: Matrix2x3::zeros(),
            cov3: Matrix3::zeros(),
            rot: Matrix3::identity(),
            quat_unit: [1.0, 0.0, 0.0, 0.0],
            quat_norm: 1.0,
            scale: [0.0; 3],
            view_dir: Vector3::zeros(),
            view_dist: 1.0,
        }
    }
}

pub(crate) fn tile_grid(cam: &Camera) -> (usize, usize) {
    (cam.width.div_ceil(TILE_SIZE), cam.height.div_ceil(TILE_SIZE))
}

pub(crate) fn project_one(inputs: &SplatInputs, i: usize, cam: &Camera) -> ProjectedGaussian {
    let hard = inputs.gaussian_hard[i];
    let alpha = hard * sigmoid(inputs.opacity_logits[i]);
    // A Gaussian with alpha below the contribution cutoff can never be
    // composited, whatever its footprint.
    if alpha < MIN_CONTRIBUTION {
        return ProjectedGaussian::culled();
    }
    let mu = Vector3::from(inputs.positions[i]);
    let p = cam.world_to_camera(&mu);
    if !(p.z >= cam.near) {
        return ProjectedGaussian::culled();
    }

    let q = inputs.rotations[i];
    let quat_norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(quat_norm > 0.0) || !quat_norm.is_finite() {
        return ProjectedGaussian::culled();
    }
    let quat_unit = q.map(|v| v / quat_norm);
    let rot = quat_to_matrix(quat_unit);
    let scale = inputs.log_scales[i].map(|v| hard * v.exp());
    let m = rot * Matrix3::from_diagonal(&Vector3::from(scale));
    let cov3 = m * m.transpose();

    let (x, y, z) = (p.x, p.y, p.z);
    let j = Matrix2x3::new(
        cam.fx / z,
        0.0,
        -cam.fx * x / (z * z),
        0.0,
        cam.fy / z,
        -cam.fy * y / (z * z),
    );
    let jw = j * cam.rotation;
    let cov2 = jw * cov3 * jw.transpose() + Matrix2::identity() * COVARIANCE_FLOOR;
    let det = cov2[(0, 0)] * cov2[(1, 1)] - cov2[(0, 1)] * cov2[(1, 0)];
    if !(det > 0.0) || !det.is_finite() {
        return ProjectedGaussian::culled();
    }
    let conic = [cov2[(1, 1)] / det, -cov2[(0, 1)] / det, cov2[(0, 0)] / det];
    let mean = [cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy];

    let mid = 0.5 * (cov2[(0, 0)] + cov2[(1, 1)]);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let radius = (3.0 * lambda_max.sqrt()).ceil();
    let (w, h) = (cam.width as f64, cam.height as f64);
    if mean[0] + radius < 0.0 || mean[0] - radius > w || mean[1] + radius < 0.0 || mean[1] - radius > h {
        return ProjectedGaussian::culled();
    }
    let (tw, th) = tile_grid(cam);
    let tile_of = |v: f64, count: usize| ((v / TILE_SIZE as f64).floor().max(0.0) as usize).min(count - 1);
    let tiles = (
        tile_of(mean[0] - radius, tw),
        tile_of(mean[1] - radius, th),
        tile_of(mean[0] + radius, tw),
        tile_of(mean[1] + radius, th),
    );

    let offset = mu - cam.center();
    let view_dist = offset.norm();
    let view_dir = if view_dist > 0.0 { offset / view_dist } else { Vector3::z() };
    let color = masked_color(&inputs.sh_coeffs[i], &inputs.sh_hard[i], view_dir);

    ProjectedGaussian {
        culled: false,
        depth: z,
        mean,
        conic,
        cov2,
        radius,
        tiles,
        alpha,
        color,
        p_cam: p,
        jw,
        cov3,
        rot,
        quat_unit,
        quat_norm,
        scale,
        view_dir,
        view_dist,
    }
}

fn masked_color(coeffs: &crate::gaussian::ShCoeffs, sh_hard: &[f64; 3], dir: Vector3<f64>) -> [f64; 3] {
    let b = sh::basis([dir.x, dir.y, dir.z]);
    let mut rgb = [sh::COLOR_OFFSET; 3];
    for k in 0..SH_COEFFS {
        let l = sh_degree_of(k);
        let gate = if l == 0 { 1.0 } else { sh_hard[l - 1] };
        for c in 0..3 {
            rgb[c] += b[k] * gate * coeffs[k][c];
        }
    }
    rgb
}

pub(crate) fn project_all(inputs: &SplatInputs, cam: &Camera) -> Vec<ProjectedGaussian> {
    use rayon::prelude::*;
    (0..inputs.len())
        .into_par_iter()
        .map(|i| project_one(inputs, i, cam))
        .collect()
}

/// Screen-space means, covariances and depths of an unmasked cloud.
pub fn project(cloud: &GaussianCloud, cam: &Camera) -> Result<Vec<Projection>> {
    cam.validate()?;
    let inputs = SplatInputs::resolve(cloud, None, None)?;
    Ok(project_all(&inputs, cam)
        .into_iter()
        .map(|g| Projection {
            mean: g.mean,
            cov: [g.cov2[(0, 0)], g.cov2[(0, 1)], g.cov2[(1, 1)]],
            depth: g.depth,
            culled: g.culled,
        })
        .collect())
}
