use nalgebra::{Matrix2, Matrix3, Vector3};
use rayon::prelude::*;

use super::forward::{RenderTape, TileTape};
use super::project::ProjectedGaussian;
use crate::error::{Error, Result};
use crate::gaussian::{sh_degree_of, ShCoeffs, SH_COEFFS};
use crate::sh;

/// Gradients of a scalar loss with respect to the render inputs.
///
/// `log_scales`, `rotations` and `sh_coeffs` are taken with respect to the
/// values that were rendered (the quantized view when one was given).
/// `gaussian_mask` and `sh_mask` are gradients with respect to the hard
/// masks; the straight-through rule maps them to raw mask values.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub positions: Vec<[f64; 3]>,
    pub log_scales: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
    pub opacity_logits: Vec<f64>,
    pub sh_coeffs: Vec<ShCoeffs>,
    pub gaussian_mask: Vec<f64>,
    pub sh_mask: Vec<[f64; 3]>,
}

impl Gradients {
    pub fn zeros(n: usize) -> Self {
        Gradients {
            positions: vec![[0.0; 3]; n],
            log_scales: vec![[0.0; 3]; n],
            rotations: vec![[0.0; 4]; n],
            opacity_logits: vec![0.0; n],
            sh_coeffs: vec![[[0.0; 3]; SH_COEFFS]; n],
            gaussian_mask: vec![0.0; n],
            sh_mask: vec![[0.0; 3]; n],
        }
    }
}

/// Screen-space gradient of one Gaussian.
#[derive(Debug, Clone, Copy, Default)]
struct Grad2d {
    mean: [f64; 2],
    conic: [f64; 3],
    alpha: f64,
    color: [f64; 3],
}

impl Grad2d {
    fn add(&mut self, o: &Grad2d) {
        for k in 0..2 {
            self.mean[k] += o.mean[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.alpha += o.alpha;
    }
}

fn backward_tile(tile: &TileTape, projected: &[ProjectedGaussian], width: usize, background: [f64; 3], d_image: &[f64]) -> Vec<Grad2d> {
    let mut grads = vec![Grad2d::default(); tile.gaussians.len()];
    for &(idx, start, len) in &tile.pixels {
        let idx = idx as usize;
        let d_c = [d_image[idx * 3], d_image[idx * 3 + 1], d_image[idx * 3 + 2]];
        if d_c == [0.0; 3] {
            continue;
        }
        let pix = [(idx % width) as f64 + 0.5, (idx / width) as f64 + 0.5];
        // Color of everything behind the current Gaussian, in units of the
        // transmittance in front of it.
        let mut behind = background;
        for e in tile.contributions[start as usize..(start + len) as usize].iter().rev() {
            let g = &projected[e.gaussian as usize];
            let acc = &mut grads[e.slot as usize];
            let mut d_sigma = 0.0;
            for c in 0..3 {
                acc.color[c] += e.sigma * e.transmittance * d_c[c];
                d_sigma += e.transmittance * (g.color[c] - behind[c]) * d_c[c];
                behind[c] = g.color[c] * e.sigma + (1.0 - e.sigma) * behind[c];
            }
            acc.alpha += d_sigma * e.falloff;
            let d_power = d_sigma * g.alpha * e.falloff;
            let dx = pix[0] - g.mean[0];
            let dy = pix[1] - g.mean[1];
            let [a, b, c] = g.conic;
            acc.mean[0] += d_power * (a * dx + b * dy);
            acc.mean[1] += d_power * (b * dx + c * dy);
            acc.conic[0] += d_power * (-0.5 * dx * dx);
            acc.conic[1] += d_power * (-dx * dy);
            acc.conic[2] += d_power * (-0.5 * dy * dy);
        }
    }
    grads
}

/// Derivative of the rotation matrix of a unit quaternion.
fn quat_matrix_grad(q: [f64; 4], g: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = q;
    let g = |r: usize, c: usize| g[(r, c)];
    [
        2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1)),
        2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) + w * g(2, 1)
            - 2.0 * x * g(2, 2)),
        2.0 * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) + z * g(2, 1)
            - 2.0 * y * g(2, 2)),
        2.0 * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1) + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1)),
    ]
}

struct Grad3d {
    position: [f64; 3],
    log_scale: [f64; 3],
    rotation: [f64; 4],
    opacity_logit: f64,
    sh: ShCoeffs,
    gaussian_mask: f64,
    sh_mask: [f64; 3],
}

fn backward_gaussian(tape: &RenderTape, i: usize, g2: &Grad2d) -> Grad3d {
    let g = &tape.projected[i];
    let inputs = &tape.inputs;
    let cam = &tape.camera;
    let hard = inputs.gaussian_hard[i];
    let sh_hard = inputs.sh_hard[i];
    let coeffs = &inputs.sh_coeffs[i];

    // Color: SH coefficients, SH masks and the view direction.
    let d = [g.view_dir.x, g.view_dir.y, g.view_dir.z];
    let basis = sh::basis(d);
    let basis_grad = sh::basis_grad(d);
    let mut d_sh = [[0.0; 3]; SH_COEFFS];
    let mut d_sh_mask = [0.0; 3];
    let mut d_dir = Vector3::zeros();
    for k in 0..SH_COEFFS {
        let l = sh_degree_of(k);
        let gate = if l == 0 { 1.0 } else { sh_hard[l - 1] };
        let mut along = 0.0;
        for c in 0..3 {
            let d_masked = basis[k] * g2.color[c];
            d_sh[k][c] = gate * d_masked;
            if l > 0 {
                d_sh_mask[l - 1] += d_masked * coeffs[k][c];
            }
            along += g2.color[c] * gate * coeffs[k][c];
        }
        d_dir += Vector3::from(basis_grad[k]) * along;
    }
    let mut d_mu = (d_dir - g.view_dir * g.view_dir.dot(&d_dir)) / g.view_dist;

    // Opacity.
    let sig = crate::gaussian::sigmoid(inputs.opacity_logits[i]);
    let d_opacity_logit = g2.alpha * hard * sig * (1.0 - sig);
    let mut d_hard = g2.alpha * sig;

    // Conic -> 2D covariance: d(S^-1) = -S^-1 dS S^-1.
    let conic = Matrix2::new(g.conic[0], g.conic[1], g.conic[1], g.conic[2]);
    let d_conic = Matrix2::new(g2.conic[0], 0.5 * g2.conic[1], 0.5 * g2.conic[1], g2.conic[2]);
    let d_cov2 = -(conic * d_conic * conic);

    // 2D covariance -> 3D covariance and the projection Jacobian.
    let d_cov3 = g.jw.transpose() * d_cov2 * g.jw;
    let d_jw = 2.0 * d_cov2 * g.jw * g.cov3;
    let d_j = d_jw * cam.rotation.transpose();

    let (x, y, z) = (g.p_cam.x, g.p_cam.y, g.p_cam.z);
    let (fx, fy) = (cam.fx, cam.fy);
    let z2 = z * z;
    let z3 = z2 * z;
    let mut d_p = Vector3::new(
        g2.mean[0] * fx / z + d_j[(0, 2)] * (-fx / z2),
        g2.mean[1] * fy / z + d_j[(1, 2)] * (-fy / z2),
        -g2.mean[0] * fx * x / z2 - g2.mean[1] * fy * y / z2,
    );
    d_p.z += d_j[(0, 0)] * (-fx / z2)
        + d_j[(0, 2)] * (2.0 * fx * x / z3)
        + d_j[(1, 1)] * (-fy / z2)
        + d_j[(1, 2)] * (2.0 * fy * y / z3);
    d_mu += cam.rotation.transpose() * d_p;

    // 3D covariance -> scale and rotation: cov3 = (R S)(R S)^T.
    let s = Matrix3::from_diagonal(&Vector3::from(g.scale));
    let m = g.rot * s;
    let d_m = 2.0 * d_cov3 * m;
    let mut d_log_scale = [0.0; 3];
    let raw_scale = inputs.log_scales[i].map(f64::exp);
    for k in 0..3 {
        let d_s: f64 = (0..3).map(|r| g.rot[(r, k)] * d_m[(r, k)]).sum();
        d_log_scale[k] = d_s * g.scale[k];
        d_hard += d_s * raw_scale[k];
    }
    let d_rot = d_m * s;
    let d_unit = quat_matrix_grad(g.quat_unit, &d_rot);
    let q = g.quat_unit;
    let dot: f64 = (0..4).map(|k| q[k] * d_unit[k]).sum();
    let d_rotation = std::array::from_fn(|k| (d_unit[k] - q[k] * dot) / g.quat_norm);

    Grad3d {
        position: [d_mu.x, d_mu.y, d_mu.z],
        log_scale: d_log_scale,
        rotation: d_rotation,
        opacity_logit: d_opacity_logit,
        sh: d_sh,
        gaussian_mask: d_hard,
        sh_mask: d_sh_mask,
    }
}

/// Exact reverse-mode gradients of the render that produced `tape`, given
/// `dL/dimage` laid out like [`crate::image::RenderedImage::data`].
pub fn render_backward(tape: &RenderTape, d_image: &[f64]) -> Result<Gradients> {
    let (w, h) = (tape.width(), tape.height());
    if d_image.len() != w * h * 3 {
        return Err(Error::Shape(format!(
            "image gradient has {} values, tape is {w}x{h}x3",
            d_image.len()
        )));
    }
    let background = tape.options.background;
    let per_tile: Vec<Vec<Grad2d>> = tape
        .tiles
        .par_iter()
        .map(|t| backward_tile(t, &tape.projected, w, background, d_image))
        .collect();

    // Fixed tile order keeps the reduction bitwise reproducible.
    let n = tape.num_gaussians();
    let mut grad2d = vec![Grad2d::default(); n];
    let mut touched = vec![false; n];
    for (tile, grads) in tape.tiles.iter().zip(&per_tile) {
        for (gid, g) in tile.gaussians.iter().zip(grads) {
            grad2d[*gid as usize].add(g);
            touched[*gid as usize] = true;
        }
    }

    let per_gaussian: Vec<Option<Grad3d>> = (0..n)
        .into_par_iter()
        .map(|i| (touched[i] && !tape.projected[i].culled).then(|| backward_gaussian(tape, i, &grad2d[i])))
        .collect();

    let mut out = Gradients::zeros(n);
    for (i, g) in per_gaussian.into_iter().enumerate() {
        if let Some(g) = g {
            out.positions[i] = g.position;
            out.log_scales[i] = g.log_scale;
            out.rotations[i] = g.rotation;
            out.opacity_logits[i] = g.opacity_logit;
            out.sh_coeffs[i] = g.sh;
            out.gaussian_mask[i] = g.gaussian_mask;
            out.sh_mask[i] = g.sh_mask;
        }
    }
    Ok(out)
}
