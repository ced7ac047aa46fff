//! The Gaussian scene model and its attribute activations.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Number of SH coefficients per channel for degree 3.
pub const SH_COEFFS: usize = 16;

/// Scalars carried by one Gaussian: position, log-scale, rotation, opacity
/// and 16x3 SH coefficients.
pub const PARAMS_PER_GAUSSIAN: usize = 3 + 3 + 4 + 1 + SH_COEFFS * 3;

/// SH coefficient range `[start, end)` belonging to degree `l`.
pub const fn sh_degree_range(l: usize) -> (usize, usize) {
    (l * l, (l + 1) * (l + 1))
}

/// Degree of the SH coefficient at index `k`.
pub const fn sh_degree_of(k: usize) -> usize {
    match k {
        0 => 0,
        1..=3 => 1,
        4..=8 => 2,
        _ => 3,
    }
}

pub type ShCoeffs = [[f64; 3]; SH_COEFFS];

/// A set of 3D Gaussians in their stored (pre-activation) form.
///
/// Scales are stored as logarithms and opacities as logits; `exp` and
/// `sigmoid` are applied where the values are used.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GaussianCloud {
    pub positions: Vec<[f64; 3]>,
    pub log_scales: Vec<[f64; 3]>,
    /// Quaternions as `(w, x, y, z)`, not necessarily normalized.
    pub rotations: Vec<[f64; 4]>,
    pub opacity_logits: Vec<f64>,
    /// `sh_coeffs[i][k][c]`: coefficient `k` (0 is DC) of channel `c`.
    pub sh_coeffs: Vec<ShCoeffs>,
}

impl GaussianCloud {
    pub fn with_len(n: usize) -> Self {
        GaussianCloud {
            positions: vec![[0.0; 3]; n],
            log_scales: vec![[0.0; 3]; n],
            rotations: vec![[1.0, 0.0, 0.0, 0.0]; n],
            opacity_logits: vec![0.0; n],
            sh_coeffs: vec![[[0.0; 3]; SH_COEFFS]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Checks that all attribute arrays share the same length.
    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        let lens = [
            ("log_scales", self.log_scales.len()),
            ("rotations", self.rotations.len()),
            ("opacity_logits", self.opacity_logits.len()),
            ("sh_coeffs", self.sh_coeffs.len()),
        ];
        for (name, len) in lens {
            if len != n {
                return Err(Error::Shape(format!(
                    "{name} has {len} entries, positions has {n}"
                )));
            }
        }
        Ok(())
    }

    /// New cloud holding the Gaussians at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> GaussianCloud {
        GaussianCloud {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            log_scales: indices.iter().map(|&i| self.log_scales[i]).collect(),
            rotations: indices.iter().map(|&i| self.rotations[i]).collect(),
            opacity_logits: indices.iter().map(|&i| self.opacity_logits[i]).collect(),
            sh_coeffs: indices.iter().map(|&i| self.sh_coeffs[i]).collect(),
        }
    }

    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logits[i])
    }

    pub fn scale(&self, i: usize) -> [f64; 3] {
        self.log_scales[i].map(f64::exp)
    }

    /// Axis-aligned bounds of the positions, or `None` when empty.
    pub fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        let first = *self.positions.first()?;
        Some(self.positions.iter().fold((first, first), |(lo, hi), p| {
            (
                [lo[0].min(p[0]), lo[1].min(p[1]), lo[2].min(p[2])],
                [hi[0].max(p[0]), hi[1].max(p[1]), hi[2].max(p[2])],
            )
        }))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn inverse_sigmoid(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

pub fn normalize_quat(q: [f64; 4]) -> Result<[f64; 4]> {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Domain(format!("quaternion {q:?} has no usable norm")));
    }
    Ok(q.map(|v| v / norm))
}

/// `R diag(exp(ls))^2 R^T` for the normalized quaternion's rotation `R`.
pub fn build_covariance(log_scale: [f64; 3], rotation: [f64; 4]) -> Result<Matrix3<f64>> {
    let r = quat_to_matrix(normalize_quat(rotation)?);
    let s = Vector3::from(log_scale.map(|v| (2.0 * v).exp()));
    let cov = r * Matrix3::from_diagonal(&s) * r.transpose();
    // Exact symmetry; the two triangles can differ in the last ulp otherwise.
    Ok((cov + cov.transpose()) * 0.5)
}
