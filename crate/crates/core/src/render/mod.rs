//! Tile-based differentiable rasterizer for 3D Gaussians.
//!
//! Each pixel composites the Gaussians of its 16x16 tile front to back:
//! `c(p) = sum_u c_u sigma_u prod_{v<u} (1 - sigma_v) + T_final * bg` with
//! `sigma_u = alpha_u * exp(-0.5 d^T Sigma_u^-1 d)`. A Gaussian is skipped at
//! a pixel when `sigma_u < 1/255`, and compositing stops once the
//! transmittance falls below `1e-4` (after the Gaussian that crossed it has
//! been added). The backward pass is hand-written and exact for this
//! definition.

mod backward;
mod forward;
mod project;

pub use backward::{render_backward, Gradients};
pub use forward::{render, Contribution, RenderTape, TileTape};
pub use project::{project, ProjectedGaussian, Projection};

use crate::error::{Error, Result};
use crate::gaussian::{GaussianCloud, ShCoeffs};
use crate::pruning::MaskSet;

pub const TILE_SIZE: usize = 16;
/// Isotropic floor added to every projected covariance, in pixels^2.
pub const COVARIANCE_FLOOR: f64 = 0.3;
/// Minimum per-pixel opacity for a Gaussian to contribute.
pub const MIN_CONTRIBUTION: f64 = 1.0 / 255.0;
pub const TRANSMITTANCE_STOP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOptions {
    pub background: [f64; 3],
    /// Disable the transmittance early stop (used to check its effect).
    pub early_stop: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            background: [0.0; 3],
            early_stop: true,
        }
    }
}

/// Attribute values that replace the raw ones when rendering a quantized
/// model. Entries that are not quantized hold the raw values.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedView {
    pub log_scales: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
    pub sh_coeffs: Vec<ShCoeffs>,
}

impl QuantizedView {
    /// View that reproduces the raw cloud.
    pub fn identity(cloud: &GaussianCloud) -> Self {
        QuantizedView {
            log_scales: cloud.log_scales.clone(),
            rotations: cloud.rotations.clone(),
            sh_coeffs: cloud.sh_coeffs.clone(),
        }
    }
}

/// Effective per-Gaussian inputs of one render: the attributes actually
/// fed to the rasterizer plus the hard masks multiplied in after
/// activation.
#[derive(Debug, Clone)]
pub(crate) struct SplatInputs {
    pub positions: Vec<[f64; 3]>,
    pub log_scales: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
    pub opacity_logits: Vec<f64>,
    pub sh_coeffs: Vec<ShCoeffs>,
    pub gaussian_hard: Vec<f64>,
    pub sh_hard: Vec<[f64; 3]>,
}

impl SplatInputs {
    pub fn resolve(
        cloud: &GaussianCloud,
        masks: Option<&MaskSet>,
        quantized: Option<&QuantizedView>,
    ) -> Result<Self> {
        cloud.validate()?;
        let n = cloud.len();
        if let Some(m) = masks {
            m.check_size(n)?;
        }
        if let Some(q) = quantized {
            if q.log_scales.len() != n || q.rotations.len() != n || q.sh_coeffs.len() != n {
                return Err(Error::Shape(format!("quantized view does not cover {n} Gaussians")));
            }
        }
        Ok(SplatInputs {
            positions: cloud.positions.clone(),
            log_scales: quantized.map_or_else(|| cloud.log_scales.clone(), |q| q.log_scales.clone()),
            rotations: quantized.map_or_else(|| cloud.rotations.clone(), |q| q.rotations.clone()),
            opacity_logits: cloud.opacity_logits.clone(),
            sh_coeffs: quantized.map_or_else(|| cloud.sh_coeffs.clone(), |q| q.sh_coeffs.clone()),
            gaussian_hard: masks.map_or_else(|| vec![1.0; n], MaskSet::gaussian_hard),
            sh_hard: masks.map_or_else(|| vec![[1.0; 3]; n], MaskSet::sh_hard),
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }
}
