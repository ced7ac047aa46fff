use crate::error::{Error, Result};
use crate::image::RenderedImage;
use crate::metrics::{l1, ssim_with_grad};

/// Photometric loss `(1 - w) L1 + w D-SSIM` and its image gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderLoss {
    pub value: f64,
    pub l1: f64,
    pub d_ssim: f64,
    pub grad: Vec<f64>,
}

pub fn render_loss(img: &RenderedImage, target: &RenderedImage, ssim_weight: f64) -> Result<RenderLoss> {
    let l1_value = l1(img, target)?;
    let (s, ds) = ssim_with_grad(img, target)?;
    let d_ssim = (1.0 - s) / 2.0;
    let n = img.data.len().max(1) as f64;
    let grad = img
        .data
        .iter()
        .zip(&target.data)
        .zip(&ds)
        .map(|((a, b), g)| {
            let sign = if a > b {
                1.0
            } else if a < b {
                -1.0
            } else {
                0.0
            };
            (1.0 - ssim_weight) * sign / n - ssim_weight * 0.5 * g
        })
        .collect();
    Ok(RenderLoss {
        value: (1.0 - ssim_weight) * l1_value + ssim_weight * d_ssim,
        l1: l1_value,
        d_ssim,
        grad,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossComponents {
    pub gs_prune: f64,
    pub sh_prune: f64,
    pub rate: f64,
    pub vq: f64,
    pub render: f64,
}

/// `w_gs L_gs + w_sh L_sh + L_rate + L_vq + L_render`; a non-finite
/// component aborts with its name.
pub fn total_loss(c: &LossComponents, lambda_gs_prune: f64, lambda_sh_prune: f64) -> Result<f64> {
    for (name, v) in [
        ("gs_prune", c.gs_prune),
        ("sh_prune", c.sh_prune),
        ("rate", c.rate),
        ("vq", c.vq),
        ("render", c.render),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite(name));
        }
    }
    Ok(lambda_gs_prune * c.gs_prune + lambda_sh_prune * c.sh_prune + c.rate + c.vq + c.render)
}
