//! Image-quality metrics: L1, SSIM / D-SSIM and PSNR.
//!
//! SSIM uses an 11x11 Gaussian window with sigma 1.5, zero padding ("same"
//! output size), per-channel evaluation and stabilizers `C1 = 0.01^2`,
//! `C2 = 0.03^2`, averaged over all pixels and channels.

use crate::error::Result;
use crate::image::RenderedImage;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub l1: f64,
    pub ssim: f64,
    pub d_ssim: f64,
    /// `f64::INFINITY` for identical images.
    pub psnr: f64,
}

pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w: [f64; SSIM_WINDOW] =
        std::array::from_fn(|i| (-(i as f64 - half).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    w
}

/// Separable "same" convolution with zero padding. The window is symmetric,
/// so this operator is also its own adjoint.
fn blur(plane: &[f64], width: usize, height: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, w) in win.iter().enumerate() {
                let xx = x as isize + k as isize - r;
                if xx >= 0 && (xx as usize) < width {
                    acc += w * plane[y * width + xx as usize];
                }
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, w) in win.iter().enumerate() {
                let yy = y as isize + k as isize - r;
                if yy >= 0 && (yy as usize) < height {
                    acc += w * tmp[yy as usize * width + x];
                }
            }
            out[y * width + x] = acc;
        }
    }
    out
}

fn channel(img: &RenderedImage, c: usize) -> Vec<f64> {
    img.data.iter().skip(c).step_by(3).copied().collect()
}

/// Mean SSIM and, when requested, its gradient with respect to `img`.
fn ssim_impl(img: &RenderedImage, reference: &RenderedImage, want_grad: bool) -> (f64, Option<Vec<f64>>) {
    let (w, h) = (img.width, img.height);
    let n = w * h;
    let win = gaussian_window();
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; n * 3]);
    let norm = 1.0 / (n * 3) as f64;

    for c in 0..3 {
        let x = channel(img, c);
        let y = channel(reference, c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let mu_x = blur(&x, w, h, &win);
        let mu_y = blur(&y, w, h, &win);
        let e_xx = blur(&xx, w, h, &win);
        let e_yy = blur(&yy, w, h, &win);
        let e_xy = blur(&xy, w, h, &win);

        let mut d_mu = vec![0.0; n];
        let mut d_exx = vec![0.0; n];
        let mut d_exy = vec![0.0; n];
        for i in 0..n {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let sxx = e_xx[i] - mx * mx;
            let syy = e_yy[i] - my * my;
            let sxy = e_xy[i] - mx * my;
            let a = 2.0 * mx * my + C1;
            let b = 2.0 * sxy + C2;
            let cc = mx * mx + my * my + C1;
            let d = sxx + syy + C2;
            let s = (a * b) / (cc * d);
            total += s;
            if want_grad {
                // Partials of s with respect to mu_x, sigma_xx and sigma_xy.
                let ds_dmx = (2.0 * my * b) / (cc * d) - s * (2.0 * mx) / cc;
                let ds_dsxx = -s / d;
                let ds_dsxy = 2.0 * a / (cc * d);
                d_mu[i] = (ds_dmx - 2.0 * mx * ds_dsxx - my * ds_dsxy) * norm;
                d_exx[i] = ds_dsxx * norm;
                d_exy[i] = ds_dsxy * norm;
            }
        }
        if let Some(g) = grad.as_mut() {
            let b_mu = blur(&d_mu, w, h, &win);
            let b_xx = blur(&d_exx, w, h, &win);
            let b_xy = blur(&d_exy, w, h, &win);
            for i in 0..n {
                g[i * 3 + c] = b_mu[i] + 2.0 * x[i] * b_xx[i] + y[i] * b_xy[i];
            }
        }
    }
    (total * norm, grad)
}

pub fn ssim(img: &RenderedImage, reference: &RenderedImage) -> Result<f64> {
    img.same_shape(reference)?;
    Ok(ssim_impl(img, reference, false).0)
}

/// SSIM together with `dSSIM/dimg`.
pub fn ssim_with_grad(img: &RenderedImage, reference: &RenderedImage) -> Result<(f64, Vec<f64>)> {
    img.same_shape(reference)?;
    let (s, g) = ssim_impl(img, reference, true);
    Ok((s, g.expect("gradient requested")))
}

pub fn l1(img: &RenderedImage, reference: &RenderedImage) -> Result<f64> {
    img.same_shape(reference)?;
    let sum: f64 = img.data.iter().zip(&reference.data).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / img.data.len().max(1) as f64)
}

pub fn psnr(img: &RenderedImage, reference: &RenderedImage) -> Result<f64> {
    img.same_shape(reference)?;
    let mse: f64 = img
        .data
        .iter()
        .zip(&reference.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / img.data.len().max(1) as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    })
}

/// Evaluation metrics on images clamped to [0, 1].
pub fn metrics(img: &RenderedImage, reference: &RenderedImage) -> Result<Metrics> {
    img.same_shape(reference)?;
    let a = img.clamped();
    let b = reference.clamped();
    let s = ssim(&a, &b)?;
    Ok(Metrics {
        l1: l1(&a, &b)?,
        ssim: s,
        d_ssim: (1.0 - s) / 2.0,
        psnr: psnr(&a, &b)?,
    })
}
