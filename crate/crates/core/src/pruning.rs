//! Learnable Gaussian and per-degree SH masks.
//!
//! Each raw mask value maps to a soft mask `sigmoid(raw)` and a hard mask
//! `1[soft > threshold]`. The backward rule is straight-through: the hard
//! mask's gradient is routed through the soft mask, so
//! `d hard / d raw = soft * (1 - soft)`.

use crate::error::{Error, Result};
use crate::gaussian::{inverse_sigmoid, sigmoid, sh_degree_range, GaussianCloud};

pub const DEFAULT_THRESHOLD: f64 = 0.1;
/// Gaussian masks start at soft value 0.9, i.e. unpruned.
pub const GAUSSIAN_MASK_INIT_SOFT: f64 = 0.9;
pub const SH_MASK_INIT_RAW: f64 = 0.0;
/// Loss weights of SH degrees 1..=3: `(2l + 1) / ((k + 1)^2 - 1)` with k = 3.
pub const SH_DEGREE_WEIGHTS: [f64; 3] = [3.0 / 15.0, 5.0 / 15.0, 7.0 / 15.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskSample {
    pub soft: f64,
    pub hard: f64,
    /// Straight-through derivative of `hard` with respect to the raw value.
    pub ste_grad: f64,
}

/// Soft/hard mask and STE gradient for one raw mask value.
pub fn mask_forward(raw: f64, threshold: f64) -> MaskSample {
    let soft = sigmoid(raw);
    MaskSample {
        soft,
        hard: if soft > threshold { 1.0 } else { 0.0 },
        ste_grad: soft * (1.0 - soft),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub gaussian_mask_raw: Vec<f64>,
    /// Raw masks for SH degrees 1, 2 and 3.
    pub sh_mask_raw: Vec<[f64; 3]>,
    pub phi_threshold: f64,
    pub theta_threshold: f64,
}

impl MaskSet {
    pub fn new(n: usize) -> Self {
        MaskSet {
            gaussian_mask_raw: vec![inverse_sigmoid(GAUSSIAN_MASK_INIT_SOFT); n],
            sh_mask_raw: vec![[SH_MASK_INIT_RAW; 3]; n],
            phi_threshold: DEFAULT_THRESHOLD,
            theta_threshold: DEFAULT_THRESHOLD,
        }
    }

    pub fn len(&self) -> usize {
        self.gaussian_mask_raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussian_mask_raw.is_empty()
    }

    pub fn check_size(&self, n: usize) -> Result<()> {
        if self.gaussian_mask_raw.len() != n || self.sh_mask_raw.len() != n {
            return Err(Error::Shape(format!(
                "mask set sized {}/{} for {n} Gaussians",
                self.gaussian_mask_raw.len(),
                self.sh_mask_raw.len()
            )));
        }
        Ok(())
    }

    pub fn gaussian(&self, i: usize) -> MaskSample {
        mask_forward(self.gaussian_mask_raw[i], self.phi_threshold)
    }

    pub fn sh(&self, i: usize, degree: usize) -> MaskSample {
        mask_forward(self.sh_mask_raw[i][degree - 1], self.theta_threshold)
    }

    pub fn gaussian_hard(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.gaussian(i).hard).collect()
    }

    pub fn sh_hard(&self) -> Vec<[f64; 3]> {
        (0..self.len())
            .map(|i| std::array::from_fn(|l| self.sh(i, l + 1).hard))
            .collect()
    }

    pub fn is_kept(&self, i: usize) -> bool {
        self.gaussian(i).hard == 1.0
    }

    /// Hard SH mask bits `(b1, b2, b3)` of Gaussian `i`.
    pub fn sh_bits(&self, i: usize) -> [bool; 3] {
        std::array::from_fn(|l| self.sh(i, l + 1).hard == 1.0)
    }

    pub fn survivors(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_kept(i)).collect()
    }

    /// Fraction of Gaussians whose hard mask is 0.
    pub fn gaussian_prune_ratio(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        1.0 - self.survivors().len() as f64 / self.len() as f64
    }

    /// Fraction of degree-1..3 SH coefficients removed among surviving
    /// Gaussians, counting each degree by its coefficient count.
    pub fn sh_prune_ratio(&self) -> f64 {
        let survivors = self.survivors();
        if survivors.is_empty() {
            return 0.0;
        }
        let kept: f64 = survivors
            .iter()
            .map(|&i| {
                let bits = self.sh_bits(i);
                (1..=3).filter(|&l| bits[l - 1]).map(|l| (2 * l + 1) as f64).sum::<f64>()
            })
            .sum();
        1.0 - kept / (15.0 * survivors.len() as f64)
    }

    /// Mean over surviving Gaussians of the highest kept SH degree (0 when
    /// all of degrees 1..3 are masked).
    pub fn mean_sh_degree(&self) -> f64 {
        let survivors = self.survivors();
        if survivors.is_empty() {
            return 0.0;
        }
        let total: usize = survivors
            .iter()
            .map(|&i| {
                let bits = self.sh_bits(i);
                (1..=3).rev().find(|&l| bits[l - 1]).unwrap_or(0)
            })
            .sum();
        total as f64 / survivors.len() as f64
    }
}

/// Masked scale and opacity after activation: `hard * exp(log_scale)` and
/// `hard * sigmoid(opacity_logit)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedAttributes {
    pub scales: Vec<[f64; 3]>,
    pub opacities: Vec<f64>,
}

pub fn apply_gaussian_masks(cloud: &GaussianCloud, masks: &MaskSet) -> Result<MaskedAttributes> {
    masks.check_size(cloud.len())?;
    let hard = masks.gaussian_hard();
    Ok(MaskedAttributes {
        scales: (0..cloud.len()).map(|i| cloud.scale(i).map(|s| hard[i] * s)).collect(),
        opacities: (0..cloud.len()).map(|i| hard[i] * cloud.opacity(i)).collect(),
    })
}

/// Copy of `cloud` with SH degrees whose hard mask is 0 set to zero.
pub fn apply_sh_masks(cloud: &GaussianCloud, masks: &MaskSet) -> Result<GaussianCloud> {
    masks.check_size(cloud.len())?;
    let mut out = cloud.clone();
    for (i, sh) in out.sh_coeffs.iter_mut().enumerate() {
        for l in 1..=3 {
            let hard = masks.sh(i, l).hard;
            let (a, b) = sh_degree_range(l);
            for coeff in &mut sh[a..b] {
                *coeff = coeff.map(|v| hard * v);
            }
        }
    }
    Ok(out)
}

/// Mean soft Gaussian mask; 0 for an empty set.
pub fn gaussian_prune_loss(masks: &MaskSet) -> f64 {
    if masks.is_empty() {
        return 0.0;
    }
    let sum: f64 = (0..masks.len()).map(|i| masks.gaussian(i).soft).sum();
    sum / masks.len() as f64
}

/// Gradient of [`gaussian_prune_loss`] with respect to each raw mask.
pub fn gaussian_prune_loss_grad(masks: &MaskSet) -> Vec<f64> {
    let n = masks.len().max(1) as f64;
    (0..masks.len()).map(|i| masks.gaussian(i).ste_grad / n).collect()
}

/// Coefficient-count-weighted mean of the soft SH masks.
pub fn sh_prune_loss(masks: &MaskSet) -> f64 {
    if masks.is_empty() {
        return 0.0;
    }
    let sum: f64 = (0..masks.len())
        .map(|i| (1..=3).map(|l| SH_DEGREE_WEIGHTS[l - 1] * masks.sh(i, l).soft).sum::<f64>())
        .sum();
    sum / masks.len() as f64
}

pub fn sh_prune_loss_grad(masks: &MaskSet) -> Vec<[f64; 3]> {
    let n = masks.len().max(1) as f64;
    (0..masks.len())
        .map(|i| std::array::from_fn(|l| SH_DEGREE_WEIGHTS[l] * masks.sh(i, l + 1).ste_grad / n))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sh::eval_sh;
    use proptest::prelude::*;

    #[test]
    fn mask_forward_examples() {
        let m = mask_forward(0.0, 0.1);
        assert_eq!((m.soft, m.hard, m.ste_grad), (0.5, 1.0, 0.25));
        let m = mask_forward(-3.0, 0.1);
        assert!((m.soft - 0.047_425_873_177_566_78).abs() < 1e-15);
        assert_eq!(m.hard, 0.0);
    }

    #[test]
    fn ste_grad_matches_finite_difference() {
        let h = 1e-6;
        let fd = (mask_forward(h, 0.1).soft - mask_forward(-h, 0.1).soft) / (2.0 * h);
        assert!((fd - 0.25).abs() < 1e-9);
    }

    #[test]
    fn threshold_boundary_maps_to_zero() {
        let raw = inverse_sigmoid(0.25);
        let soft = sigmoid(raw);
        assert_eq!(mask_forward(raw, soft).hard, 0.0);
    }

    #[test]
    fn prune_loss_examples() {
        let mut m = MaskSet::new(2);
        m.gaussian_mask_raw = vec![0.0, 0.0];
        assert_eq!(gaussian_prune_loss(&m), 0.5);
        m.gaussian_mask_raw = vec![0.0, -3.0];
        let expected = (0.5 + 0.047_425_873_177_566_78) / 2.0;
        assert!((gaussian_prune_loss(&m) - expected).abs() < 1e-12);
        m.gaussian_mask_raw = vec![-800.0, -800.0];
        assert_eq!(gaussian_prune_loss(&m), 0.0);
        assert_eq!(gaussian_prune_loss(&MaskSet::new(0)), 0.0);
    }

    #[test]
    fn sh_prune_loss_examples() {
        let mut m = MaskSet::new(1);
        m.sh_mask_raw = vec![[800.0; 3]];
        assert!((sh_prune_loss(&m) - 1.0).abs() < 1e-15);
        m.sh_mask_raw = vec![[-800.0, -800.0, 800.0]];
        assert!((sh_prune_loss(&m) - 7.0 / 15.0).abs() < 1e-15);
        m.sh_mask_raw = vec![[0.0; 3]];
        assert!((sh_prune_loss(&m) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn degree3_mask_equals_zeroing_degree3() {
        let mut cloud = GaussianCloud::with_len(1);
        for (k, c) in cloud.sh_coeffs[0].iter_mut().enumerate() {
            *c = [0.1 * k as f64, -0.05 * k as f64, 0.02];
        }
        let mut masks = MaskSet::new(1);
        masks.sh_mask_raw[0] = [0.0, 0.0, -5.0];
        let masked = apply_sh_masks(&cloud, &masks).unwrap();
        let d = [0.6, 0.0, 0.8];
        assert_eq!(
            eval_sh(&masked.sh_coeffs[0], d, 3),
            eval_sh(&cloud.sh_coeffs[0], d, 2)
        );
    }

    #[test]
    fn all_masked_attributes_are_zero() {
        let cloud = GaussianCloud::with_len(3);
        let mut masks = MaskSet::new(3);
        masks.gaussian_mask_raw = vec![-9.0; 3];
        let view = apply_gaussian_masks(&cloud, &masks).unwrap();
        assert!(view.scales.iter().all(|s| *s == [0.0; 3]));
        assert!(view.opacities.iter().all(|&a| a == 0.0));
        assert!(apply_gaussian_masks(&cloud, &MaskSet::new(2)).is_err());
    }

    proptest! {
        #[test]
        fn hard_is_threshold_of_soft(raw in -20.0f64..20.0, thr in 0.01f64..0.99) {
            let m = mask_forward(raw, thr);
            prop_assert!(m.soft > 0.0 && m.soft < 1.0 || raw.abs() > 15.0);
            prop_assert_eq!(m.hard == 1.0, m.soft > thr);
        }

        #[test]
        fn lowering_a_raw_mask_never_raises_the_losses(
            raws in proptest::collection::vec(-6.0f64..6.0, 1..8),
            idx in 0usize..8,
            degree in 0usize..3,
            delta in 0.0f64..4.0,
        ) {
            let mut m = MaskSet::new(raws.len());
            m.gaussian_mask_raw = raws.clone();
            m.sh_mask_raw = raws.iter().map(|&r| [r, -r, 0.5 * r]).collect();
            let i = idx % raws.len();
            let (g0, s0) = (gaussian_prune_loss(&m), sh_prune_loss(&m));
            m.gaussian_mask_raw[i] -= delta;
            m.sh_mask_raw[i][degree] -= delta;
            prop_assert!(gaussian_prune_loss(&m) <= g0);
            prop_assert!(sh_prune_loss(&m) <= s0);
        }

        #[test]
        fn sh_masking_zeroes_exactly_the_masked_degrees(
            raws in proptest::collection::vec(proptest::array::uniform3(-4.0f64..4.0), 1..6),
        ) {
            let n = raws.len();
            let mut cloud = GaussianCloud::with_len(n);
            for sh in &mut cloud.sh_coeffs {
                for (k, c) in sh.iter_mut().enumerate() {
                    *c = [1.0 + k as f64, 2.0, 3.0];
                }
            }
            let mut masks = MaskSet::new(n);
            masks.sh_mask_raw = raws;
            let once = apply_sh_masks(&cloud, &masks).unwrap();
            prop_assert_eq!(&apply_sh_masks(&once, &masks).unwrap(), &once);
            for i in 0..n {
                for l in 1..=3 {
                    let (a, b) = sh_degree_range(l);
                    let kept = masks.sh(i, l).hard == 1.0;
                    for k in a..b {
                        prop_assert_eq!(once.sh_coeffs[i][k] == [0.0; 3], !kept);
                    }
                }
            }
        }
    }
}
