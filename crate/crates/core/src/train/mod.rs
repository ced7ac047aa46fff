//! Two-stage optimization: a plain fit against the reference views, then
//! rate-distortion training with pruning masks and vector quantization.

mod adam;
mod config;
mod dataset;
mod loss;
pub mod scene;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use adam::Adam;
pub use config::TrainConfig;
pub use dataset::{Dataset, View};
pub use loss::{render_loss, total_loss, LossComponents, RenderLoss};

use crate::codec::{self, EncodeOptions, Encoded};
use crate::ecvq::{ecvq_backward, quantize_cloud, AttributeTag, QuantizerBank};
use crate::error::{Error, Result};
use crate::gaussian::{GaussianCloud, ShCoeffs};
use crate::metrics::metrics;
use crate::model::ModelState;
use crate::pruning::{gaussian_prune_loss, gaussian_prune_loss_grad, sh_prune_loss, sh_prune_loss_grad, MaskSet};
use crate::render::{render, render_backward, QuantizedView, RenderOptions};

// Separate random streams for the two stages so changing one stage's
// iteration count does not perturb the other.
const PRETRAIN_STREAM: u64 = 0x5052_4554;
const RD_STREAM: u64 = 0x5244_5452;

/// One row of the CSV training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRow {
    pub stage: String,
    pub iter: usize,
    pub total: f64,
    pub render: f64,
    pub l1: f64,
    pub d_ssim: f64,
    pub gs_prune: f64,
    pub sh_prune: f64,
    pub rate: f64,
    pub vq: f64,
    pub survivors: usize,
    pub gaussian_prune_ratio: f64,
    pub sh_prune_ratio: f64,
    pub psnr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Config(e.to_string()))?;
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::Config(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn should_log(config: &TrainConfig, it: usize, total: usize) -> bool {
    config.log_every > 0 && (it % config.log_every == 0 || it + 1 == total)
}

fn render_options(config: &TrainConfig) -> RenderOptions {
    RenderOptions {
        background: config.background,
        ..RenderOptions::default()
    }
}

/// Optimizers for the raw Gaussian attributes.
struct AttributeOptimizers {
    position: Adam,
    scale: Adam,
    rotation: Adam,
    opacity: Adam,
    sh: Adam,
    lr_dc: f64,
    lr_rest: f64,
}

/// Attribute gradients in the cloud's layout.
struct AttributeGrads<'a> {
    positions: &'a [[f64; 3]],
    log_scales: &'a [[f64; 3]],
    rotations: &'a [[f64; 4]],
    opacity_logits: &'a [f64],
    sh_coeffs: &'a [ShCoeffs],
}

impl AttributeOptimizers {
    fn new(config: &TrainConfig, n: usize) -> Self {
        AttributeOptimizers {
            position: Adam::new(config.lr_position, n * 3),
            scale: Adam::new(config.lr_scale, n * 3),
            rotation: Adam::new(config.lr_rotation, n * 4),
            opacity: Adam::new(config.lr_opacity, n),
            sh: Adam::new(config.lr_dc, n * 48),
            lr_dc: config.lr_dc,
            lr_rest: config.lr_rest,
        }
    }

    fn step(&mut self, cloud: &mut GaussianCloud, g: &AttributeGrads) {
        self.position.step(cloud.positions.as_flattened_mut(), g.positions.as_flattened());
        self.scale.step(cloud.log_scales.as_flattened_mut(), g.log_scales.as_flattened());
        self.rotation.step(cloud.rotations.as_flattened_mut(), g.rotations.as_flattened());
        self.opacity.step(&mut cloud.opacity_logits, g.opacity_logits);
        let (dc, rest) = (self.lr_dc, self.lr_rest);
        self.sh.step_with(
            cloud.sh_coeffs.as_flattened_mut().as_flattened_mut(),
            g.sh_coeffs.as_flattened().as_flattened(),
            |k| if (k / 3) % 16 == 0 { dc } else { rest },
        );
    }
}

fn sample_view<'a>(train: &[&'a View], rng: &mut ChaCha8Rng) -> &'a View {
    train[rng.random_range(0..train.len())]
}

/// Fits raw attributes to the training views with the photometric loss
/// only. No densification: the Gaussian count stays that of `init`.
pub fn pretrain(init: GaussianCloud, dataset: &Dataset, config: &TrainConfig, mut log: Option<&mut TrainLog>) -> Result<GaussianCloud> {
    config.validate()?;
    dataset.validate()?;
    let mut cloud = init;
    cloud.validate()?;
    let train: Vec<&View> = dataset.train().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ PRETRAIN_STREAM);
    let mut opt = AttributeOptimizers::new(config, cloud.len());
    let options = render_options(config);
    for it in 0..config.pretrain_iters {
        opt.position.lr = config.position_lr(0.5 * it as f64 / config.pretrain_iters as f64);
        let view = sample_view(&train, &mut rng);
        let (img, tape) = render(&cloud, &view.camera, None, None, &options)?;
        let rl = render_loss(&img, &view.image, config.lambda_ssim)?;
        if !rl.value.is_finite() {
            return Err(Error::NonFinite("render"));
        }
        let g = render_backward(&tape, &rl.grad)?;
        opt.step(
            &mut cloud,
            &AttributeGrads {
                positions: &g.positions,
                log_scales: &g.log_scales,
                rotations: &g.rotations,
                opacity_logits: &g.opacity_logits,
                sh_coeffs: &g.sh_coeffs,
            },
        );
        if let Some(log) = log.as_deref_mut() {
            if should_log(config, it, config.pretrain_iters) {
                log.rows.push(LogRow {
                    stage: "pretrain".into(),
                    iter: it,
                    total: rl.value,
                    render: rl.value,
                    l1: rl.l1,
                    d_ssim: rl.d_ssim,
                    gs_prune: 0.0,
                    sh_prune: 0.0,
                    rate: 0.0,
                    vq: 0.0,
                    survivors: cloud.len(),
                    gaussian_prune_ratio: 0.0,
                    sh_prune_ratio: 0.0,
                    psnr: metrics(&img, &view.image)?.psnr,
                });
            }
        }
    }
    Ok(cloud)
}

/// Unit-norm quaternions with nonnegative real part, so that `q` and `-q`
/// share codewords.
pub fn canonicalize_rotations(cloud: &mut GaussianCloud) -> Result<()> {
    for q in cloud.rotations.iter_mut() {
        let mut u = crate::gaussian::normalize_quat(*q)?;
        if u[0] < 0.0 {
            u = u.map(|v| -v);
        }
        *q = u;
    }
    Ok(())
}

/// Rate-distortion training from a fitted cloud. Masked Gaussians stay in
/// the model (and may come back) until encoding removes them.
pub fn rd_train(cloud: GaussianCloud, dataset: &Dataset, config: &TrainConfig, mut log: Option<&mut TrainLog>) -> Result<ModelState> {
    config.validate()?;
    dataset.validate()?;
    let mut cloud = cloud;
    cloud.validate()?;
    if cloud.is_empty() {
        return Err(Error::EmptyScene);
    }
    canonicalize_rotations(&mut cloud)?;
    let n = cloud.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ RD_STREAM);
    let mut masks = MaskSet::new(n);
    let mut bank = QuantizerBank::init(&cloud, &masks, &config.bank_config(), &mut rng)?;

    let train: Vec<&View> = dataset.train().collect();
    let options = render_options(config);
    let mut opt = AttributeOptimizers::new(config, n);
    let mut gaussian_mask_opt = Adam::new(config.lr_gaussian_mask, n);
    let mut sh_mask_opt = Adam::new(config.lr_sh_mask, n * 3);
    let mut codebook_opts: Vec<Adam> = bank
        .quantizers
        .iter()
        .map(|q| Adam::new(config.lr_codebook, q.codebook.codewords.len()))
        .collect();
    let mut logit_opts: Vec<Adam> = bank
        .quantizers
        .iter()
        .map(|q| Adam::new(config.lr_logits, q.entropy.len()))
        .collect();

    for it in 0..config.rd_iters {
        opt.position.lr = config.position_lr(0.5 + 0.5 * it as f64 / config.rd_iters as f64);
        let view = sample_view(&train, &mut rng);
        let quant = quantize_cloud(&cloud, &masks, &bank)?;
        let (img, tape) = render(&cloud, &view.camera, Some(&masks), Some(&quant.view), &options)?;
        let rl = render_loss(&img, &view.image, config.lambda_ssim)?;
        let components = LossComponents {
            gs_prune: gaussian_prune_loss(&masks),
            sh_prune: sh_prune_loss(&masks),
            rate: quant.rate_loss,
            vq: quant.vq_loss,
            render: rl.value,
        };
        let total = total_loss(&components, config.lambda_gs_prune, config.lambda_sh_prune)?;

        let g = render_backward(&tape, &rl.grad)?;
        let eg = ecvq_backward(&cloud, &bank, &quant);

        // Straight-through: rendering gradients with respect to quantized
        // values land on the raw attributes, plus the VQ pull.
        let mut log_scales = g.log_scales;
        let mut rotations = g.rotations;
        let mut sh_coeffs = g.sh_coeffs;
        add_into(log_scales.as_flattened_mut(), eg.log_scales.as_flattened());
        add_into(rotations.as_flattened_mut(), eg.rotations.as_flattened());
        add_into(
            sh_coeffs.as_flattened_mut().as_flattened_mut(),
            eg.sh_coeffs.as_flattened().as_flattened(),
        );

        let gs_prune_grad = gaussian_prune_loss_grad(&masks);
        let sh_prune_grad = sh_prune_loss_grad(&masks);
        let gaussian_mask_grad: Vec<f64> = (0..n)
            .map(|i| g.gaussian_mask[i] * masks.gaussian(i).ste_grad + config.lambda_gs_prune * gs_prune_grad[i])
            .collect();
        let sh_mask_grad: Vec<f64> = (0..n)
            .flat_map(|i| {
                let render_part = g.sh_mask[i];
                let masks = &masks;
                (0..3).map(move |l| render_part[l] * masks.sh(i, l + 1).ste_grad)
            })
            .zip(sh_prune_grad.as_flattened())
            .map(|(r, p)| r + config.lambda_sh_prune * p)
            .collect();

        if let Some(log) = log.as_deref_mut() {
            if should_log(config, it, config.rd_iters) {
                log.rows.push(LogRow {
                    stage: "rd".into(),
                    iter: it,
                    total,
                    render: rl.value,
                    l1: rl.l1,
                    d_ssim: rl.d_ssim,
                    gs_prune: components.gs_prune,
                    sh_prune: components.sh_prune,
                    rate: components.rate,
                    vq: components.vq,
                    survivors: quant.survivors,
                    gaussian_prune_ratio: masks.gaussian_prune_ratio(),
                    sh_prune_ratio: masks.sh_prune_ratio(),
                    psnr: metrics(&img, &view.image)?.psnr,
                });
            }
        }

        opt.step(
            &mut cloud,
            &AttributeGrads {
                positions: &g.positions,
                log_scales: &log_scales,
                rotations: &rotations,
                opacity_logits: &g.opacity_logits,
                sh_coeffs: &sh_coeffs,
            },
        );
        gaussian_mask_opt.step(&mut masks.gaussian_mask_raw, &gaussian_mask_grad);
        sh_mask_opt.step(masks.sh_mask_raw.as_flattened_mut(), &sh_mask_grad);
        for tag in AttributeTag::ALL {
            let t = tag.index();
            let q = bank.get_mut(tag);
            codebook_opts[t].step(&mut q.codebook.codewords, &eg.codebooks[t]);
            logit_opts[t].step(&mut q.entropy.logits, &eg.logits[t]);
        }
    }
    Ok(ModelState {
        cloud,
        masks,
        bank: Some(bank),
    })
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Moves the scene centroid to the origin, shifting the cameras so every
/// view is unchanged. Returns the removed offset.
pub fn recenter(cloud: &mut GaussianCloud, dataset: &mut Dataset) -> [f64; 3] {
    if cloud.is_empty() {
        return [0.0; 3];
    }
    let n = cloud.len() as f64;
    let c: [f64; 3] = std::array::from_fn(|a| cloud.positions.iter().map(|p| p[a]).sum::<f64>() / n);
    for p in cloud.positions.iter_mut() {
        for a in 0..3 {
            p[a] -= c[a];
        }
    }
    let offset = nalgebra::Vector3::from(c);
    for v in dataset.views.iter_mut() {
        v.camera.translation += v.camera.rotation * offset;
    }
    c
}

/// Mean image metrics over a set of views.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalSummary {
    pub psnr: f64,
    pub ssim: f64,
    pub l1: f64,
}

pub fn evaluate(
    cloud: &GaussianCloud,
    masks: Option<&MaskSet>,
    quantized: Option<&QuantizedView>,
    views: &[&View],
    background: [f64; 3],
) -> Result<EvalSummary> {
    if views.is_empty() {
        return Err(Error::Config("no views to evaluate".into()));
    }
    let options = RenderOptions {
        background,
        ..RenderOptions::default()
    };
    let mut sum = EvalSummary {
        psnr: 0.0,
        ssim: 0.0,
        l1: 0.0,
    };
    for v in views {
        let (img, _) = render(cloud, &v.camera, masks, quantized, &options)?;
        let m = metrics(&img, &v.image)?;
        sum.psnr += m.psnr;
        sum.ssim += m.ssim;
        sum.l1 += m.l1;
    }
    let k = views.len() as f64;
    Ok(EvalSummary {
        psnr: sum.psnr / k,
        ssim: sum.ssim / k,
        l1: sum.l1 / k,
    })
}

/// Quantized model as seen during training: masks applied and attributes
/// replaced by their codewords.
pub fn evaluate_state(state: &ModelState, views: &[&View], background: [f64; 3]) -> Result<EvalSummary> {
    match &state.bank {
        Some(bank) => {
            let quant = quantize_cloud(&state.cloud, &state.masks, bank)?;
            evaluate(&state.cloud, Some(&state.masks), Some(&quant.view), views, background)
        }
        None => evaluate(&state.cloud, Some(&state.masks), None, views, background),
    }
}

/// Result of training and encoding one rate point.
#[derive(Debug, Clone)]
pub struct RatePoint {
    pub lambda_gs_prune: f64,
    pub lambda_sh_prune: f64,
    pub state: ModelState,
    pub encoded: Encoded,
    /// Metrics of the decoded model on the held-out views.
    pub eval: EvalSummary,
}

impl RatePoint {
    pub fn survivors(&self) -> usize {
        self.state.masks.survivors().len()
    }
}

/// `rd_train` from `pretrained` at the given pruning weights, then encode
/// and evaluate the decoded model.
pub fn train_rate_point(
    pretrained: &GaussianCloud,
    dataset: &Dataset,
    config: &TrainConfig,
    lambda_gs_prune: f64,
    lambda_sh_prune: f64,
    log: Option<&mut TrainLog>,
) -> Result<RatePoint> {
    let cfg = TrainConfig {
        lambda_gs_prune,
        lambda_sh_prune,
        ..config.clone()
    };
    let state = rd_train(pretrained.clone(), dataset, &cfg, log)?;
    let encoded = codec::encode(&state, &EncodeOptions::default())?;
    let eval = evaluate(&encoded.committed.cloud, None, None, &dataset.test(), config.background)?;
    Ok(RatePoint {
        lambda_gs_prune,
        lambda_sh_prune,
        state,
        encoded,
        eval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Camera;
    use crate::gaussian::inverse_sigmoid;
    use crate::image::RenderedImage;

    fn single_gaussian_dataset(size: usize) -> (GaussianCloud, Dataset) {
        let mut target = GaussianCloud::with_len(1);
        target.log_scales[0] = [0.3f64.ln(), 0.2f64.ln(), 0.25f64.ln()];
        target.opacity_logits[0] = inverse_sigmoid(0.8);
        target.sh_coeffs[0][0] = [1.2, -0.4, 0.3];
        let cfg = TrainConfig {
            num_views: 6,
            test_every: 0,
            width: size,
            height: size,
            ..TrainConfig::default()
        };
        let ds = Dataset::from_scene(&target, &cfg).unwrap();
        (target, ds)
    }

    #[test]
    fn zero_iterations_return_init() {
        let (target, ds) = single_gaussian_dataset(16);
        let cfg = TrainConfig {
            pretrain_iters: 0,
            ..TrainConfig::default()
        };
        assert_eq!(pretrain(target.clone(), &ds, &cfg, None).unwrap(), target);
    }

    #[test]
    fn empty_dataset_rejected() {
        let ds = Dataset { views: vec![] };
        assert!(pretrain(GaussianCloud::with_len(1), &ds, &TrainConfig::default(), None).is_err());
        let only_test = Dataset {
            views: vec![View {
                name: "a".into(),
                camera: Camera::orbit(1, 3.0, 0.8, 4, 4).unwrap().remove(0),
                image: RenderedImage::new(4, 4),
                test: true,
            }],
        };
        assert!(pretrain(GaussianCloud::with_len(1), &only_test, &TrainConfig::default(), None).is_err());
    }

    #[test]
    fn canonical_rotations() {
        let mut c = GaussianCloud::with_len(2);
        c.rotations[0] = [-2.0, 0.0, 0.0, 0.0];
        c.rotations[1] = [0.0, 0.0, 3.0, 4.0];
        canonicalize_rotations(&mut c).unwrap();
        assert_eq!(c.rotations[0], [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(c.rotations[1], [0.0, 0.0, 0.6, 0.8]);
    }

    #[test]
    fn recenter_preserves_views() {
        let (mut cloud, mut ds) = single_gaussian_dataset(16);
        for p in cloud.positions.iter_mut() {
            *p = [1000.0, -2000.0, 500.0];
        }
        let before: Vec<_> = ds.views.iter().map(|v| v.camera.world_to_camera(&nalgebra::Vector3::from(cloud.positions[0]))).collect();
        let offset = recenter(&mut cloud, &mut ds);
        assert_eq!(offset, [1000.0, -2000.0, 500.0]);
        assert_eq!(cloud.positions[0], [0.0; 3]);
        for (v, b) in ds.views.iter().zip(before) {
            assert!((v.camera.world_to_camera(&nalgebra::Vector3::zeros()) - b).norm() < 1e-9);
        }
    }
}
