use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ecvq::BankConfig;
use crate::error::{Error, Result};

/// Training, scene and dataset settings. Read from a flat TOML file; every
/// key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,

    // Synthetic scene and cameras.
    pub scene_clusters: usize,
    pub scene_gaussians: usize,
    pub num_views: usize,
    /// Every `test_every`-th view is held out; 0 keeps all views for training.
    pub test_every: usize,
    pub width: usize,
    pub height: usize,
    pub camera_radius: f64,
    pub fov_y_deg: f64,
    pub background: [f64; 3],

    // Optimization.
    pub init_gaussians: usize,
    pub init_radius: f64,
    pub pretrain_iters: usize,
    pub rd_iters: usize,
    pub lambda_gs_prune: f64,
    pub lambda_sh_prune: f64,
    pub lambda_ssim: f64,
    /// Position learning rate decays log-linearly from `lr_position` to
    /// `lr_position_final`: the first half of the decay spans pretraining,
    /// the second half rate-distortion training.
    pub lr_position: f64,
    pub lr_position_final: f64,
    pub lr_dc: f64,
    pub lr_rest: f64,
    pub lr_opacity: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub lr_gaussian_mask: f64,
    pub lr_sh_mask: f64,
    pub lr_codebook: f64,
    pub lr_logits: f64,

    // Quantization.
    /// Sizes for scale, rotation, DC, SH1, SH2, SH3.
    pub codebook_sizes: [usize; 6],
    pub ecvq_lambdas: [f64; 6],
    /// Codebooks large enough to hold every initial attribute vector.
    pub exact_codebooks: bool,

    /// Training log cadence in iterations; 0 disables logging.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let bank = BankConfig::desk();
        TrainConfig {
            seed: 0,
            scene_clusters: 10,
            scene_gaussians: 400,
            num_views: 24,
            test_every: 8,
            width: 64,
            height: 64,
            camera_radius: 4.0,
            fov_y_deg: 50.0,
            background: [0.0; 3],
            init_gaussians: 3000,
            init_radius: 1.5,
            pretrain_iters: 3000,
            rd_iters: 1500,
            lambda_gs_prune: 0.01,
            lambda_sh_prune: 0.1,
            lambda_ssim: 0.2,
            lr_position: 0.0016,
            lr_position_final: 0.000016,
            lr_dc: 0.0025,
            lr_rest: 0.0025 / 20.0,
            lr_opacity: 0.05,
            lr_scale: 0.005,
            lr_rotation: 0.001,
            lr_gaussian_mask: 0.01,
            lr_sh_mask: 0.005,
            lr_codebook: 0.0002,
            lr_logits: 0.002,
            codebook_sizes: bank.sizes,
            ecvq_lambdas: bank.lambdas,
            exact_codebooks: false,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Position learning rate at `progress` in [0, 1] of the whole
    /// two-stage schedule.
    pub fn position_lr(&self, progress: f64) -> f64 {
        if self.lr_position == 0.0 || self.lr_position_final == 0.0 {
            return self.lr_position * (1.0 - progress) + self.lr_position_final * progress;
        }
        self.lr_position * (self.lr_position_final / self.lr_position).powf(progress.clamp(0.0, 1.0))
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("lambda_gs_prune", self.lambda_gs_prune),
            ("lambda_sh_prune", self.lambda_sh_prune),
            ("lambda_ssim", self.lambda_ssim),
            ("lr_position", self.lr_position),
            ("lr_position_final", self.lr_position_final),
            ("lr_dc", self.lr_dc),
            ("lr_rest", self.lr_rest),
            ("lr_opacity", self.lr_opacity),
            ("lr_scale", self.lr_scale),
            ("lr_rotation", self.lr_rotation),
            ("lr_gaussian_mask", self.lr_gaussian_mask),
            ("lr_sh_mask", self.lr_sh_mask),
            ("lr_codebook", self.lr_codebook),
            ("lr_logits", self.lr_logits),
            ("init_radius", self.init_radius),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.lambda_ssim > 1.0 {
            return Err(Error::Config("lambda_ssim must be <= 1".into()));
        }
        if self.ecvq_lambdas.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::Config("ecvq_lambdas must be > 0".into()));
        }
        if self.codebook_sizes.contains(&0) {
            return Err(Error::Config("codebook sizes must be >= 1".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("resolution must be nonzero".into()));
        }
        if !(self.fov_y_deg > 0.0 && self.fov_y_deg < 180.0) {
            return Err(Error::Config("fov_y_deg must be in (0, 180)".into()));
        }
        if !(self.camera_radius > 0.0) {
            return Err(Error::Config("camera_radius must be > 0".into()));
        }
        Ok(())
    }

    pub fn bank_config(&self) -> BankConfig {
        BankConfig {
            sizes: if self.exact_codebooks {
                [usize::MAX; 6]
            } else {
                self.codebook_sizes
            },
            lambdas: self.ecvq_lambdas,
        }
    }
}
