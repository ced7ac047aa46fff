//! Scene builders shared by the integration tests.
#![allow(dead_code)]

use grdo::ecvq::{BankConfig, QuantizerBank};
use grdo::gaussian::{inverse_sigmoid, GaussianCloud};
use grdo::pruning::MaskSet;
use grdo::sh::SH_C0;
use grdo::{Camera, ModelState};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Camera on the -z axis looking at the origin; camera x/y equal world x/y
/// and depth is `z + 4`.
pub fn front_camera(size: usize) -> Camera {
    Camera::look_at(
        Vector3::new(0.0, 0.0, -4.0),
        Vector3::zeros(),
        Vector3::new(0.0, -1.0, 0.0),
        50f64.to_radians(),
        size,
        size,
    )
    .unwrap()
}

/// DC coefficient producing `color` under the SH color offset.
pub fn dc_for(color: [f64; 3]) -> [f64; 3] {
    color.map(|c| (c - 0.5) / SH_C0)
}

/// World point at depth `z` (camera space) that projects onto the center
/// of pixel `(ix, iy)`.
pub fn world_at_pixel(cam: &Camera, ix: usize, iy: usize, z: f64) -> [f64; 3] {
    let x = (ix as f64 + 0.5 - cam.cx) * z / cam.fx;
    let y = (iy as f64 + 0.5 - cam.cy) * z / cam.fy;
    [x, y, z - 4.0]
}

/// Random scene with distinct depths, Gaussians placed in front of
/// `front_camera`.
pub fn random_scene(n: usize, seed: u64) -> GaussianCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cloud = GaussianCloud::with_len(n);
    for i in 0..n {
        cloud.positions[i] = [
            rng.random_range(-1.2..1.2),
            rng.random_range(-1.2..1.2),
            // Distinct depth per Gaussian.
            -1.0 + 2.0 * (i as f64 + rng.random_range(0.1..0.9)) / n as f64,
        ];
        cloud.log_scales[i] = std::array::from_fn(|_| rng.random_range(0.05f64..0.4).ln());
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        cloud.rotations[i] = q;
        cloud.opacity_logits[i] = inverse_sigmoid(rng.random_range(0.2..0.95));
        for coeff in cloud.sh_coeffs[i].iter_mut() {
            *coeff = std::array::from_fn(|_| rng.random_range(-0.4..0.4));
        }
        cloud.sh_coeffs[i][0] = std::array::from_fn(|_| rng.random_range(-1.5..1.5));
    }
    cloud
}

/// Model state as rate-distortion training would leave it: some Gaussians
/// and SH degrees pruned, codebooks sampled from the survivors, skewed
/// entropy models.
pub fn coded_state(n: usize, seed: u64) -> ModelState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0de);
    let cloud = random_scene(n, seed);
    let mut masks = MaskSet::new(n);
    for i in 0..n {
        if rng.random_bool(0.2) {
            masks.gaussian_mask_raw[i] = -5.0;
        }
        for l in 0..3 {
            if rng.random_bool(0.4) {
                masks.sh_mask_raw[i][l] = -5.0;
            }
        }
    }
    if masks.survivors().is_empty() {
        masks.gaussian_mask_raw[0] = 5.0;
    }
    let config = BankConfig {
        sizes: [16, 16, 16, 8, 8, 8],
        ..BankConfig::default()
    };
    let mut bank = QuantizerBank::init(&cloud, &masks, &config, &mut rng).unwrap();
    for q in &mut bank.quantizers {
        for w in &mut q.entropy.logits {
            *w = rng.random_range(-2.0..2.0);
        }
    }
    ModelState {
        cloud,
        masks,
        bank: Some(bank),
    }
}
