//! Synthetic scenes and random initializations.

use rand::Rng;
use rand_distr::{Distribution, Normal, UnitBall, UnitSphere};

use crate::gaussian::{inverse_sigmoid, sh_degree_range, GaussianCloud};
use crate::sh::SH_C0;

/// Clusters of ellipsoids inside the unit ball. About half of the clusters
/// carry view-dependent color in SH degrees 1-3, the rest are diffuse.
pub fn synthetic_scene(clusters: usize, gaussians: usize, rng: &mut impl Rng) -> GaussianCloud {
    let clusters = clusters.max(1);
    let mut cloud = GaussianCloud::with_len(gaussians);
    let centers: Vec<[f64; 3]> = (0..clusters).map(|_| UnitBall.sample(rng).map(|v: f64| 0.8 * v)).collect();
    let colors: Vec<[f64; 3]> = (0..clusters).map(|_| std::array::from_fn(|_| rng.random_range(0.1..0.9))).collect();
    let glossy: Vec<usize> = (0..clusters).map(|k| if k % 2 == 0 { 3 } else { 0 }).collect();
    let spread = Normal::new(0.0, 0.18).unwrap();
    let jitter = Normal::new(0.0, 0.05).unwrap();
    for i in 0..gaussians {
        let k = i % clusters;
        cloud.positions[i] = std::array::from_fn(|a| centers[k][a] + spread.sample(rng));
        cloud.log_scales[i] = std::array::from_fn(|_| rng.random_range(0.02f64..0.12).ln());
        let axis: [f64; 3] = UnitSphere.sample(rng);
        let half = rng.random_range(0.0..std::f64::consts::PI) / 2.0;
        cloud.rotations[i] = [half.cos(), axis[0] * half.sin(), axis[1] * half.sin(), axis[2] * half.sin()];
        cloud.opacity_logits[i] = inverse_sigmoid(rng.random_range(0.5..0.98));
        let sh = &mut cloud.sh_coeffs[i];
        sh[0] = std::array::from_fn(|c| ((colors[k][c] + jitter.sample(rng)).clamp(0.0, 1.0) - 0.5) / SH_C0);
        let (_, end) = sh_degree_range(glossy[k]);
        for coeff in sh[1..end].iter_mut() {
            *coeff = std::array::from_fn(|_| rng.random_range(-0.25..0.25));
        }
    }
    cloud
}

/// `n` small isotropic Gaussians uniformly in a ball, gray, opacity 0.1.
pub fn random_init(n: usize, radius: f64, rng: &mut impl Rng) -> GaussianCloud {
    let mut cloud = GaussianCloud::with_len(n);
    // Mean spacing of n points in the ball.
    let spacing = radius * (4.0 / 3.0 * std::f64::consts::PI / n.max(1) as f64).cbrt();
    for i in 0..n {
        cloud.positions[i] = UnitBall.sample(rng).map(|v: f64| v * radius);
        cloud.log_scales[i] = [(0.5 * spacing).ln(); 3];
        cloud.rotations[i] = [1.0, 0.0, 0.0, 0.0];
        cloud.opacity_logits[i] = inverse_sigmoid(0.1);
        cloud.sh_coeffs[i] = [[0.0; 3]; 16];
        cloud.sh_coeffs[i][0] = std::array::from_fn(|_| rng.random_range(-0.2..0.2));
    }
    cloud
}
