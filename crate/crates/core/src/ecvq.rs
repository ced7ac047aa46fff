//! Entropy-constrained vector quantization.
//!
//! Six codebooks (scale, rotation, DC color and SH degrees 1-3) each carry an
//! unconditional entropy model `p = softmax(-w)` over their codewords. An
//! attribute vector `x` is assigned the codeword minimizing
//! `-ln p_m / lambda + |x - c_m|^2`. Rates are in nats.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussian::{sh_degree_range, GaussianCloud};
use crate::pruning::MaskSet;
use crate::render::QuantizedView;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttributeTag {
    Scale,
    Rotation,
    Dc,
    Sh1,
    Sh2,
    Sh3,
}

impl AttributeTag {
    pub const ALL: [AttributeTag; 6] = [
        AttributeTag::Scale,
        AttributeTag::Rotation,
        AttributeTag::Dc,
        AttributeTag::Sh1,
        AttributeTag::Sh2,
        AttributeTag::Sh3,
    ];

    pub const fn dim(self) -> usize {
        match self {
            AttributeTag::Scale | AttributeTag::Dc => 3,
            AttributeTag::Rotation => 4,
            AttributeTag::Sh1 => 9,
            AttributeTag::Sh2 => 15,
            AttributeTag::Sh3 => 21,
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            AttributeTag::Scale => "scale",
            AttributeTag::Rotation => "rotation",
            AttributeTag::Dc => "dc",
            AttributeTag::Sh1 => "sh1",
            AttributeTag::Sh2 => "sh2",
            AttributeTag::Sh3 => "sh3",
        }
    }

    /// SH degree carried by this tag, for the three higher-degree tags.
    pub const fn sh_degree(self) -> Option<usize> {
        match self {
            AttributeTag::Sh1 => Some(1),
            AttributeTag::Sh2 => Some(2),
            AttributeTag::Sh3 => Some(3),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Reads attribute `tag` of Gaussian `i`. Scales are the stored log-scales.
pub fn read_attribute(log_scales: &[[f64; 3]], rotations: &[[f64; 4]], sh: &[crate::gaussian::ShCoeffs], i: usize, tag: AttributeTag, out: &mut [f64]) {
    match tag {
        AttributeTag::Scale => out.copy_from_slice(&log_scales[i]),
        AttributeTag::Rotation => out.copy_from_slice(&rotations[i]),
        AttributeTag::Dc => out.copy_from_slice(&sh[i][0]),
        _ => {
            let (a, b) = sh_degree_range(tag.sh_degree().unwrap());
            for (k, coeff) in sh[i][a..b].iter().enumerate() {
                out[k * 3..k * 3 + 3].copy_from_slice(coeff);
            }
        }
    }
}

pub fn write_attribute(log_scales: &mut [[f64; 3]], rotations: &mut [[f64; 4]], sh: &mut [crate::gaussian::ShCoeffs], i: usize, tag: AttributeTag, values: &[f64]) {
    match tag {
        AttributeTag::Scale => log_scales[i].copy_from_slice(values),
        AttributeTag::Rotation => rotations[i].copy_from_slice(values),
        AttributeTag::Dc => sh[i][0].copy_from_slice(values),
        _ => {
            let (a, b) = sh_degree_range(tag.sh_degree().unwrap());
            for (k, coeff) in sh[i][a..b].iter_mut().enumerate() {
                coeff.copy_from_slice(&values[k * 3..k * 3 + 3]);
            }
        }
    }
}

pub fn cloud_attribute(cloud: &GaussianCloud, i: usize, tag: AttributeTag) -> Vec<f64> {
    let mut v = vec![0.0; tag.dim()];
    read_attribute(&cloud.log_scales, &cloud.rotations, &cloud.sh_coeffs, i, tag, &mut v);
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub tag: AttributeTag,
    /// `len() x tag.dim()` codewords, row-major.
    pub codewords: Vec<f64>,
}

impl Codebook {
    pub fn new(tag: AttributeTag, codewords: Vec<f64>) -> Result<Self> {
        if codewords.len() % tag.dim() != 0 {
            return Err(Error::Shape(format!(
                "{} codebook payload of {} values is not a multiple of {}",
                tag.name(),
                codewords.len(),
                tag.dim()
            )));
        }
        Ok(Codebook { tag, codewords })
    }

    pub fn dim(&self) -> usize {
        self.tag.dim()
    }

    pub fn len(&self) -> usize {
        self.codewords.len() / self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.codewords.is_empty()
    }

    pub fn codeword(&self, m: usize) -> &[f64] {
        let d = self.dim();
        &self.codewords[m * d..(m + 1) * d]
    }

    /// Up to `size` distinct vectors drawn uniformly from `population`
    /// (flattened rows of `tag.dim()` values).
    pub fn sample_from(tag: AttributeTag, population: &[f64], size: usize, rng: &mut impl Rng) -> Self {
        let d = tag.dim();
        let rows = population.len() / d;
        let mut order: Vec<usize> = (0..rows).collect();
        order.shuffle(rng);
        let mut seen = std::collections::HashSet::new();
        let mut codewords = Vec::with_capacity(size.min(rows) * d);
        for r in order {
            if codewords.len() / d >= size {
                break;
            }
            let row = &population[r * d..(r + 1) * d];
            let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
            if seen.insert(key) {
                codewords.extend_from_slice(row);
            }
        }
        Codebook { tag, codewords }
    }
}

/// Unconditional categorical model `p_j = exp(-w_j) / sum_m exp(-w_m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyModel {
    pub logits: Vec<f64>,
}

impl EntropyModel {
    pub fn uniform(m: usize) -> Self {
        EntropyModel { logits: vec![0.0; m] }
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    /// `ln sum_m exp(-w_m)`.
    fn log_partition(&self) -> f64 {
        let max = self.logits.iter().map(|w| -w).fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return max;
        }
        max + self.logits.iter().map(|w| (-w - max).exp()).sum::<f64>().ln()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let lz = self.log_partition();
        self.logits.iter().map(|w| (-w - lz).exp()).collect()
    }

    /// `-ln p_j` for every codeword.
    pub fn rates(&self) -> Vec<f64> {
        let lz = self.log_partition();
        self.logits.iter().map(|w| w + lz).collect()
    }

    /// Gradient of `sum_j counts[j] * (-ln p_j)` with respect to the logits.
    pub fn rate_grad(&self, counts: &[f64]) -> Vec<f64> {
        let total: f64 = counts.iter().sum();
        self.probabilities()
            .iter()
            .zip(counts)
            .map(|(p, c)| c - total * p)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub index: usize,
    /// `-ln p_index`, in nats.
    pub rate: f64,
    /// `|x - c_index|^2`.
    pub distortion: f64,
}

/// RD-optimal codeword for `input` given precomputed per-codeword rates.
/// Ties go to the smallest index.
pub fn select_with_rates(input: &[f64], codebook: &Codebook, rates: &[f64], lambda: f64) -> Result<Selection> {
    if codebook.is_empty() {
        return Err(Error::Domain(format!("empty {} codebook", codebook.tag.name())));
    }
    if input.len() != codebook.dim() || rates.len() != codebook.len() {
        return Err(Error::Shape(format!(
            "input of {} values, {} codebook of dim {} with {} rates",
            input.len(),
            codebook.tag.name(),
            codebook.dim(),
            rates.len()
        )));
    }
    let mut best = Selection {
        index: 0,
        rate: f64::INFINITY,
        distortion: f64::INFINITY,
    };
    let mut best_cost = f64::INFINITY;
    for (m, cw) in codebook.codewords.chunks_exact(codebook.dim()).enumerate() {
        let rate_cost = rates[m] / lambda;
        if rate_cost > best_cost {
            continue;
        }
        let mut dist = 0.0;
        for (a, b) in input.iter().zip(cw) {
            let d = a - b;
            dist += d * d;
        }
        let cost = rate_cost + dist;
        if cost < best_cost {
            best_cost = cost;
            best = Selection {
                index: m,
                rate: rates[m],
                distortion: dist,
            };
        }
    }
    if !best_cost.is_finite() {
        // Every cost was infinite (e.g. lambda -> 0 with some p = 0); fall
        // back to the most probable codeword.
        let index = (0..rates.len()).fold(0, |b, m| if rates[m] < rates[b] { m } else { b });
        let cw = codebook.codeword(index);
        best = Selection {
            index,
            rate: rates[index],
            distortion: input.iter().zip(cw).map(|(a, b)| (a - b) * (a - b)).sum(),
        };
    }
    Ok(best)
}

pub fn select(input: &[f64], codebook: &Codebook, model: &EntropyModel, lambda: f64) -> Result<Selection> {
    if model.len() != codebook.len() {
        return Err(Error::Shape("entropy model and codebook sizes differ".into()));
    }
    select_with_rates(input, codebook, &model.rates(), lambda)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quantizer {
    pub codebook: Codebook,
    pub entropy: EntropyModel,
    pub lambda: f64,
}

/// Codebook sizes and rate-distortion tradeoffs for the six tags.
#[derive(Debug, Clone, PartialEq)]
pub struct BankConfig {
    pub sizes: [usize; 6],
    pub lambdas: [f64; 6],
}

impl Default for BankConfig {
    fn default() -> Self {
        BankConfig {
            sizes: [8192, 8192, 8192, 4096, 4096, 4096],
            lambdas: [32768.0, 256.0, 256.0, 256.0, 256.0, 256.0],
        }
    }
}

impl BankConfig {
    /// Codebooks sized for scenes of a few thousand Gaussians.
    pub fn desk() -> Self {
        BankConfig {
            sizes: [2048, 2048, 2048, 512, 512, 512],
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerBank {
    pub quantizers: Vec<Quantizer>,
}

impl QuantizerBank {
    /// Codebooks sampled from the attributes of surviving Gaussians (and
    /// surviving SH degrees), uniform entropy models.
    pub fn init(cloud: &GaussianCloud, masks: &MaskSet, config: &BankConfig, rng: &mut impl Rng) -> Result<Self> {
        masks.check_size(cloud.len())?;
        let mut quantizers = Vec::with_capacity(6);
        for tag in AttributeTag::ALL {
            let t = tag.index();
            if !(config.lambdas[t] > 0.0) {
                return Err(Error::Config(format!("lambda for {} must be positive", tag.name())));
            }
            let mut population = Vec::new();
            for i in masks.survivors() {
                if let Some(l) = tag.sh_degree() {
                    if masks.sh(i, l).hard == 0.0 {
                        continue;
                    }
                }
                population.extend(cloud_attribute(cloud, i, tag));
            }
            let codebook = Codebook::sample_from(tag, &population, config.sizes[t], rng);
            let m = codebook.len();
            quantizers.push(Quantizer {
                codebook,
                entropy: EntropyModel::uniform(m),
                lambda: config.lambdas[t],
            });
        }
        Ok(QuantizerBank { quantizers })
    }

    pub fn get(&self, tag: AttributeTag) -> &Quantizer {
        &self.quantizers[tag.index()]
    }

    pub fn get_mut(&mut self, tag: AttributeTag) -> &mut Quantizer {
        &mut self.quantizers[tag.index()]
    }
}

/// One quantized attribute of one Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment {
    pub gaussian: usize,
    pub selection: Selection,
}

#[derive(Debug, Clone)]
pub struct QuantizeOutput {
    pub view: QuantizedView,
    /// Per tag, assignments in Gaussian order.
    pub assignments: Vec<Vec<Assignment>>,
    /// Number of surviving Gaussians the losses are averaged over.
    pub survivors: usize,
    pub rate_loss: f64,
    pub vq_loss: f64,
}

impl QuantizeOutput {
    /// Mean rate in nats per surviving Gaussian for one tag (not divided by
    /// lambda).
    pub fn mean_rate(&self, tag: AttributeTag) -> f64 {
        if self.survivors == 0 {
            return 0.0;
        }
        self.assignments[tag.index()].iter().map(|a| a.selection.rate).sum::<f64>() / self.survivors as f64
    }
}

/// Assigns codewords to every surviving Gaussian and SH degree, builds the
/// quantized view and the rate / VQ losses averaged over survivors.
/// Positions and opacities are never quantized.
pub fn quantize_cloud(cloud: &GaussianCloud, masks: &MaskSet, bank: &QuantizerBank) -> Result<QuantizeOutput> {
    use rayon::prelude::*;

    masks.check_size(cloud.len())?;
    let survivors = masks.survivors();
    let mut view = QuantizedView::identity(cloud);
    let mut assignments = Vec::with_capacity(6);
    let mut rate_loss = 0.0;
    let mut vq_loss = 0.0;
    for tag in AttributeTag::ALL {
        let q = bank.get(tag);
        let rates = q.entropy.rates();
        let members: Vec<usize> = survivors
            .iter()
            .copied()
            .filter(|&i| tag.sh_degree().is_none_or(|l| masks.sh(i, l).hard == 1.0))
            .collect();
        let selected: Vec<Assignment> = members
            .par_iter()
            .map(|&i| {
                let x = cloud_attribute(cloud, i, tag);
                select_with_rates(&x, &q.codebook, &rates, q.lambda).map(|selection| Assignment { gaussian: i, selection })
            })
            .collect::<Result<_>>()?;
        for a in &selected {
            rate_loss += a.selection.rate / q.lambda;
            vq_loss += a.selection.distortion;
            write_attribute(
                &mut view.log_scales,
                &mut view.rotations,
                &mut view.sh_coeffs,
                a.gaussian,
                tag,
                q.codebook.codeword(a.selection.index),
            );
        }
        assignments.push(selected);
    }
    let n = survivors.len();
    if n > 0 {
        rate_loss /= n as f64;
        vq_loss /= n as f64;
    }
    Ok(QuantizeOutput {
        view,
        assignments,
        survivors: n,
        rate_loss,
        vq_loss,
    })
}

/// Gradients of `L_rate + L_VQ`.
#[derive(Debug, Clone, PartialEq)]
pub struct EcvqGradients {
    pub log_scales: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
    pub sh_coeffs: Vec<crate::gaussian::ShCoeffs>,
    /// Per tag, flattened like the codebook.
    pub codebooks: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
}

/// `d(L_rate + L_VQ)`: the VQ term pulls inputs and codewords together
/// (`+-2 (x - c) / N`), the rate term moves the logits by the softmax
/// gradient. Index choices are treated as constants.
pub fn ecvq_backward(cloud: &GaussianCloud, bank: &QuantizerBank, out: &QuantizeOutput) -> EcvqGradients {
    let n = cloud.len();
    let mut g = EcvqGradients {
        log_scales: vec![[0.0; 3]; n],
        rotations: vec![[0.0; 4]; n],
        sh_coeffs: vec![[[0.0; 3]; 16]; n],
        codebooks: bank.quantizers.iter().map(|q| vec![0.0; q.codebook.codewords.len()]).collect(),
        logits: bank.quantizers.iter().map(|q| vec![0.0; q.entropy.len()]).collect(),
    };
    if out.survivors == 0 {
        return g;
    }
    let inv_n = 1.0 / out.survivors as f64;
    for tag in AttributeTag::ALL {
        let t = tag.index();
        let q = bank.get(tag);
        let d = tag.dim();
        let mut counts = vec![0.0; q.codebook.len()];
        let mut grad_x = vec![0.0; d];
        for a in &out.assignments[t] {
            let j = a.selection.index;
            counts[j] += 1.0;
            let x = cloud_attribute(cloud, a.gaussian, tag);
            let cw = q.codebook.codeword(j);
            for k in 0..d {
                let diff = 2.0 * (x[k] - cw[k]) * inv_n;
                grad_x[k] = diff;
                g.codebooks[t][j * d + k] -= diff;
            }
            let mut cur = vec![0.0; d];
            read_attribute(&g.log_scales, &g.rotations, &g.sh_coeffs, a.gaussian, tag, &mut cur);
            for k in 0..d {
                cur[k] += grad_x[k];
            }
            write_attribute(&mut g.log_scales, &mut g.rotations, &mut g.sh_coeffs, a.gaussian, tag, &cur);
        }
        let scale = inv_n / q.lambda;
        g.logits[t] = q.entropy.rate_grad(&counts).into_iter().map(|v| v * scale).collect();
    }
    g
}

/// Codebook restricted to the codewords referenced by `indices`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrunedCodebook {
    pub codebook: Codebook,
    /// Logits shifted so that `softmax(-w)` is renormalized over survivors.
    pub entropy: EntropyModel,
    /// `remap[old] = Some(new)` for surviving codewords.
    pub remap: Vec<Option<usize>>,
}

/// Drops codewords never referenced by `indices`, keeping ascending old
/// order, and renormalizes the probabilities over the survivors.
pub fn prune_codebook(codebook: &Codebook, model: &EntropyModel, indices: &[usize]) -> Result<PrunedCodebook> {
    let m = codebook.len();
    if model.len() != m {
        return Err(Error::Shape("entropy model and codebook sizes differ".into()));
    }
    let mut used = vec![false; m];
    for &j in indices {
        if j >= m {
            return Err(Error::Domain(format!(
                "index {j} outside {} codebook of size {m}",
                codebook.tag.name()
            )));
        }
        used[j] = true;
    }
    let mut remap = vec![None; m];
    let mut codewords = Vec::new();
    let mut logits = Vec::new();
    for j in (0..m).filter(|&j| used[j]) {
        remap[j] = Some(logits.len());
        codewords.extend_from_slice(codebook.codeword(j));
        logits.push(model.logits[j]);
    }
    if !logits.is_empty() {
        let kept = EntropyModel { logits };
        let lz = kept.log_partition();
        logits = kept.logits.iter().map(|w| w + lz).collect();
    }
    Ok(PrunedCodebook {
        codebook: Codebook {
            tag: codebook.tag,
            codewords,
        },
        entropy: EntropyModel { logits },
        remap,
    })
}
