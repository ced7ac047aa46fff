use half::f16;
use rayon::prelude::*;

use super::rangecoder::{arithmetic_code, arithmetic_decode};
use super::rearrange::{cluster_bits, cluster_ranges, rearrange, remove_pruned, CLUSTERS};
use super::table::FrequencyTable;
use super::CodecError;
use crate::ecvq::{cloud_attribute, prune_codebook, select_with_rates, write_attribute, AttributeTag, Codebook};
use crate::error::{Error, Result};
use crate::gaussian::{inverse_sigmoid, GaussianCloud};
use crate::model::ModelState;

pub const MAGIC: &[u8; 4] = b"GRDO";
pub const FORMAT_VERSION: u8 = 1;
/// Magic, version, count, cluster starts, opacity range and codebook sizes.
pub const HEADER_BYTES: usize = 4 + 1 + 4 + 4 * CLUSTERS + 4 + 4 + 4 * 6;
const OPACITY_LEVELS: usize = 256;
const F16_LIMIT: f64 = 65504.0;
/// Opacities are clamped away from 0 and 1 before taking the logit.
const OPACITY_EPS: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeOptions {
    /// Largest position change from clamping to the f16 range that is
    /// accepted silently.
    pub position_tolerance: f64,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        EncodeOptions { position_tolerance: 0.0 }
    }
}

/// Index-stream bytes per attribute, each including its 4-byte length.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IndexBytes {
    pub scales: usize,
    pub rotations: usize,
    pub base_colors: usize,
    pub sh1: usize,
    pub sh2: usize,
    pub sh3: usize,
    pub opacities: usize,
}

impl IndexBytes {
    pub fn total(&self) -> usize {
        self.scales + self.rotations + self.base_colors + self.sh1 + self.sh2 + self.sh3 + self.opacities
    }

    fn slot(&mut self, tag: AttributeTag) -> &mut usize {
        match tag {
            AttributeTag::Scale => &mut self.scales,
            AttributeTag::Rotation => &mut self.rotations,
            AttributeTag::Dc => &mut self.base_colors,
            AttributeTag::Sh1 => &mut self.sh1,
            AttributeTag::Sh2 => &mut self.sh2,
            AttributeTag::Sh3 => &mut self.sh3,
        }
    }

    pub fn rows(&self) -> [(&'static str, usize); 7] {
        [
            ("scales", self.scales),
            ("rotations", self.rotations),
            ("base_colors", self.base_colors),
            ("sh1", self.sh1),
            ("sh2", self.sh2),
            ("sh3", self.sh3),
            ("opacities", self.opacities),
        ]
    }
}

/// Byte counts of the five file sections.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Composition {
    pub header: usize,
    pub indexes: IndexBytes,
    pub codebooks: usize,
    /// Probability tables.
    pub logits: usize,
    pub positions: usize,
}

impl Composition {
    pub fn total(&self) -> usize {
        self.header + self.indexes.total() + self.codebooks + self.logits + self.positions
    }

    pub fn rows(&self) -> [(&'static str, usize); 5] {
        [
            ("header", self.header),
            ("indexes", self.indexes.total()),
            ("codebooks", self.codebooks),
            ("logits", self.logits),
            ("positions", self.positions),
        ]
    }
}

/// Everything a bitstream carries, expanded.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedScene {
    /// Quantized attributes; SH degrees a Gaussian does not keep are zero.
    pub cloud: GaussianCloud,
    pub sh_bits: Vec<[bool; 3]>,
    pub cluster_starts: [u32; CLUSTERS],
    /// Pruned codebooks with f32-exact values, per tag.
    pub codebooks: Vec<Codebook>,
    /// Stored probability counts per tag.
    pub counts: Vec<Vec<u16>>,
    /// Codebook index streams per tag, in Gaussian order.
    pub indices: Vec<Vec<usize>>,
    pub opacity_levels: Vec<u8>,
    pub alpha_min: f32,
    pub alpha_step: f32,
    pub composition: Composition,
}

#[derive(Debug, Clone)]
pub struct Encoded {
    pub bytes: Vec<u8>,
    /// What the decoder will reconstruct, computed on the encoder side.
    pub committed: DecodedScene,
}

fn members(sh_bits: &[[bool; 3]], tag: AttributeTag) -> Vec<usize> {
    match tag.sh_degree() {
        None => (0..sh_bits.len()).collect(),
        Some(l) => (0..sh_bits.len()).filter(|&i| sh_bits[i][l - 1]).collect(),
    }
}

fn dequantize_opacity(alpha_min: f32, step: f32, level: u8) -> f64 {
    let alpha = alpha_min as f64 + level as f64 * step as f64;
    inverse_sigmoid(alpha.clamp(OPACITY_EPS, 1.0 - OPACITY_EPS))
}

/// Builds the quantized cloud from decoded symbols. Shared by both ends so
/// the encoder's committed model and the decoder's output agree exactly.
fn assemble(
    positions: &[[f16; 3]],
    sh_bits: &[[bool; 3]],
    codebooks: &[Codebook],
    indices: &[Vec<usize>],
    levels: &[u8],
    alpha_min: f32,
    step: f32,
) -> GaussianCloud {
    let n = positions.len();
    let mut cloud = GaussianCloud::with_len(n);
    for (i, p) in positions.iter().enumerate() {
        cloud.positions[i] = p.map(|h| h.to_f64());
        cloud.opacity_logits[i] = dequantize_opacity(alpha_min, step, levels[i]);
        cloud.sh_coeffs[i] = [[0.0; 3]; 16];
    }
    for tag in AttributeTag::ALL {
        let t = tag.index();
        for (&i, &j) in members(sh_bits, tag).iter().zip(&indices[t]) {
            write_attribute(
                &mut cloud.log_scales,
                &mut cloud.rotations,
                &mut cloud.sh_coeffs,
                i,
                tag,
                codebooks[t].codeword(j),
            );
        }
    }
    cloud
}

fn to_f16(x: f64, tolerance: f64, clamped: &mut usize) -> f16 {
    let c = x.clamp(-F16_LIMIT, F16_LIMIT);
    if (x - c).abs() > tolerance {
        *clamped += 1;
    }
    f16::from_f64(c)
}

/// Serializes a trained model. Requires a quantizer bank.
pub fn encode(state: &ModelState, options: &EncodeOptions) -> Result<Encoded> {
    state.cloud.validate()?;
    let bank = state
        .bank
        .as_ref()
        .ok_or_else(|| Error::Config("model has no codebooks; run rate-distortion training first".into()))?;
    let survivors = remove_pruned(&state.cloud, &state.masks)?;
    let grouped = rearrange(&survivors.cloud, &survivors.sh_bits)?;
    let cloud = &grouped.cloud;
    let n = cloud.len();
    if n > u32::MAX as usize {
        return Err(Error::Domain(format!("{n} Gaussians exceed the format limit")));
    }

    let mut codebooks = Vec::with_capacity(6);
    let mut indices = Vec::with_capacity(6);
    let mut tables: Vec<Option<FrequencyTable>> = Vec::with_capacity(6);
    for tag in AttributeTag::ALL {
        let q = bank.get(tag);
        let rounded = Codebook::new(tag, q.codebook.codewords.iter().map(|&v| v as f32 as f64).collect())?;
        let who = members(&grouped.sh_bits, tag);
        if !who.is_empty() && rounded.is_empty() {
            return Err(CodecError::EmptyCodebook(tag.name()).into());
        }
        let rates = q.entropy.rates();
        let chosen: Vec<usize> = who
            .par_iter()
            .map(|&i| select_with_rates(&cloud_attribute(cloud, i, tag), &rounded, &rates, q.lambda).map(|s| s.index))
            .collect::<Result<_>>()?;
        let pruned = prune_codebook(&rounded, &q.entropy, &chosen)?;
        let remapped: Vec<usize> = chosen.iter().map(|&j| pruned.remap[j].expect("used codeword")).collect();
        let table = if pruned.codebook.is_empty() {
            None
        } else {
            Some(FrequencyTable::from_weights(&pruned.entropy.probabilities())?)
        };
        codebooks.push(pruned.codebook);
        indices.push(remapped);
        tables.push(table);
    }

    let alphas: Vec<f64> = (0..n).map(|i| cloud.opacity(i)).collect();
    let lo = alphas.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = alphas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let alpha_min = lo as f32;
    let step = ((hi - alpha_min as f64) / (OPACITY_LEVELS - 1) as f64) as f32;
    let step = if step.is_finite() && step > 0.0 { step } else { 0.0 };
    let levels: Vec<u8> = alphas
        .iter()
        .map(|&a| {
            if step == 0.0 {
                0
            } else {
                ((a - alpha_min as f64) / step as f64).round().clamp(0.0, 255.0) as u8
            }
        })
        .collect();
    let mut histogram = vec![0.0; OPACITY_LEVELS];
    for &l in &levels {
        histogram[l as usize] += 1.0;
    }
    let opacity_table = FrequencyTable::from_weights(&histogram)?;

    let mut clamped = 0;
    let positions: Vec<[f16; 3]> = cloud
        .positions
        .iter()
        .map(|p| p.map(|x| to_f16(x, options.position_tolerance, &mut clamped)))
        .collect();
    if clamped > 0 {
        log::warn!("{clamped} position coordinates clamped to the f16 range");
    }

    let streams: Vec<Vec<u8>> = AttributeTag::ALL
        .par_iter()
        .map(|tag| match &tables[tag.index()] {
            Some(t) => arithmetic_code(&indices[tag.index()], t),
            None => Ok(Vec::new()),
        })
        .collect::<std::result::Result<_, _>>()?;
    let level_symbols: Vec<usize> = levels.iter().map(|&l| l as usize).collect();
    let opacity_stream = arithmetic_code(&level_symbols, &opacity_table)?;

    let mut out = Vec::new();
    let mut comp = Composition::default();
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    for s in grouped.starts {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out.extend_from_slice(&alpha_min.to_le_bytes());
    out.extend_from_slice(&step.to_le_bytes());
    for cb in &codebooks {
        out.extend_from_slice(&(cb.len() as u32).to_le_bytes());
    }
    comp.header = out.len();
    let mut counts = Vec::with_capacity(6);
    for tag in AttributeTag::ALL {
        let t = tag.index();
        let mark = out.len();
        for &v in &codebooks[t].codewords {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        comp.codebooks += out.len() - mark;
        let table_counts = tables[t].as_ref().map(|t| t.counts_u16()).unwrap_or_default();
        for &c in &table_counts {
            out.extend_from_slice(&c.to_le_bytes());
        }
        comp.logits += table_counts.len() * 2;
        counts.push(table_counts);
        out.extend_from_slice(&(streams[t].len() as u32).to_le_bytes());
        out.extend_from_slice(&streams[t]);
        *comp.indexes.slot(tag) = 4 + streams[t].len();
    }
    for c in opacity_table.counts_u16() {
        out.extend_from_slice(&c.to_le_bytes());
    }
    comp.logits += OPACITY_LEVELS * 2;
    out.extend_from_slice(&(opacity_stream.len() as u32).to_le_bytes());
    out.extend_from_slice(&opacity_stream);
    comp.indexes.opacities = 4 + opacity_stream.len();
    let mark = out.len();
    for p in &positions {
        for h in p {
            out.extend_from_slice(&h.to_le_bytes());
        }
    }
    comp.positions = out.len() - mark;
    debug_assert_eq!(comp.total(), out.len());

    let committed_cloud = assemble(&positions, &grouped.sh_bits, &codebooks, &indices, &levels, alpha_min, step);
    Ok(Encoded {
        bytes: out,
        committed: DecodedScene {
            cloud: committed_cloud,
            sh_bits: grouped.sh_bits,
            cluster_starts: grouped.starts,
            codebooks,
            counts,
            indices,
            opacity_levels: levels,
            alpha_min,
            alpha_step: step,
            composition: comp,
        },
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, section: &str) -> std::result::Result<&'a [u8], CodecError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(CodecError::Truncated {
                section: section.to_string(),
                needed: n,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, section: &str) -> std::result::Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().unwrap()))
    }

    fn f32(&mut self, section: &str) -> std::result::Result<f32, CodecError> {
        Ok(f32::from_le_bytes(self.take(4, section)?.try_into().unwrap()))
    }

    fn u16s(&mut self, n: usize, section: &str) -> std::result::Result<Vec<u16>, CodecError> {
        let raw = self.take(n.checked_mul(2).unwrap_or(usize::MAX), section)?;
        Ok(raw.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect())
    }
}

/// Parses a bitstream back into the quantized model.
pub fn decode(bytes: &[u8]) -> std::result::Result<DecodedScene, CodecError> {
    let mut r = Reader { bytes, pos: 0 };
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CodecError::BadMagic);
    }
    r.pos = MAGIC.len();
    let version = r.take(1, "version")?[0];
    if version != FORMAT_VERSION {
        return Err(CodecError::UnsupportedVersion(version));
    }
    let n = r.u32("count")?;
    // Positions alone need 6 bytes per Gaussian; rejecting impossible
    // counts here keeps a corrupt header from driving huge allocations.
    if n as usize * 6 > bytes.len() {
        return Err(CodecError::Truncated {
            section: "positions".into(),
            needed: n as usize * 6,
            available: bytes.len(),
        });
    }
    let mut starts = [0u32; CLUSTERS];
    for s in starts.iter_mut() {
        *s = r.u32("cluster starts")?;
    }
    let ranges = cluster_ranges(&starts, n).ok_or_else(|| CodecError::InconsistentClusterStarts(starts.to_vec()))?;
    let alpha_min = r.f32("opacity range")?;
    let alpha_step = r.f32("opacity range")?;
    let mut sizes = [0usize; 6];
    for s in sizes.iter_mut() {
        *s = r.u32("codebook sizes")? as usize;
    }
    let mut comp = Composition {
        header: r.pos,
        ..Composition::default()
    };

    let n = n as usize;
    let mut sh_bits = vec![[false; 3]; n];
    for (v, &(a, b)) in ranges.iter().enumerate() {
        sh_bits[a..b].iter_mut().for_each(|bits| *bits = cluster_bits(v));
    }

    let mut codebooks = Vec::with_capacity(6);
    let mut counts = Vec::with_capacity(6);
    let mut indices = Vec::with_capacity(6);
    for tag in AttributeTag::ALL {
        let t = tag.index();
        let size = sizes[t];
        let name = tag.name();
        if size > super::PROB_TOTAL as usize {
            return Err(CodecError::InvalidTable(format!("{name}: {size} codewords")));
        }
        let raw = r.take(size * tag.dim() * 4, &format!("{name} codebook"))?;
        comp.codebooks += raw.len();
        let words: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let table_counts = r.u16s(size, &format!("{name} table"))?;
        comp.logits += table_counts.len() * 2;
        let len = r.u32(&format!("{name} stream length"))? as usize;
        let stream = r.take(len, &format!("{name} stream"))?;
        *comp.indexes.slot(tag) = 4 + len;
        let count = members(&sh_bits, tag).len();
        if count > 0 && size == 0 {
            return Err(CodecError::EmptyCodebook(name));
        }
        let decoded = if size == 0 {
            Vec::new()
        } else {
            let table = FrequencyTable::from_counts(&table_counts).map_err(|e| match e {
                CodecError::InvalidTable(m) => CodecError::InvalidTable(format!("{name}: {m}")),
                other => other,
            })?;
            arithmetic_decode(stream, &table, count)
        };
        if let Some(&bad) = decoded.iter().find(|&&j| j >= size) {
            return Err(CodecError::IndexOutOfRange {
                tag: name,
                index: bad,
                size,
            });
        }
        codebooks.push(Codebook { tag, codewords: words });
        counts.push(table_counts);
        indices.push(decoded);
    }

    let opacity_counts = r.u16s(OPACITY_LEVELS, "opacity table")?;
    comp.logits += OPACITY_LEVELS * 2;
    let opacity_table = FrequencyTable::from_counts(&opacity_counts).map_err(|e| match e {
        CodecError::InvalidTable(m) => CodecError::InvalidTable(format!("opacity: {m}")),
        other => other,
    })?;
    let len = r.u32("opacity stream length")? as usize;
    let stream = r.take(len, "opacity stream")?;
    comp.indexes.opacities = 4 + len;
    let levels: Vec<u8> = arithmetic_decode(stream, &opacity_table, n).into_iter().map(|s| s as u8).collect();

    let raw = r.take(n * 6, "positions")?;
    comp.positions = raw.len();
    let positions: Vec<[f16; 3]> = raw
        .chunks_exact(6)
        .map(|c| std::array::from_fn(|k| f16::from_le_bytes([c[2 * k], c[2 * k + 1]])))
        .collect();
    if r.pos != bytes.len() {
        return Err(CodecError::TrailingBytes(bytes.len() - r.pos));
    }

    let cloud = assemble(&positions, &sh_bits, &codebooks, &indices, &levels, alpha_min, alpha_step);
    Ok(DecodedScene {
        cloud,
        sh_bits,
        cluster_starts: starts,
        codebooks,
        counts,
        indices,
        opacity_levels: levels,
        alpha_min,
        alpha_step,
        composition: comp,
    })
}
