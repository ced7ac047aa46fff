//! Trainable model state (cloud, masks, quantizer bank) and its checkpoint
//! files: the cloud as PLY plus a binary sidecar with masks and codebooks.

use std::fs;
use std::path::{Path, PathBuf};

use crate::codec::DecodedScene;
use crate::ecvq::{AttributeTag, Codebook, EntropyModel, Quantizer, QuantizerBank};
use crate::error::{Error, Result};
use crate::gaussian::GaussianCloud;
use crate::ply;
use crate::pruning::MaskSet;

const SIDECAR_MAGIC: &[u8; 4] = b"GRDS";
const SIDECAR_VERSION: u8 = 1;
/// Raw mask value used for decoded models: far from the threshold in
/// either direction.
const DECODED_MASK_RAW: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub cloud: GaussianCloud,
    pub masks: MaskSet,
    /// Present once rate-distortion training has initialized codebooks.
    pub bank: Option<QuantizerBank>,
}

impl ModelState {
    pub fn new(cloud: GaussianCloud) -> Self {
        let masks = MaskSet::new(cloud.len());
        ModelState {
            cloud,
            masks,
            bank: None,
        }
    }

    /// State that re-encodes to the same bitstream it was decoded from:
    /// masks fixed at the decoded pattern, codebooks as stored, logits
    /// from the stored counts and infinite lambda so every attribute snaps
    /// to its own codeword.
    pub fn from_decoded(decoded: &DecodedScene) -> Self {
        let n = decoded.cloud.len();
        let mut masks = MaskSet::new(n);
        masks.gaussian_mask_raw = vec![DECODED_MASK_RAW; n];
        masks.sh_mask_raw = decoded
            .sh_bits
            .iter()
            .map(|b| b.map(|k| if k { DECODED_MASK_RAW } else { -DECODED_MASK_RAW }))
            .collect();
        let quantizers = AttributeTag::ALL
            .iter()
            .map(|&tag| {
                let t = tag.index();
                Quantizer {
                    codebook: decoded.codebooks[t].clone(),
                    entropy: EntropyModel {
                        logits: decoded.counts[t].iter().map(|&c| -(c as f64).ln()).collect(),
                    },
                    lambda: f64::INFINITY,
                }
            })
            .collect();
        ModelState {
            cloud: decoded.cloud.clone(),
            masks,
            bank: Some(QuantizerBank { quantizers }),
        }
    }

    pub fn sidecar_path(ply_path: &Path) -> PathBuf {
        ply_path.with_extension("state")
    }

    /// Writes `path` (PLY) and its `.state` sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        ply::save_ply(&self.cloud, path)?;
        fs::write(Self::sidecar_path(path), self.sidecar_bytes())?;
        Ok(())
    }

    /// Loads a PLY and, when present, its sidecar. A bare PLY gets fresh
    /// masks and no codebooks.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let cloud = ply::load_ply(path)?;
        let sidecar = Self::sidecar_path(path);
        if !sidecar.exists() {
            return Ok(ModelState::new(cloud));
        }
        let (masks, bank) = parse_sidecar(&fs::read(sidecar)?, cloud.len())?;
        Ok(ModelState { cloud, masks, bank })
    }

    fn sidecar_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(SIDECAR_MAGIC);
        out.push(SIDECAR_VERSION);
        out.extend_from_slice(&(self.masks.len() as u64).to_le_bytes());
        let put = |v: f64, out: &mut Vec<u8>| out.extend_from_slice(&v.to_le_bytes());
        put(self.masks.phi_threshold, &mut out);
        put(self.masks.theta_threshold, &mut out);
        for &r in &self.masks.gaussian_mask_raw {
            put(r, &mut out);
        }
        for triple in &self.masks.sh_mask_raw {
            for &r in triple {
                put(r, &mut out);
            }
        }
        match &self.bank {
            None => out.push(0),
            Some(bank) => {
                out.push(1);
                for q in &bank.quantizers {
                    put(q.lambda, &mut out);
                    out.extend_from_slice(&(q.codebook.len() as u64).to_le_bytes());
                    for &v in &q.codebook.codewords {
                        put(v, &mut out);
                    }
                    for &w in &q.entropy.logits {
                        put(w, &mut out);
                    }
                }
            }
        }
        out
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Config("truncated state sidecar".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

fn parse_sidecar(bytes: &[u8], n: usize) -> Result<(MaskSet, Option<QuantizerBank>)> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != SIDECAR_MAGIC {
        return Err(Error::Config("state sidecar has bad magic".into()));
    }
    let version = c.take(1)?[0];
    if version != SIDECAR_VERSION {
        return Err(Error::Config(format!("unsupported state sidecar version {version}")));
    }
    let count = c.u64()? as usize;
    if count != n {
        return Err(Error::Shape(format!("state sidecar holds {count} masks, PLY has {n} Gaussians")));
    }
    let mut masks = MaskSet::new(n);
    masks.phi_threshold = c.f64()?;
    masks.theta_threshold = c.f64()?;
    masks.gaussian_mask_raw = c.f64s(n)?;
    masks.sh_mask_raw = (0..n).map(|_| Ok([c.f64()?, c.f64()?, c.f64()?])).collect::<Result<_>>()?;
    let bank = match c.take(1)?[0] {
        0 => None,
        1 => {
            let mut quantizers = Vec::with_capacity(6);
            for tag in AttributeTag::ALL {
                let lambda = c.f64()?;
                let m = c.u64()? as usize;
                if m > bytes.len() {
                    return Err(Error::Config("truncated state sidecar".into()));
                }
                let codebook = Codebook::new(tag, c.f64s(m * tag.dim())?)?;
                let logits = c.f64s(m)?;
                quantizers.push(Quantizer {
                    codebook,
                    entropy: EntropyModel { logits },
                    lambda,
                });
            }
            Some(QuantizerBank { quantizers })
        }
        other => return Err(Error::Config(format!("bad bank flag {other} in state sidecar"))),
    };
    if c.pos != bytes.len() {
        return Err(Error::Config("trailing bytes in state sidecar".into()));
    }
    Ok((masks, bank))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecvq::BankConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut cloud = GaussianCloud::with_len(20);
        for i in 0..20 {
            cloud.log_scales[i] = [i as f64 * 0.25, -1.0, 0.5];
            cloud.sh_coeffs[i][5][1] = i as f64;
        }
        let mut state = ModelState::new(cloud);
        state.masks.gaussian_mask_raw[3] = -4.0;
        state.masks.sh_mask_raw[7] = [1.5, -2.0, 0.25];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        state.bank = Some(QuantizerBank::init(&state.cloud, &state.masks, &BankConfig::desk(), &mut rng).unwrap());
        let path = dir.path().join("model.ply");
        state.save(&path).unwrap();
        assert_eq!(ModelState::load(&path).unwrap(), state);
    }

    #[test]
    fn bare_ply_gets_fresh_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bare.ply");
        ply::save_ply(&GaussianCloud::with_len(3), &path).unwrap();
        let state = ModelState::load(&path).unwrap();
        assert!(state.bank.is_none());
        assert_eq!(state.masks.len(), 3);
    }
}
