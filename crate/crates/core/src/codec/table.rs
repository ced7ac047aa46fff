//! Static probability tables shared by encoder and decoder.

use super::CodecError;

pub const PROB_BITS: u32 = 15;
pub const PROB_TOTAL: u32 = 1 << PROB_BITS;

/// Counts summing exactly to `PROB_TOTAL`, each at least 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    counts: Vec<u32>,
    /// `cum[k]` = sum of counts before `k`; one extra trailing entry.
    cum: Vec<u32>,
}

impl FrequencyTable {
    pub fn from_counts(counts: &[u16]) -> Result<Self, CodecError> {
        if counts.is_empty() {
            return Err(CodecError::InvalidTable("empty table".into()));
        }
        if counts.contains(&0) {
            return Err(CodecError::InvalidTable("zero count".into()));
        }
        let sum: u64 = counts.iter().map(|&c| c as u64).sum();
        if sum != PROB_TOTAL as u64 {
            return Err(CodecError::InvalidTable(format!("counts sum to {sum}, expected {PROB_TOTAL}")));
        }
        Ok(Self::build(counts.iter().map(|&c| c as u32).collect()))
    }

    fn build(counts: Vec<u32>) -> Self {
        let mut cum = Vec::with_capacity(counts.len() + 1);
        let mut acc = 0;
        cum.push(0);
        for &c in &counts {
            acc += c;
            cum.push(acc);
        }
        FrequencyTable { counts, cum }
    }

    pub fn uniform(n: usize) -> Self {
        Self::from_weights(&vec![1.0; n]).expect("uniform table")
    }

    /// Quantizes nonnegative weights to counts: `max(1, round(p * 2^15))`,
    /// then a deterministic correction so the total is exact. Weights that
    /// are already exact multiples of `2^-15` come back unchanged.
    pub fn from_weights(weights: &[f64]) -> Result<Self, CodecError> {
        let n = weights.len();
        if n == 0 || n > PROB_TOTAL as usize {
            return Err(CodecError::InvalidTable(format!("{n} entries")));
        }
        let sum: f64 = weights.iter().sum();
        if !sum.is_finite() || sum <= 0.0 || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(CodecError::InvalidTable("weights must be finite, nonnegative and not all zero".into()));
        }
        let target: Vec<f64> = weights.iter().map(|w| w / sum * PROB_TOTAL as f64).collect();
        let mut counts: Vec<u32> = target.iter().map(|t| (t.round() as u32).max(1)).collect();
        let mut total: i64 = counts.iter().map(|&c| c as i64).sum();
        let goal = PROB_TOTAL as i64;
        while total != goal {
            // Move one count where it costs the least relative to the target,
            // lowest index first on ties.
            let pick = if total < goal {
                (0..n).max_by(|&a, &b| {
                    let da = target[a] - counts[a] as f64;
                    let db = target[b] - counts[b] as f64;
                    da.total_cmp(&db).then(b.cmp(&a))
                })
            } else {
                (0..n).filter(|&k| counts[k] > 1).max_by(|&a, &b| {
                    let da = counts[a] as f64 - target[a];
                    let db = counts[b] as f64 - target[b];
                    da.total_cmp(&db).then(b.cmp(&a))
                })
            }
            .expect("adjustable entry");
            if total < goal {
                counts[pick] += 1;
                total += 1;
            } else {
                counts[pick] -= 1;
                total -= 1;
            }
        }
        Ok(Self::build(counts))
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn counts_u16(&self) -> Vec<u16> {
        self.counts.iter().map(|&c| c as u16).collect()
    }

    /// `(cumulative, frequency)` of `symbol`.
    pub fn interval(&self, symbol: usize) -> (u32, u32) {
        (self.cum[symbol], self.counts[symbol])
    }

    /// Symbol whose interval contains `target < PROB_TOTAL`.
    pub fn symbol_for(&self, target: u32) -> usize {
        (self.cum.partition_point(|&c| c <= target) - 1).min(self.counts.len() - 1)
    }

    pub fn probability(&self, symbol: usize) -> f64 {
        self.counts[symbol] as f64 / PROB_TOTAL as f64
    }
}
