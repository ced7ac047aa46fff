//! Removal of pruned Gaussians and grouping by SH mask pattern.

use crate::error::{Error, Result};
use crate::gaussian::{sh_degree_range, GaussianCloud};
use crate::pruning::MaskSet;

pub const CLUSTERS: usize = 8;

/// Surviving Gaussians in original order, with kept SH degrees zeroed
/// where their mask is off.
#[derive(Debug, Clone, PartialEq)]
pub struct Survivors {
    pub cloud: GaussianCloud,
    /// Kept flags for SH degrees 1, 2, 3.
    pub sh_bits: Vec<[bool; 3]>,
    /// Index of each survivor in the input cloud.
    pub source: Vec<usize>,
}

pub fn remove_pruned(cloud: &GaussianCloud, masks: &MaskSet) -> Result<Survivors> {
    masks.check_size(cloud.len())?;
    let source = masks.survivors();
    if source.is_empty() {
        return Err(Error::EmptyScene);
    }
    let mut kept = cloud.select(&source);
    let sh_bits: Vec<[bool; 3]> = source.iter().map(|&i| masks.sh_bits(i)).collect();
    for (sh, bits) in kept.sh_coeffs.iter_mut().zip(&sh_bits) {
        for l in 1..=3 {
            if !bits[l - 1] {
                let (a, b) = sh_degree_range(l);
                sh[a..b].iter_mut().for_each(|c| *c = [0.0; 3]);
            }
        }
    }
    Ok(Survivors {
        cloud: kept,
        sh_bits,
        source,
    })
}

/// Mask triple for degrees (1, 2, 3) read as a 3-bit number, degree 1 most
/// significant.
pub fn cluster_of(bits: [bool; 3]) -> usize {
    (bits[0] as usize) << 2 | (bits[1] as usize) << 1 | bits[2] as usize
}

pub fn cluster_bits(v: usize) -> [bool; 3] {
    [v & 4 != 0, v & 2 != 0, v & 1 != 0]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rearranged {
    pub cloud: GaussianCloud,
    pub sh_bits: Vec<[bool; 3]>,
    /// `starts[v]` is the first position of cluster `v`; empty clusters take
    /// the start of the next nonempty one (or the total count).
    pub starts: [u32; CLUSTERS],
    /// `order[k]` is the input position placed at `k`.
    pub order: Vec<usize>,
}

/// Stable sort by cluster id.
pub fn rearrange(cloud: &GaussianCloud, sh_bits: &[[bool; 3]]) -> Result<Rearranged> {
    if sh_bits.len() != cloud.len() {
        return Err(Error::Shape(format!("{} mask triples for {} Gaussians", sh_bits.len(), cloud.len())));
    }
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    order.sort_by_key(|&i| cluster_of(sh_bits[i]));
    let mut sizes = [0u32; CLUSTERS];
    for b in sh_bits {
        sizes[cluster_of(*b)] += 1;
    }
    let starts = starts_from_sizes(&sizes);
    Ok(Rearranged {
        cloud: cloud.select(&order),
        sh_bits: order.iter().map(|&i| sh_bits[i]).collect(),
        starts,
        order,
    })
}

fn starts_from_sizes(sizes: &[u32; CLUSTERS]) -> [u32; CLUSTERS] {
    let mut starts = [0u32; CLUSTERS];
    let mut acc = 0;
    for v in 0..CLUSTERS {
        starts[v] = acc;
        acc += sizes[v];
    }
    starts
}

/// Cluster extents `[start, end)` implied by the stored starts, after
/// checking they are nondecreasing, begin at 0 and stay within `total`.
pub fn cluster_ranges(starts: &[u32; CLUSTERS], total: u32) -> Option<[(usize, usize); CLUSTERS]> {
    if starts[0] != 0 || starts.windows(2).any(|w| w[0] > w[1]) || starts[CLUSTERS - 1] > total {
        return None;
    }
    let mut ranges = [(0, 0); CLUSTERS];
    for v in 0..CLUSTERS {
        let end = if v + 1 < CLUSTERS { starts[v + 1] } else { total };
        ranges[v] = (starts[v] as usize, end as usize);
    }
    Some(ranges)
}
