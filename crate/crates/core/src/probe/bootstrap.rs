use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_REPLICATES: usize = 1000;
/// Redraws allowed for a replicate whose metric is undefined.
pub const MAX_REDRAWS: usize = 10;

/// Percentile bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub lo: f64,
    pub hi: f64,
    pub replicates: usize,
    /// Replicates that stayed undefined after every redraw.
    pub skipped: usize,
}

/// Groups sample indices by key, in sorted key order.
pub fn group_indices<S: AsRef<str>>(keys: &[S]) -> Vec<Vec<usize>> {
    let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        map.entry(k.as_ref()).or_default().push(i);
    }
    map.into_values().collect()
}

/// Nearest-rank percentile of sorted values: the smallest value with at least
/// `q` of the mass at or below it.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let m = sorted.len();
    let rank = ((q * m as f64).ceil() as usize).clamp(1, m);
    sorted[rank - 1]
}

fn draw(groups: &[Vec<usize>], rng: &mut impl Rng) -> Vec<usize> {
    let mut out = Vec::new();
    for _ in 0..groups.len() {
        out.extend_from_slice(&groups[rng.random_range(0..groups.len())]);
    }
    out
}

/// Bootstrap over several independent grouped sets at once. Each replicate
/// resamples the groups of every set with replacement (a group drawn twice
/// contributes its members twice) and passes one index list per set to
/// `metric`. `None` marks an undefined replicate, which is redrawn up to
/// [`MAX_REDRAWS`] times and then skipped.
pub fn bootstrap_ci_multi<F>(sets: &[Vec<Vec<usize>>], metric: F, replicates: usize, seed: u64) -> Result<BootstrapCi>
where
    F: Fn(&[Vec<usize>]) -> Option<f64> + Sync,
{
    if replicates == 0 {
        return Err(Error::invalid("replicates must be positive"));
    }
    if sets.is_empty() || sets.iter().any(|g| g.len() < 2) {
        return Err(Error::invalid("bootstrap needs at least 2 groups per set"));
    }
    let values: Vec<Option<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = seed::rng(seed::derive_index(seed, r as u64));
            (0..=MAX_REDRAWS).find_map(|_| {
                let sample: Vec<Vec<usize>> = sets.iter().map(|g| draw(g, &mut rng)).collect();
                metric(&sample).filter(|v| v.is_finite())
            })
        })
        .collect();
    let mut defined: Vec<f64> = values.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::Degenerate("every bootstrap replicate was undefined".into()));
    }
    defined.sort_by(f64::total_cmp);
    Ok(BootstrapCi {
        lo: nearest_rank(&defined, 0.025),
        hi: nearest_rank(&defined, 0.975),
        replicates,
        skipped: replicates - defined.len(),
    })
}

/// Slide-level bootstrap: `groups` holds the sample indices of each slide.
pub fn bootstrap_ci<F>(groups: &[Vec<usize>], metric: F, replicates: usize, seed: u64) -> Result<BootstrapCi>
where
    F: Fn(&[usize]) -> Option<f64> + Sync,
{
    bootstrap_ci_multi(&[groups.to_vec()], |s| metric(&s[0]), replicates, seed)
}
