//! Cluster-based data rebalancing: spherical (cosine) k-means over patch
//! embeddings followed by drawing a fixed number of patches per cluster.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// A fitted spherical k-means model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    /// `k x d`, unit-norm rows.
    pub centroids: Array2<f64>,
    /// Sum of cosine distances of the training rows to their centroids.
    pub inertia: f64,
    /// Final assignment of each training row.
    pub assignments: Vec<usize>,
    /// Inertia after the initial assignment and after every Lloyd step.
    pub inertia_history: Vec<f64>,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.ncols()
    }
}

/// L2-normalises every row; zero rows are an error.
pub fn normalize_rows(x: ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut out = x.to_owned();
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let n = row.dot(&row).sqrt();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::invalid(format!("embedding row {i} has zero or non-finite norm")));
        }
        row.mapv_inplace(|v| v / n);
    }
    Ok(out)
}

// Best centroid by dot product; ties go to the lowest id.
fn nearest(row: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (j, c) in centroids.axis_iter(Axis(0)).enumerate() {
        let s = row.dot(&c);
        if s > best.1 {
            best = (j, s);
        }
    }
    best
}

fn assign_normalized(x: &Array2<f64>, centroids: &Array2<f64>) -> Vec<(usize, f64)> {
    (0..x.nrows())
        .into_par_iter()
        .map(|i| nearest(x.row(i), centroids))
        .collect()
}

fn inertia_of(assigned: &[(usize, f64)]) -> f64 {
    assigned.iter().map(|(_, s)| (1.0 - s).max(0.0)).sum()
}

fn kmeans_pp(x: &Array2<f64>, k: usize, rng: &mut impl Rng) -> Array2<f64> {
    let n = x.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut dist: Vec<f64> = (0..n)
        .map(|i| (1.0 - x.row(i).dot(&x.row(chosen[0]))).max(0.0))
        .collect();
    while chosen.len() < k {
        let weights: Vec<f64> = dist.iter().map(|d| d * d).collect();
        let next = match WeightedIndex::new(&weights) {
            Ok(w) => w.sample(rng),
            // every remaining point coincides with a centre: pick any unused row
            Err(_) => {
                let unused: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
                unused[rng.random_range(0..unused.len())]
            }
        };
        chosen.push(next);
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min((1.0 - x.row(i).dot(&x.row(next))).max(0.0));
        }
    }
    let mut c = Array2::zeros((k, x.ncols()));
    for (j, &i) in chosen.iter().enumerate() {
        c.row_mut(j).assign(&x.row(i));
    }
    c
}

fn update_centroids(x: &Array2<f64>, assigned: &[(usize, f64)], centroids: &mut Array2<f64>) {
    let k = centroids.nrows();
    let mut sums = Array2::<f64>::zeros(centroids.raw_dim());
    let mut counts = vec![0usize; k];
    for (i, &(j, _)) in assigned.iter().enumerate() {
        sums.row_mut(j).scaled_add(1.0, &x.row(i));
        counts[j] += 1;
    }
    // Re-seed empty clusters from the points farthest from their centroid.
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    order.sort_by(|&a, &b| assigned[a].1.total_cmp(&assigned[b].1).then(a.cmp(&b)));
    let mut far = order.into_iter();
    for j in 0..k {
        if counts[j] == 0 {
            if let Some(i) = far.next() {
                centroids.row_mut(j).assign(&x.row(i));
            }
            continue;
        }
        let n = sums.row(j).dot(&sums.row(j)).sqrt();
        if n > 0.0 {
            centroids.row_mut(j).assign(&(&sums.row(j) / n));
        }
    }
}

/// Spherical k-means: rows are L2-normalised, seeded with k-means++, then
/// Lloyd iterations assign by maximum dot product and renormalise centroid
/// means until assignments stop changing or `max_iters` is reached.
pub fn cosine_kmeans(embeddings: ArrayView2<f64>, k: usize, max_iters: usize, seed: u64) -> Result<ClusterModel> {
    let n = embeddings.nrows();
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k > n {
        return Err(Error::invalid(format!("k = {k} exceeds the number of rows {n}")));
    }
    let x = normalize_rows(embeddings)?;
    let mut rng = seed::rng(seed);
    let mut centroids = kmeans_pp(&x, k, &mut rng);
    let mut assigned = assign_normalized(&x, &centroids);
    let mut history = vec![inertia_of(&assigned)];
    for _ in 0..max_iters {
        update_centroids(&x, &assigned, &mut centroids);
        let next = assign_normalized(&x, &centroids);
        history.push(inertia_of(&next));
        let unchanged = next.iter().zip(&assigned).all(|(a, b)| a.0 == b.0);
        assigned = next;
        if unchanged {
            break;
        }
    }
    Ok(ClusterModel {
        centroids,
        inertia: *history.last().expect("non-empty"),
        assignments: assigned.into_iter().map(|(j, _)| j).collect(),
        inertia_history: history,
    })
}

/// Assigns each row to the centroid with the largest cosine similarity.
pub fn assign(model: &ClusterModel, embeddings: ArrayView2<f64>) -> Result<Vec<usize>> {
    if embeddings.ncols() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            actual: embeddings.ncols(),
        });
    }
    let x = normalize_rows(embeddings)?;
    Ok(assign_normalized(&x, &model.centroids).into_iter().map(|(j, _)| j).collect())
}

/// Splits `total` into `groups` quotas that differ by at most one, giving the
/// remainder to the first groups.
pub fn quotas(groups: usize, total: usize) -> Vec<usize> {
    let base = total / groups;
    let rem = total % groups;
    (0..groups).map(|g| base + usize::from(g < rem)).collect()
}

/// Draws `quota` members from `members`: without replacement when enough are
/// available, otherwise uniformly with replacement.
pub(crate) fn draw_members(members: &[usize], quota: usize, rng: &mut impl Rng) -> Vec<usize> {
    if members.len() >= quota {
        let mut picked: Vec<usize> = index::sample(rng, members.len(), quota).into_iter().map(|i| members[i]).collect();
        picked.sort_unstable();
        picked
    } else {
        (0..quota).map(|_| members[rng.random_range(0..members.len())]).collect()
    }
}

/// Selects `total` row indices with an equal quota per non-empty cluster.
pub fn balanced_sample(assignments: &[usize], total: usize, seed: u64) -> Result<Vec<usize>> {
    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in assignments.iter().enumerate() {
        clusters.entry(c).or_default().push(i);
    }
    if clusters.is_empty() || total < clusters.len() {
        return Err(Error::invalid(format!(
            "total {total} is smaller than the number of non-empty clusters {}",
            clusters.len()
        )));
    }
    let mut rng = seed::rng(seed);
    let q = quotas(clusters.len(), total);
    Ok(clusters
        .values()
        .zip(q)
        .flat_map(|(members, quota)| draw_members(members, quota, &mut rng))
        .collect())
}

/// Writes selected ids one per line.
pub fn write_id_list(path: &Path, ids: &[String]) -> Result<()> {
    let mut text = String::with_capacity(ids.len() * 16);
    for id in ids {
        text.push_str(id);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a line-delimited id list, skipping blank lines.
pub fn read_id_list(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}
