use std::collections::BTreeMap;

use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::auc::auc_macro;
use super::logreg::train_logreg;
use crate::error::{Error, Result};
use crate::seed;

pub const N_FOLDS: usize = 5;
pub const GRID_SIZE: usize = 10;

/// Ten log-uniformly spaced inverse regularisation strengths from `1e-4` to
/// `1e4` inclusive.
pub fn inverse_reg_grid() -> [f64; GRID_SIZE] {
    std::array::from_fn(|i| match i {
        0 => 1e-4,
        9 => 1e4,
        _ => 10f64.powf(-4.0 + 8.0 * i as f64 / 9.0),
    })
}

/// Assigns every sample the fold of its slide. Slides are shuffled and dealt
/// round-robin so fold sizes differ by at most one slide. When every slide is
/// label-pure, slides are dealt class by class so each fold sees every class
/// where possible.
pub fn slide_folds<S: AsRef<str>>(slides: &[S], labels: &[usize], n_folds: usize, seed: u64) -> Result<Vec<usize>> {
    if slides.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: slides.len(),
            actual: labels.len(),
        });
    }
    let mut slide_labels: BTreeMap<&str, Option<usize>> = BTreeMap::new();
    let mut pure = true;
    for (s, &l) in slides.iter().zip(labels) {
        let e = slide_labels.entry(s.as_ref()).or_insert(Some(l));
        if *e != Some(l) {
            pure = false;
            *e = None;
        }
    }
    if slide_labels.len() < n_folds {
        return Err(Error::invalid(format!(
            "cross-validation needs at least {n_folds} slides, got {}",
            slide_labels.len()
        )));
    }
    let mut rng = seed::rng(seed);
    let mut order: Vec<&str> = Vec::with_capacity(slide_labels.len());
    if pure {
        let mut by_class: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
        for (s, l) in &slide_labels {
            by_class.entry(l.expect("pure")).or_default().push(s);
        }
        for mut group in by_class.into_values() {
            group.shuffle(&mut rng);
            order.extend(group);
        }
    } else {
        order.extend(slide_labels.keys());
        order.shuffle(&mut rng);
    }
    let fold_of: BTreeMap<&str, usize> = order.iter().enumerate().map(|(i, s)| (*s, i % n_folds)).collect();
    Ok(slides.iter().map(|s| fold_of[s.as_ref()]).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub inverse_reg: f64,
    pub grid: Vec<f64>,
    /// Mean held-out macro AUC per grid value over the usable folds.
    pub mean_auc: Vec<Option<f64>>,
}

fn select_rows<T: Copy>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i]).collect()
}

/// Picks the grid value with the best mean held-out macro AUC over slide
/// grouped folds; ties go to the smaller value. Folds whose training or
/// held-out part lacks a class are skipped. With fewer than `N_FOLDS`
/// slides each slide forms its own fold (at least two are required).
pub fn cross_validate<S: AsRef<str>>(
    x: ArrayView2<f64>,
    y: &[usize],
    slides: &[S],
    n_classes: usize,
    seed: u64,
) -> Result<CvResult> {
    let n_slides = slides.iter().map(AsRef::as_ref).collect::<std::collections::BTreeSet<&str>>().len();
    let n_folds = N_FOLDS.min(n_slides).max(2);
    let folds = slide_folds(slides, y, n_folds, seed)?;
    let grid = inverse_reg_grid();
    let split = |k: usize| -> (Vec<usize>, Vec<usize>) { (0..y.len()).partition(|&i| folds[i] != k) };
    let has_all = |idx: &[usize]| {
        let mut seen = vec![false; n_classes];
        idx.iter().for_each(|&i| seen[y[i]] = true);
        seen.iter().all(|&s| s)
    };
    let usable: Vec<(Vec<usize>, Vec<usize>)> = (0..n_folds)
        .map(split)
        .filter(|(tr, va)| has_all(tr) && has_all(va))
        .collect();
    if usable.is_empty() {
        return Err(Error::Degenerate("no cross-validation fold contains every class on both sides".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..GRID_SIZE).flat_map(|g| (0..usable.len()).map(move |f| (g, f))).collect();
    let scores: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(g, f)| {
            let (tr, va) = &usable[f];
            let xt = x.select(Axis(0), tr);
            let model = train_logreg(xt.view(), &select_rows(y, tr), n_classes, grid[g])?;
            let probs = model.predict_proba(x.select(Axis(0), va).view());
            auc_macro(probs.view(), &select_rows(y, va))
        })
        .collect();
    let mut mean_auc = vec![None; GRID_SIZE];
    let mut best: Option<(usize, f64)> = None;
    for g in 0..GRID_SIZE {
        let vals: Vec<f64> = scores[g * usable.len()..(g + 1) * usable.len()]
            .iter()
            .filter_map(|r| r.as_ref().ok().copied())
            .collect();
        if vals.is_empty() {
            continue;
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        mean_auc[g] = Some(m);
        if best.is_none_or(|(_, b)| m > b) {
            best = Some((g, m));
        }
    }
    let (g, _) = best.ok_or_else(|| Error::Numerical("every cross-validation fit failed".into()))?;
    Ok(CvResult {
        inverse_reg: grid[g],
        grid: grid.to_vec(),
        mean_auc,
    })
}
