use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Mann-Whitney AUC with ties counted as one half, computed from midranks.
pub fn auc_binary(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numerical("scores contain NaN".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Degenerate("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of (doubled) midranks of the positives keeps everything integral.
    let mut pos_rank2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1, doubled midrank = i + j + 2
        let mid2 = (i + j + 2) as u128;
        for &k in &order[i..=j] {
            if labels[k] {
                pos_rank2 += mid2;
            }
        }
        i = j + 1;
    }
    let np = n_pos as u128;
    let u2 = pos_rank2 - np * (np + 1);
    Ok(u2 as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Unweighted mean of one-vs-rest AUCs over the columns of `probs`. With two
/// classes this is the AUC of the second column.
pub fn auc_macro(probs: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    let c = probs.ncols();
    if probs.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: probs.nrows(),
            actual: labels.len(),
        });
    }
    super::logreg::check_labels(labels, c)?;
    let column = |k: usize| probs.column(k).to_vec();
    let is = |k: usize| labels.iter().map(|&l| l == k).collect::<Vec<_>>();
    if c == 2 {
        return auc_binary(&column(1), &is(1));
    }
    let mut total = 0.0;
    for k in 0..c {
        total += auc_binary(&column(k), &is(k))?;
    }
    Ok(total / c as f64)
}
