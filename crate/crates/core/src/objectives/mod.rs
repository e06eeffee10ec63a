//! Self-supervised objectives as pure numerical maps with analytic gradients.
//!
//! Every loss L2-normalises its embedding inputs, so all of them are
//! invariant to positive per-row rescaling.

mod contrastive;
mod gradcheck;
mod msn;

pub use contrastive::{
    beta_ramp, nt_xent, nt_xent_with_grad, reweighted_nt_xent, reweighted_nt_xent_with_grad, ContrastiveGrad,
    ContrastiveLoss,
};
pub use gradcheck::{flatten, grad_check, unflatten};
pub use msn::{hybrid_loss, msn_loss, msn_loss_with_grad, sinkhorn, MsnLoss, Prototypes};

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Loss hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub ntxent_temperature: f64,
    pub teacher_temperature: f64,
    pub student_temperature: f64,
    /// Weight of the mean-entropy-maximisation term.
    pub memax_weight: f64,
    pub sinkhorn_iters: usize,
    pub beta_max: f64,
    pub hybrid_weight: f64,
    pub n_prototypes: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            ntxent_temperature: 0.1,
            teacher_temperature: 0.0125,
            student_temperature: 0.1,
            memax_weight: 0.1,
            sinkhorn_iters: 3,
            beta_max: 0.1,
            hybrid_weight: 1.0,
            n_prototypes: 1024,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [
            ("ntxent_temperature", self.ntxent_temperature),
            ("teacher_temperature", self.teacher_temperature),
            ("student_temperature", self.student_temperature),
        ] {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {t}")));
            }
        }
        for (name, v) in [
            ("memax_weight", self.memax_weight),
            ("beta_max", self.beta_max),
            ("hybrid_weight", self.hybrid_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.n_prototypes == 0 {
            return Err(Error::invalid("n_prototypes must be at least 1"));
        }
        Ok(())
    }
}

/// Row-normalised copy and the original row norms.
pub(crate) fn normalize(z: ArrayView2<f64>) -> Result<(Array2<f64>, Vec<f64>)> {
    let mut u = z.to_owned();
    let mut norms = Vec::with_capacity(z.nrows());
    for (i, mut row) in u.axis_iter_mut(Axis(0)).enumerate() {
        let n = row.dot(&row).sqrt();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::Numerical(format!("embedding row {i} has zero or non-finite norm")));
        }
        row.mapv_inplace(|v| v / n);
        norms.push(n);
    }
    Ok((u, norms))
}

/// Pulls a gradient with respect to unit rows back through the normalisation.
pub(crate) fn normalize_backward(u: &Array2<f64>, norms: &[f64], du: &Array2<f64>) -> Array2<f64> {
    let mut dz = du.clone();
    for (i, mut row) in dz.axis_iter_mut(Axis(0)).enumerate() {
        let ui = u.row(i);
        let proj = row.dot(&ui);
        row.scaled_add(-proj, &ui);
        row.mapv_inplace(|v| v / norms[i]);
    }
    dz
}

/// `log(sum(exp(x)))` with max subtraction.
pub(crate) fn logsumexp(x: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = x.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub(crate) fn check_pair(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!("paired views differ in shape: {:?} vs {:?}", a.dim(), b.dim())));
    }
    if a.nrows() < 2 {
        return Err(Error::invalid("contrastive losses need a batch of at least 2"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = LossConfig::default();
        assert_eq!(c.ntxent_temperature, 0.1);
        assert_eq!(c.teacher_temperature, 0.0125);
        assert_eq!(c.student_temperature, 0.1);
        assert_eq!(c.beta_max, 0.1);
        assert_eq!(c.sinkhorn_iters, 3);
        assert_eq!(c.n_prototypes, 1024);
        c.validate().unwrap();
        let bad = LossConfig { teacher_temperature: 0.0, ..c };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn logsumexp_is_stable() {
        let v = [1000.0, 1000.0];
        assert!((logsumexp(v.iter().copied()) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
