use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use super::{check_pair, logsumexp, normalize, normalize_backward};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveLoss {
    /// Mean of `per_anchor`.
    pub loss: f64,
    /// One value per anchor: rows of `z_a` first, then rows of `z_b`.
    pub per_anchor: Vec<f64>,
}

/// Gradients of the mean loss with respect to the raw (unnormalised) inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveGrad {
    pub d_a: Array2<f64>,
    pub d_b: Array2<f64>,
}

// Shared scaffolding: builds the cosine similarity matrix, lets `anchor`
// fill one row of dL/dS (scaled by the anchor's share of the mean) and pulls
// the result back to the inputs.
fn contrastive<F>(z_a: ArrayView2<f64>, z_b: ArrayView2<f64>, tau: f64, mut anchor: F) -> Result<(ContrastiveLoss, ContrastiveGrad)>
where
    F: FnMut(&[f64], usize, usize, &mut [f64]) -> f64,
{
    check_pair(z_a, z_b)?;
    let b = z_a.nrows();
    let n = 2 * b;
    let z = concatenate![Axis(0), z_a, z_b];
    let (u, norms) = normalize(z.view())?;
    let sim = u.dot(&u.t());
    let mut per_anchor = Vec::with_capacity(n);
    let mut g = Array2::<f64>::zeros((n, n));
    let mut logits = vec![0.0; n];
    let mut dl = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            logits[j] = sim[[i, j]] / tau;
        }
        dl.fill(0.0);
        per_anchor.push(anchor(&logits, i, (i + b) % n, &mut dl));
        for j in 0..n {
            g[[i, j]] = dl[j] / (tau * n as f64);
        }
    }
    let du = (&g + &g.t()).dot(&u);
    let dz = normalize_backward(&u, &norms, &du);
    let loss = per_anchor.iter().sum::<f64>() / n as f64;
    Ok((
        ContrastiveLoss { loss, per_anchor },
        ContrastiveGrad {
            d_a: dz.slice(s![..b, ..]).to_owned(),
            d_b: dz.slice(s![b.., ..]).to_owned(),
        },
    ))
}

/// NT-Xent with analytic gradients. Each of the `2B` embeddings is an anchor
/// whose positive is its pair and whose negatives are the other `2B - 2`.
pub fn nt_xent_with_grad(z_a: ArrayView2<f64>, z_b: ArrayView2<f64>, tau: f64) -> Result<(ContrastiveLoss, ContrastiveGrad)> {
    contrastive(z_a, z_b, tau, |l, i, p, dl| {
        let others = || l.iter().enumerate().filter(move |&(j, _)| j != i).map(|(_, &v)| v);
        let lse = logsumexp(others());
        for (j, d) in dl.iter_mut().enumerate() {
            if j != i {
                *d = (l[j] - lse).exp();
            }
        }
        dl[p] -= 1.0;
        lse - l[p]
    })
}

pub fn nt_xent(z_a: ArrayView2<f64>, z_b: ArrayView2<f64>, tau: f64) -> Result<ContrastiveLoss> {
    Ok(nt_xent_with_grad(z_a, z_b, tau)?.0)
}

/// NT-Xent with importance-weighted negatives. Negative `k` of an anchor is
/// weighted by `exp(beta s_k / tau)` divided by the mean of those terms over
/// the anchor's negatives; the positive term is unweighted.
pub fn reweighted_nt_xent_with_grad(
    z_a: ArrayView2<f64>,
    z_b: ArrayView2<f64>,
    tau: f64,
    beta: f64,
) -> Result<(ContrastiveLoss, ContrastiveGrad)> {
    contrastive(z_a, z_b, tau, |l, i, p, dl| {
        let negs = || l.iter().enumerate().filter(move |&(j, _)| j != i && j != p);
        let m = (l.len() - 2) as f64;
        // log sum_k w_k e^{l_k} = log m + lse((1+beta) l) - lse(beta l)
        let lse_a = logsumexp(negs().map(|(_, &v)| (1.0 + beta) * v));
        let lse_c = logsumexp(negs().map(|(_, &v)| beta * v));
        let log_neg = m.ln() + lse_a - lse_c;
        let log_den = logsumexp([l[p], log_neg].into_iter());
        let q_neg = (log_neg - log_den).exp();
        for (k, &v) in negs() {
            let soft_a = ((1.0 + beta) * v - lse_a).exp();
            let soft_c = (beta * v - lse_c).exp();
            dl[k] = q_neg * ((1.0 + beta) * soft_a - beta * soft_c);
        }
        dl[p] = (l[p] - log_den).exp() - 1.0;
        log_den - l[p]
    })
}

pub fn reweighted_nt_xent(z_a: ArrayView2<f64>, z_b: ArrayView2<f64>, tau: f64, beta: f64) -> Result<ContrastiveLoss> {
    Ok(reweighted_nt_xent_with_grad(z_a, z_b, tau, beta)?.0)
}

/// Linear ramp of the reweighting strength from 0 at step 0 to `beta_max` at
/// `total_steps`. Steps past the end stay at `beta_max`.
pub fn beta_ramp(step: u64, total_steps: u64, beta_max: f64) -> f64 {
    if total_steps == 0 || step >= total_steps {
        return beta_max;
    }
    beta_max * (step as f64 / total_steps as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::grad_check;
    use crate::seed;
    use ndarray::array;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn randn(r: usize, c: usize, s: u64) -> Array2<f64> {
        let mut rng = seed::rng(s);
        Array2::from_shape_fn((r, c), |_| rng.sample::<f64, _>(StandardNormal))
    }

    fn unit(v: &[f64]) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    }

    // Direct enumeration of both losses from the textbook formulas.
    fn oracle(a: &Array2<f64>, b: &Array2<f64>, tau: f64, beta: f64) -> Vec<f64> {
        let bsz = a.nrows();
        let mut z: Vec<Vec<f64>> = Vec::new();
        for r in a.rows() {
            z.push(unit(&r.to_vec()));
        }
        for r in b.rows() {
            z.push(unit(&r.to_vec()));
        }
        let n = z.len();
        let dot = |x: &Vec<f64>, y: &Vec<f64>| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
        let mut out = vec![];
        for i in 0..n {
            let p = if i < bsz { i + bsz } else { i - bsz };
            let negs: Vec<usize> = (0..n).filter(|&k| k != i && k != p).collect();
            let mean_w = negs.iter().map(|&k| (beta * dot(&z[i], &z[k]) / tau).exp()).sum::<f64>() / negs.len() as f64;
            let mut den = (dot(&z[i], &z[p]) / tau).exp();
            for &k in &negs {
                let s = dot(&z[i], &z[k]);
                let w = (beta * s / tau).exp() / mean_w;
                den += w * (s / tau).exp();
            }
            out.push(-((dot(&z[i], &z[p]) / tau).exp() / den).ln());
        }
        out
    }

    #[test]
    fn orthogonal_pairs_closed_form() {
        let a = array![[1.0, 0.0], [0.0, 1.0]];
        let out = nt_xent(a.view(), a.view(), 0.1).unwrap();
        let want = -(10f64.exp() / (10f64.exp() + 2.0)).ln();
        for v in &out.per_anchor {
            assert!((v - want).abs() < 1e-12);
        }
        let o = oracle(&a, &a, 0.1, 0.0);
        for (x, y) in out.per_anchor.iter().zip(o) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_embeddings_give_log_candidates() {
        let a = array![[0.3, 0.4], [0.3, 0.4], [0.3, 0.4]];
        let out = nt_xent(a.view(), a.view(), 0.1).unwrap();
        for v in out.per_anchor {
            assert!((v - 5f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_oracle_and_is_scale_invariant() {
        for s in 0..20 {
            let a = randn(3, 5, s);
            let b = randn(3, 5, s + 100);
            let nt = nt_xent(a.view(), b.view(), 0.1).unwrap();
            let rw = reweighted_nt_xent(a.view(), b.view(), 0.1, 0.1).unwrap();
            for (x, y) in nt.per_anchor.iter().zip(oracle(&a, &b, 0.1, 0.0)) {
                assert!((x - y).abs() < 1e-12);
                assert!(*x > 0.0);
            }
            for (x, y) in rw.per_anchor.iter().zip(oracle(&a, &b, 0.1, 0.1)) {
                assert!((x - y).abs() < 1e-12);
            }
            let scaled = &a * &array![[2.0], [0.5], [7.0]];
            let nt2 = nt_xent(scaled.view(), b.view(), 0.1).unwrap();
            assert!((nt.loss - nt2.loss).abs() < 1e-12);
        }
    }

    #[test]
    fn beta_zero_reduces_to_nt_xent() {
        let a = randn(4, 6, 1);
        let b = randn(4, 6, 2);
        let (l0, g0) = nt_xent_with_grad(a.view(), b.view(), 0.1).unwrap();
        let (l1, g1) = reweighted_nt_xent_with_grad(a.view(), b.view(), 0.1, 0.0).unwrap();
        assert!((l0.loss - l1.loss).abs() < 1e-12);
        let diff = (&g0.d_a - &g1.d_a).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
        assert!(diff < 1e-10);
    }

    #[test]
    fn equidistant_negatives_ignore_beta() {
        // Three orthogonal pairs: every negative has similarity 0 to every anchor.
        let a = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let nt = nt_xent(a.view(), a.view(), 0.1).unwrap();
        for beta in [0.1, 1.0, 5.0] {
            let rw = reweighted_nt_xent(a.view(), a.view(), 0.1, beta).unwrap();
            assert!((rw.loss - nt.loss).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_of_one_is_rejected() {
        let a = array![[1.0, 0.0]];
        assert!(nt_xent(a.view(), a.view(), 0.1).is_err());
        assert!(nt_xent(a.view(), array![[1.0, 0.0], [0.0, 1.0]].view(), 0.1).is_err());
    }

    #[test]
    fn large_temperature_approaches_uniform() {
        let a = randn(3, 4, 9);
        let b = randn(3, 4, 10);
        let out = nt_xent(a.view(), b.view(), 1e6).unwrap();
        assert!((out.loss - 5f64.ln()).abs() < 1e-5);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for s in 0..10 {
            let a = randn(3, 5, s);
            let b = randn(3, 5, s + 50);
            for beta in [0.0, 0.1, 0.7] {
                let f = |x: &[f64]| {
                    let (za, zb) = x.split_at(15);
                    let za = ArrayView2::from_shape((3, 5), za).unwrap();
                    let zb = ArrayView2::from_shape((3, 5), zb).unwrap();
                    let (l, g) = reweighted_nt_xent_with_grad(za, zb, 0.1, beta).unwrap();
                    (l.loss, g.d_a.iter().chain(g.d_b.iter()).copied().collect())
                };
                let x: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
                let err = grad_check(f, &x, 1e-5);
                assert!(err < 1e-4, "seed {s} beta {beta}: {err}");
            }
        }
    }

    #[test]
    fn ramp() {
        assert_eq!(beta_ramp(0, 1000, 0.1), 0.0);
        assert_eq!(beta_ramp(1000, 1000, 0.1), 0.1);
        assert_eq!(beta_ramp(500, 1000, 0.1), 0.05);
        assert_eq!(beta_ramp(2000, 1000, 0.1), 0.1);
    }
}
