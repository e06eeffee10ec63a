use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Iteration cap of the optimiser.
pub const MAX_ITERS: usize = 100;
const MEMORY: usize = 10;
const GRAD_TOL: f64 = 1e-7;

/// Multinomial logistic regression weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    /// `C x f`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub inverse_reg: f64,
    pub iterations: usize,
}

impl ProbeModel {
    pub fn n_classes(&self) -> usize {
        self.weights.nrows()
    }

    /// Class probabilities, `n x C`.
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut logits = x.dot(&self.weights.t()) + &self.bias;
        for mut row in logits.axis_iter_mut(Axis(0)) {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|v| (v - m).exp());
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        logits
    }
}

/// Objective `mean cross-entropy + |W|^2 / (2 inverse_reg n)` and its
/// gradient at `theta` (W row-major, then the biases).
pub fn objective_and_grad(
    x: ArrayView2<f64>,
    y: &[usize],
    n_classes: usize,
    inverse_reg: f64,
    theta: &[f64],
) -> (f64, Vec<f64>) {
    let (n, f) = x.dim();
    let w = ArrayView2::from_shape((n_classes, f), &theta[..n_classes * f]).expect("theta layout");
    let b = &theta[n_classes * f..];
    let mut logits = x.dot(&w.t());
    let mut ce = 0.0;
    for (i, mut row) in logits.axis_iter_mut(Axis(0)).enumerate() {
        for (v, bk) in row.iter_mut().zip(b) {
            *v += bk;
        }
        let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        ce += lse - row[y[i]];
        // Turn the row into p - onehot.
        row.mapv_inplace(|v| (v - lse).exp());
        row[y[i]] -= 1.0;
    }
    let nf = n as f64;
    let reg = 1.0 / (inverse_reg * nf);
    let mut dw = logits.t().dot(&x) / nf;
    dw.scaled_add(reg, &w);
    let db = logits.sum_axis(Axis(0)) / nf;
    let value = ce / nf + 0.5 * reg * w.iter().map(|v| v * v).sum::<f64>();
    let mut grad = dw.into_raw_vec_and_offset().0;
    grad.extend(db.iter());
    (value, grad)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// Limited-memory BFGS with a backtracking Armijo line search. Returns the
/// final point and the number of iterations taken.
pub(crate) fn lbfgs<F>(mut f: F, x0: Vec<f64>, max_iters: usize) -> (Vec<f64>, usize)
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    let mut hist: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> = Default::default();
    let mut iters = 0;
    while iters < max_iters {
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax < GRAD_TOL || !fx.is_finite() {
            break;
        }
        iters += 1;
        // Two-loop recursion.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = match hist.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0 / dot(&g, &g).sqrt().max(1.0),
        };
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let bcoef = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - bcoef) * si);
        }
        let mut d: Vec<f64> = q.into_iter().map(|v| -v).collect();
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            hist.clear();
            let scale = 1.0 / dot(&g, &g).sqrt().max(1.0);
            d = g.iter().map(|v| -v * scale).collect();
            slope = dot(&g, &d);
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let (fnew, gnew) = f(&xn);
            if fnew.is_finite() && fnew <= fx + 1e-4 * t * slope {
                accepted = Some((xn, fnew, gnew));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            break;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if hist.len() == MEMORY {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        let converged = (fx - fnew).abs() <= 1e-16 * fx.abs().max(1.0);
        x = xn;
        fx = fnew;
        g = gnew;
        if converged {
            break;
        }
    }
    (x, iters)
}

pub(crate) fn check_labels(y: &[usize], n_classes: usize) -> Result<()> {
    if n_classes < 2 {
        return Err(Error::invalid("at least two classes are required"));
    }
    let mut seen = vec![false; n_classes];
    for &l in y {
        if l >= n_classes {
            return Err(Error::invalid(format!("label {l} out of range for {n_classes} classes")));
        }
        seen[l] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Degenerate(format!("class {missing} is absent from the labels")));
    }
    Ok(())
}

/// Fits multinomial logistic regression with L2 penalty on the weights
/// (biases unpenalised), starting from zero, for at most [`MAX_ITERS`]
/// quasi-Newton iterations.
pub fn train_logreg(x: ArrayView2<f64>, y: &[usize], n_classes: usize, inverse_reg: f64) -> Result<ProbeModel> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            actual: y.len(),
        });
    }
    if !(inverse_reg > 0.0 && inverse_reg.is_finite()) {
        return Err(Error::invalid(format!("inverse_reg must be positive, got {inverse_reg}")));
    }
    check_labels(y, n_classes)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("feature matrix contains non-finite values".into()));
    }
    let f = x.ncols();
    let theta0 = vec![0.0; n_classes * (f + 1)];
    let (theta, iterations) = lbfgs(|t| objective_and_grad(x, y, n_classes, inverse_reg, t), theta0, MAX_ITERS);
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("logistic regression diverged".into()));
    }
    Ok(ProbeModel {
        weights: Array2::from_shape_vec((n_classes, f), theta[..n_classes * f].to_vec()).expect("layout"),
        bias: Array1::from(theta[n_classes * f..].to_vec()),
        inverse_reg,
        iterations,
    })
}
