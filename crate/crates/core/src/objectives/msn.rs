use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{normalize, normalize_backward, nt_xent, LossConfig};
use crate::error::{Error, Result};
use crate::seed;

const LOG_FLOOR: f64 = 1e-30;

/// Prototype matrix with unit-norm rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototypes {
    matrix: Array2<f64>,
}

impl Prototypes {
    /// Normalises the rows of `matrix`; zero rows are rejected.
    pub fn new(matrix: Array2<f64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::invalid("prototype matrix is empty"));
        }
        Ok(Self {
            matrix: normalize(matrix.view())?.0,
        })
    }

    /// `k` Gaussian prototypes of dimension `d`, normalised.
    pub fn random(k: usize, d: usize, seed: u64) -> Result<Self> {
        let mut rng = seed::rng(seed);
        Self::new(Array2::from_shape_fn((k, d), |_| rng.sample::<f64, _>(StandardNormal)))
    }

    pub fn k(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.matrix.view()
    }
}

fn normalize_rows_in_place(q: &mut Array2<f64>) {
    for mut row in q.axis_iter_mut(Axis(0)) {
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
}

/// Sinkhorn-Knopp balancing of a positive `B x K` matrix. Each round makes
/// every row sum to 1 and then every column sum to `B / K`; a final row
/// normalisation makes each output row a distribution. `iters = 0` is plain
/// row normalisation.
pub fn sinkhorn(scores: ArrayView2<f64>, iters: usize) -> Result<Array2<f64>> {
    if scores.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Numerical("sinkhorn input must be strictly positive and finite".into()));
    }
    let (b, k) = scores.dim();
    let col_target = b as f64 / k as f64;
    let mut q = scores.to_owned();
    for _ in 0..iters {
        normalize_rows_in_place(&mut q);
        for mut col in q.axis_iter_mut(Axis(1)) {
            let s = col.sum();
            col.mapv_inplace(|v| v * col_target / s);
        }
    }
    normalize_rows_in_place(&mut q);
    Ok(q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MsnLoss {
    /// `ce + memax_weight * memax`.
    pub loss: f64,
    /// Mean cross-entropy between teacher targets and student predictions.
    pub ce: f64,
    /// Negative entropy of the mean student prediction.
    pub memax: f64,
}

fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.axis_iter_mut(Axis(0)) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
}

fn teacher_targets(teacher: ArrayView2<f64>, protos: &Prototypes, cfg: &LossConfig) -> Result<Array2<f64>> {
    let (u, _) = normalize(teacher)?;
    let mut scores = u.dot(&protos.view().t()) / cfg.teacher_temperature;
    // A per-row shift is absorbed by the first row normalisation.
    for mut row in scores.axis_iter_mut(Axis(0)) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
    }
    sinkhorn(scores.view(), cfg.sinkhorn_iters)
}

/// Prototype-matching loss with analytic gradients for every student view.
/// Teacher targets are treated as constants.
pub fn msn_loss_with_grad(
    students: &[ArrayView2<f64>],
    teacher: ArrayView2<f64>,
    protos: &Prototypes,
    cfg: &LossConfig,
) -> Result<(MsnLoss, Vec<Array2<f64>>)> {
    cfg.validate()?;
    if students.is_empty() {
        return Err(Error::invalid("at least one student view is required"));
    }
    if teacher.ncols() != protos.dim() {
        return Err(Error::DimensionMismatch {
            expected: protos.dim(),
            actual: teacher.ncols(),
        });
    }
    for s in students {
        if s.dim() != teacher.dim() {
            return Err(Error::invalid(format!(
                "student view shape {:?} differs from teacher shape {:?}",
                s.dim(),
                teacher.dim()
            )));
        }
    }
    let targets = teacher_targets(teacher, protos, cfg)?;
    let denom = (students.len() * teacher.nrows()) as f64;

    let mut units = Vec::with_capacity(students.len());
    let mut probs = Vec::with_capacity(students.len());
    let mut ce = 0.0;
    let mut mean_p = ndarray::Array1::<f64>::zeros(protos.k());
    for s in students {
        let (u, norms) = normalize(*s)?;
        let mut p = u.dot(&protos.view().t()) / cfg.student_temperature;
        softmax_rows(&mut p);
        ce -= (&targets * &p.mapv(|v| v.max(LOG_FLOOR).ln())).sum();
        mean_p += &p.sum_axis(Axis(0));
        units.push((u, norms));
        probs.push(p);
    }
    ce /= denom;
    mean_p /= denom;
    let log_mean: ndarray::Array1<f64> = mean_p.mapv(|v| v.max(LOG_FLOOR).ln());
    let memax = mean_p.dot(&log_mean);

    let grads = units
        .iter()
        .zip(&probs)
        .map(|((u, norms), p)| {
            let mut dl = (p - &targets) / denom;
            if cfg.memax_weight != 0.0 {
                for (mut row, prow) in dl.axis_iter_mut(Axis(0)).zip(p.axis_iter(Axis(0))) {
                    let avg = prow.dot(&log_mean);
                    for k in 0..row.len() {
                        row[k] += cfg.memax_weight * prow[k] * (log_mean[k] - avg) / denom;
                    }
                }
            }
            let du = dl.dot(&protos.view()) / cfg.student_temperature;
            normalize_backward(u, norms, &du)
        })
        .collect();

    Ok((
        MsnLoss {
            loss: ce + cfg.memax_weight * memax,
            ce,
            memax,
        },
        grads,
    ))
}

pub fn msn_loss(students: &[ArrayView2<f64>], teacher: ArrayView2<f64>, protos: &Prototypes, cfg: &LossConfig) -> Result<MsnLoss> {
    Ok(msn_loss_with_grad(students, teacher, protos, cfg)?.0)
}

/// Prototype loss plus `hybrid_weight` times NT-Xent between the teacher and
/// student global views. Local views never enter the contrastive term.
pub fn hybrid_loss(
    students: &[ArrayView2<f64>],
    teacher: ArrayView2<f64>,
    protos: &Prototypes,
    global_teacher: ArrayView2<f64>,
    global_student: ArrayView2<f64>,
    cfg: &LossConfig,
) -> Result<f64> {
    let msn = msn_loss(students, teacher, protos, cfg)?;
    if cfg.hybrid_weight == 0.0 {
        return Ok(msn.loss);
    }
    let nt = nt_xent(global_teacher, global_student, cfg.ntxent_temperature)?;
    Ok(msn.loss + cfg.hybrid_weight * nt.loss)
}
