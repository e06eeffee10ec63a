use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use ndarray::Array2;
use pathssl_core::objectives::{
    beta_ramp, flatten, grad_check, hybrid_loss, msn_loss, msn_loss_with_grad, nt_xent, nt_xent_with_grad, reweighted_nt_xent,
    reweighted_nt_xent_with_grad, unflatten, Prototypes,
};
use pathssl_core::seed;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::rundir::RunDir;

const FD_STEP: f64 = 1e-6;

#[derive(Serialize)]
struct Instance {
    index: usize,
    beta: f64,
    nt_xent: f64,
    reweighted_nt_xent: f64,
    msn: f64,
    hybrid: f64,
    nt_xent_grad_error: f64,
    reweighted_grad_error: f64,
    msn_grad_error: f64,
}

fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

pub fn loss_bench(cfg: &PipelineConfig, out: Option<&Path>) -> Result<()> {
    let lc = &cfg.loss;
    let p = &lc.params;
    let run = RunDir::start(out.unwrap_or(&cfg.paths.reports.join("loss-bench")), cfg)?;
    let protos = Prototypes::random(lc.prototypes, lc.dim, seed::derive(cfg.master_seed, "prototypes"))?;
    let (b, d) = (lc.batch, lc.dim);
    let mut rows = Vec::with_capacity(lc.instances);
    for i in 0..lc.instances {
        let mut rng = seed::rng(seed::derive_index(seed::derive(cfg.master_seed, "loss-bench"), i as u64));
        let za = gaussian(b, d, &mut rng);
        let zb = gaussian(b, d, &mut rng);
        let teacher = gaussian(b, d, &mut rng);
        let students: Vec<Array2<f64>> = (0..lc.local_views + 1).map(|_| gaussian(b, d, &mut rng)).collect();
        let sv: Vec<_> = students.iter().map(|s| s.view()).collect();
        let beta = beta_ramp(i as u64, lc.instances as u64, p.beta_max);
        let x = flatten(&[za.view(), zb.view()]);
        let pair_check = |with_beta: Option<f64>| {
            grad_check(
                |x| {
                    let m = unflatten(x, &[(b, d), (b, d)]);
                    let (l, g) = match with_beta {
                        None => nt_xent_with_grad(m[0].view(), m[1].view(), p.ntxent_temperature),
                        Some(beta) => reweighted_nt_xent_with_grad(m[0].view(), m[1].view(), p.ntxent_temperature, beta),
                    }
                    .expect("valid instance");
                    (l.loss, flatten(&[g.d_a.view(), g.d_b.view()]))
                },
                &x,
                FD_STEP,
            )
        };
        let shapes = vec![(b, d); students.len()];
        let msn_check = grad_check(
            |x| {
                let m = unflatten(x, &shapes);
                let views: Vec<_> = m.iter().map(|s| s.view()).collect();
                let (l, g) = msn_loss_with_grad(&views, teacher.view(), &protos, p).expect("valid instance");
                (l.loss, flatten(&g.iter().map(|a| a.view()).collect::<Vec<_>>()))
            },
            &flatten(&sv),
            FD_STEP,
        );
        rows.push(Instance {
            index: i,
            beta,
            nt_xent: nt_xent(za.view(), zb.view(), p.ntxent_temperature)?.loss,
            reweighted_nt_xent: reweighted_nt_xent(za.view(), zb.view(), p.ntxent_temperature, beta)?.loss,
            msn: msn_loss(&sv, teacher.view(), &protos, p)?.loss,
            hybrid: hybrid_loss(&sv, teacher.view(), &protos, za.view(), zb.view(), p)?,
            nt_xent_grad_error: pair_check(None),
            reweighted_grad_error: pair_check(Some(beta)),
            msn_grad_error: msn_check,
        });
    }
    let mut table = String::from("instance\tbeta\tnt_xent\treweighted\tmsn\thybrid\tmax_grad_rel_error\n");
    for r in &rows {
        let err = r.nt_xent_grad_error.max(r.reweighted_grad_error).max(r.msn_grad_error);
        let _ = writeln!(
            table,
            "{}\t{:.4}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.2e}",
            r.index, r.beta, r.nt_xent, r.reweighted_nt_xent, r.msn, r.hybrid, err
        );
    }
    run.write_json("loss_bench.json", &rows)?;
    run.write("loss_bench.tsv", &table)?;
    print!("{table}");
    run.finish()
}
