//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use pathssl_core::aggregate::{titration_curve, DEFAULT_FRACTIONS, DEFAULT_SUBSAMPLES};
use pathssl_core::corruptions::{gaussian_blur, jpeg_roundtrip, poisson_noise};
use pathssl_core::embeddings::{center_pool, FeatureMode};
use pathssl_core::imagecolor::{
    channel_stats, convert, convert_back, randstainna_with_space, reinhard_transfer, ColorSpace, ColorStats,
    StainTemplate,
};
use pathssl_core::objectives::{
    beta_ramp, grad_check, hybrid_loss, msn_loss, msn_loss_with_grad, nt_xent, nt_xent_with_grad, reweighted_nt_xent,
    reweighted_nt_xent_with_grad, sinkhorn, LossConfig, Prototypes,
};
use pathssl_core::probe::{
    auc_binary, auc_macro, bootstrap_ci, composite_metric, group_indices, inverse_reg_grid, run_probe, slide_folds,
    BenchmarkSpec, ProbeConfig, ProbeResult, DEFAULT_REPLICATES,
};
use pathssl_core::rebalance::{assign, balanced_sample, cosine_kmeans};
use pathssl_core::synth::{
    benchmark_task_data, desk_benchmark, embed_plans, gen_patch, make_center_label_task, make_titration_task,
    make_whole_control_task, plan_benchmark, toy_encoder, CenterTaskConfig, SynthBenchmark,
};
use pathssl_core::views::{overlap_crop_pair, sample_crop_rect, sample_overlapping_rect, CropConfig};
use pathssl_core::{seed, Magnification, Patch};

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(start: Instant, limit: Duration) -> Result<Duration, String> {
    let t = start.elapsed();
    check(t < limit, format!("took {t:.1?}, limit {limit:?}"))?;
    Ok(t)
}

fn randn(r: usize, c: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.sample(StandardNormal))
}

fn random_patch(w: usize, h: usize, rng: &mut impl Rng) -> Patch {
    Patch::from_rgb(w, h, (0..w * h * 3).map(|_| rng.random::<f64>()).collect()).unwrap()
}

// Plain loop oracles, written against row vectors rather than ndarray.

fn rows(m: ArrayView2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn contrastive_oracle(a: ArrayView2<f64>, b: ArrayView2<f64>, tau: f64, beta: f64) -> f64 {
    let bsz = a.nrows();
    let z: Vec<Vec<f64>> = rows(a).iter().chain(rows(b).iter()).map(|r| unit(r)).collect();
    let n = z.len();
    let mut total = 0.0;
    for i in 0..n {
        let p = if i < bsz { i + bsz } else { i - bsz };
        let negs: Vec<usize> = (0..n).filter(|&k| k != i && k != p).collect();
        let mean_w = negs.iter().map(|&k| (beta * dot(&z[i], &z[k]) / tau).exp()).sum::<f64>() / negs.len() as f64;
        let pos = (dot(&z[i], &z[p]) / tau).exp();
        let mut den = pos;
        for &k in &negs {
            let s = dot(&z[i], &z[k]);
            den += (beta * s / tau).exp() / mean_w * (s / tau).exp();
        }
        total += -(pos / den).ln();
    }
    total / n as f64
}

fn sinkhorn_oracle(scores: &[Vec<f64>], iters: usize) -> Vec<Vec<f64>> {
    let b = scores.len();
    let k = scores[0].len();
    let mut q = scores.to_vec();
    let row_norm = |q: &mut Vec<Vec<f64>>| {
        for row in q.iter_mut() {
            let s: f64 = row.iter().sum();
            for v in row.iter_mut() {
                *v /= s;
            }
        }
    };
    for _ in 0..iters {
        row_norm(&mut q);
        for j in 0..k {
            let s: f64 = (0..b).map(|i| q[i][j]).sum();
            for row in q.iter_mut() {
                row[j] *= (b as f64 / k as f64) / s;
            }
        }
    }
    row_norm(&mut q);
    q
}

fn msn_oracle(students: &[Array2<f64>], teacher: &Array2<f64>, protos: &Array2<f64>, cfg: &LossConfig) -> f64 {
    let p: Vec<Vec<f64>> = rows(protos.view()).iter().map(|r| unit(r)).collect();
    let k = p.len();
    let t_scores: Vec<Vec<f64>> = rows(teacher.view())
        .iter()
        .map(|r| {
            let u = unit(r);
            p.iter().map(|pk| (dot(&u, pk) / cfg.teacher_temperature).exp()).collect()
        })
        .collect();
    let targets = sinkhorn_oracle(&t_scores, cfg.sinkhorn_iters);
    let b = teacher.nrows();
    let denom = (students.len() * b) as f64;
    let mut ce = 0.0;
    let mut mean_p = vec![0.0; k];
    for s in students {
        for (i, r) in rows(s.view()).iter().enumerate() {
            let u = unit(r);
            let e: Vec<f64> = p.iter().map(|pk| (dot(&u, pk) / cfg.student_temperature).exp()).collect();
            let z: f64 = e.iter().sum();
            for j in 0..k {
                let pj = e[j] / z;
                ce -= targets[i][j] * pj.ln();
                mean_p[j] += pj / denom;
            }
        }
    }
    let memax: f64 = mean_p.iter().map(|m| m * m.ln()).sum();
    ce / denom + cfg.memax_weight * memax
}

struct LossInstance {
    cfg: LossConfig,
    students: Vec<Array2<f64>>,
    teacher: Array2<f64>,
    protos: Array2<f64>,
    global_teacher: Array2<f64>,
    global_student: Array2<f64>,
    beta: f64,
}

fn loss_instance(i: u64) -> LossInstance {
    let mut rng = seed::rng(seed::derive_index(seed::derive(0, "loss-instances"), i));
    let b = rng.random_range(2..=4);
    let d = rng.random_range(2..=8);
    let k = rng.random_range(2..=5);
    let v = rng.random_range(1..=3);
    let cfg = LossConfig {
        ntxent_temperature: rng.random_range(0.05..1.0),
        teacher_temperature: rng.random_range(0.0125..0.3),
        student_temperature: rng.random_range(0.05..1.0),
        memax_weight: rng.random_range(0.0..1.0),
        sinkhorn_iters: rng.random_range(0..=5),
        hybrid_weight: rng.random_range(0.0..2.0),
        n_prototypes: k,
        ..LossConfig::default()
    };
    LossInstance {
        students: (0..v).map(|_| randn(b, d, &mut rng)).collect(),
        teacher: randn(b, d, &mut rng),
        protos: randn(k, d, &mut rng),
        global_teacher: randn(b, d, &mut rng),
        global_student: randn(b, d, &mut rng),
        beta: rng.random_range(0.0..2.0),
        cfg,
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for i in 0..50 {
        let x = loss_instance(i);
        let protos = Prototypes::new(x.protos.clone()).unwrap();
        let views: Vec<ArrayView2<f64>> = x.students.iter().map(|s| s.view()).collect();
        let tau = x.cfg.ntxent_temperature;
        let (ga, gb) = (x.global_teacher.view(), x.global_student.view());

        let nt = nt_xent(ga, gb, tau).map_err(|e| e.to_string())?.loss;
        let rw = reweighted_nt_xent(ga, gb, tau, x.beta).map_err(|e| e.to_string())?.loss;
        let msn = msn_loss(&views, x.teacher.view(), &protos, &x.cfg).map_err(|e| e.to_string())?.loss;
        let hy = hybrid_loss(&views, x.teacher.view(), &protos, ga, gb, &x.cfg).map_err(|e| e.to_string())?;
        let msn_want = msn_oracle(&x.students, &x.teacher, &x.protos, &x.cfg);
        let pairs = [
            ("nt_xent", nt, contrastive_oracle(ga, gb, tau, 0.0)),
            ("reweighted_nt_xent", rw, contrastive_oracle(ga, gb, tau, x.beta)),
            ("msn_loss", msn, msn_want),
            ("hybrid_loss", hy, msn_want + x.cfg.hybrid_weight * contrastive_oracle(ga, gb, tau, 0.0)),
        ];
        for (name, got, want) in pairs {
            let err = (got - want).abs();
            worst = worst.max(err);
            check(err <= 1e-10, format!("instance {i}: {name} {got} vs oracle {want}"))?;
        }

        let scores = x.teacher.mapv(|v| v.abs() + 0.1);
        let got = sinkhorn(scores.view(), x.cfg.sinkhorn_iters).map_err(|e| e.to_string())?;
        let want = sinkhorn_oracle(&rows(scores.view()), x.cfg.sinkhorn_iters);
        for (r, wr) in got.rows().into_iter().zip(&want) {
            for (g, w) in r.iter().zip(wr) {
                worst = worst.max((g - w).abs());
                check((g - w).abs() <= 1e-10, format!("instance {i}: sinkhorn {g} vs oracle {w}"))?;
            }
        }
    }
    let t = within(start, Duration::from_secs(10))?;
    Ok(format!("50 instances, max abs error {worst:.1e}, {t:.2?}"))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..50 {
        let x = loss_instance(1000 + i);
        let tau = x.cfg.ntxent_temperature;
        let (b, d) = x.global_teacher.dim();
        let flat: Vec<f64> = x.global_teacher.iter().chain(x.global_student.iter()).copied().collect();
        let split = |v: &[f64]| {
            let (a, c) = v.split_at(b * d);
            (ArrayView2::from_shape((b, d), a).unwrap().to_owned(), ArrayView2::from_shape((b, d), c).unwrap().to_owned())
        };
        let nt = grad_check(
            |v| {
                let (a, c) = split(v);
                let (l, g) = nt_xent_with_grad(a.view(), c.view(), tau).unwrap();
                (l.loss, g.d_a.iter().chain(g.d_b.iter()).copied().collect())
            },
            &flat,
            eps,
        );
        let rw = grad_check(
            |v| {
                let (a, c) = split(v);
                let (l, g) = reweighted_nt_xent_with_grad(a.view(), c.view(), tau, x.beta).unwrap();
                (l.loss, g.d_a.iter().chain(g.d_b.iter()).copied().collect())
            },
            &flat,
            eps,
        );
        let protos = Prototypes::new(x.protos.clone()).unwrap();
        let shapes: Vec<(usize, usize)> = x.students.iter().map(|s| s.dim()).collect();
        let sflat: Vec<f64> = x.students.iter().flat_map(|s| s.iter().copied()).collect();
        let msn = grad_check(
            |v| {
                let parts = pathssl_core::objectives::unflatten(v, &shapes);
                let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| p.view()).collect();
                let (l, g) = msn_loss_with_grad(&views, x.teacher.view(), &protos, &x.cfg).unwrap();
                (l.loss, g.iter().flat_map(|m| m.iter().copied()).collect())
            },
            &sflat,
            eps,
        );
        for (name, err) in [("nt_xent", nt), ("reweighted_nt_xent", rw), ("msn_loss", msn)] {
            worst = worst.max(err);
            check(err < 1e-4, format!("instance {i}: {name} relative gradient error {err:.2e}"))?;
        }
    }
    let t = within(start, Duration::from_secs(30))?;
    Ok(format!("50 instances, max relative error {worst:.1e}, {t:.2?}"))
}

fn criterion_3() -> Outcome {
    let mut worst = 0.0f64;
    for i in 0..50 {
        let x = loss_instance(2000 + i);
        let tau = x.cfg.ntxent_temperature;
        let (ga, gb) = (x.global_teacher.view(), x.global_student.view());
        let nt = nt_xent(ga, gb, tau).unwrap();
        let rw = reweighted_nt_xent(ga, gb, tau, 0.0).unwrap();
        for (a, b) in nt.per_anchor.iter().zip(&rw.per_anchor).chain([(&nt.loss, &rw.loss)]) {
            worst = worst.max((a - b).abs());
            check((a - b).abs() <= 1e-12, format!("instance {i}: beta=0 gives {b}, nt_xent {a}"))?;
        }
        let protos = Prototypes::new(x.protos.clone()).unwrap();
        let views: Vec<ArrayView2<f64>> = x.students.iter().map(|s| s.view()).collect();
        let cfg = LossConfig { hybrid_weight: 0.0, ..x.cfg.clone() };
        let msn = msn_loss(&views, x.teacher.view(), &protos, &cfg).unwrap().loss;
        let hy = hybrid_loss(&views, x.teacher.view(), &protos, ga, gb, &cfg).unwrap();
        worst = worst.max((msn - hy).abs());
        check((msn - hy).abs() <= 1e-12, format!("instance {i}: hybrid(w=0) {hy} vs msn {msn}"))?;
    }
    let beta_max = LossConfig::default().beta_max;
    check(beta_max == 0.1, format!("default beta_max {beta_max}"))?;
    for total in [1, 100, 12_500] {
        check(beta_ramp(0, total, beta_max) == 0.0, "beta_ramp(0) != 0")?;
        check(beta_ramp(total, total, beta_max) == 0.1, "beta_ramp(T) != 0.1")?;
    }
    Ok(format!("50 instances, max difference {worst:.1e}; beta ramp 0 -> 0.1"))
}

fn criterion_4() -> Outcome {
    let mut rng = seed::rng(4);
    let mut worst = [0.0f64; 3];
    for i in 0..1000 {
        let p = random_patch(8, 8, &mut rng);
        for (s, space) in ColorSpace::ALL.iter().enumerate() {
            let back = p.with_triples(&convert_back(&convert(&p, *space), *space));
            let err = back.max_abs_diff(&p);
            worst[s] = worst[s].max(err);
            let tol = if *space == ColorSpace::Hed { 1e-3 } else { 1e-4 };
            check(err < tol, format!("patch {i}: {space:?} round trip error {err:.2e}"))?;
        }
    }

    for i in 0..100 {
        let space = ColorSpace::ALL[i % 3];
        let values: Vec<[f64; 3]> = (0..50).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let stats = ColorStats {
            space,
            mean: [rng.random(), rng.random(), rng.random()],
            std: [rng.random_range(0.0..2.0), rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)],
        };
        check(reinhard_transfer(&values, &stats, &stats) == values, "reinhard identity is not exact")?;
        let flat = ColorStats { std: [0.0; 3], mean: [rng.random(), rng.random(), rng.random()], ..stats };
        for v in reinhard_transfer(&values, &stats, &flat) {
            check(v == flat.mean, format!("zero-variance target gave {v:?}, want {:?}", flat.mean))?;
        }
    }

    let mut degenerate_worst = 0.0f64;
    for i in 0..30 {
        let p = random_patch(16, 16, &mut rng);
        let template = StainTemplate::degenerate(ColorSpace::ALL.map(|s| channel_stats(&p, s)));
        for _ in 0..6 {
            let (out, space) = randstainna_with_space(&p, &template, &mut rng);
            let err = out.max_abs_diff(&p);
            degenerate_worst = degenerate_worst.max(err);
            let tol = if space == ColorSpace::Hed { 1e-3 } else { 1e-4 };
            check(err < tol, format!("patch {i}: degenerate template in {space:?} moved pixels by {err:.2e}"))?;
        }
    }
    Ok(format!(
        "round trip max error lab {:.1e} hsv {:.1e} hed {:.1e}; reinhard exact; degenerate RandStainNA {degenerate_worst:.1e}",
        worst[0], worst[1], worst[2]
    ))
}

fn mse(a: &Patch, b: &Patch) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data().len() as f64
}

fn criterion_5() -> Outcome {
    let mut rng = seed::rng(5);
    let mut dc = 0.0f64;
    for sigma in [0.1, 0.5, 1.0, 2.0, 5.0] {
        let rgb = [rng.random(), rng.random(), rng.random()];
        let flat = Patch::filled(40, 30, rgb).unwrap();
        dc = dc.max(gaussian_blur(&flat, sigma).max_abs_diff(&flat));
    }
    check(dc <= 1e-6, format!("blur moved a constant patch by {dc:.2e}"))?;

    let lambda = 100.0;
    let mut poisson = String::new();
    for x in [0.2, 0.5] {
        let p = Patch::filled(1000, 334, [x; 3]).unwrap();
        let out = poisson_noise(&p, lambda, &mut rng);
        let n = out.data().len() as f64;
        let mean = out.data().iter().sum::<f64>() / n;
        let var = out.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let want = x / lambda;
        check((mean - x).abs() <= 1e-3, format!("poisson mean {mean} at x={x}"))?;
        check((var - want).abs() <= 0.1 * want, format!("poisson variance {var} at x={x}, want {want}"))?;
        poisson += &format!(" x={x}: mean {mean:.5} var {var:.6};");
    }

    let bench = desk_benchmark();
    let sources = [
        random_patch(64, 48, &mut rng),
        gen_patch(&bench.tasks[1].classes[1], Magnification::X10, 3, 0),
        gen_patch(&bench.tasks[2].classes[2], Magnification::X20, 4, 1),
    ];
    let mut q100 = 0.0f64;
    for src in &sources {
        let err = jpeg_roundtrip(src, 100).map_err(|e| e.to_string())?.max_abs_diff(src);
        q100 = q100.max(err);
        check(err <= 2.0 / 255.0, format!("quality 100 error {err:.4}"))?;
        let mses: Vec<f64> = [10, 30, 50, 70, 90].iter().map(|&q| mse(&jpeg_roundtrip(src, q).unwrap(), src)).collect();
        check(mses.windows(2).all(|w| w[1] <= w[0]), format!("MSE not non-increasing in quality: {mses:?}"))?;
    }
    Ok(format!("blur DC error {dc:.1e};{poisson} q100 max error {q100:.4}"))
}

fn ks_uniform(mut xs: Vec<f64>, lo: f64, hi: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, x) in xs.iter().enumerate() {
        let f = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

fn criterion_6() -> Outcome {
    let (w, h) = (224, 224);
    let (global, local) = (CropConfig::global(), CropConfig::local());
    let mut rng = seed::rng(6);
    let mut min_ratio = f64::INFINITY;
    for i in 0..10_000 {
        let g = sample_crop_rect(w, h, &global, &mut rng);
        let l = sample_overlapping_rect(w, h, &g, &local, 0.2, &mut rng);
        check(l.fits(w, h), format!("pair {i}: local crop {l:?} out of bounds"))?;
        let ratio = l.intersection_area(&g) as f64 / g.area() as f64;
        min_ratio = min_ratio.min(ratio);
        check(ratio >= 0.2, format!("pair {i}: overlap {ratio:.4} below 0.2"))?;
    }
    let src = random_patch(w, h, &mut rng);
    for i in 0..100 {
        let pair = overlap_crop_pair(&src, &global, &local, 0.2, &mut rng).map_err(|e| e.to_string())?;
        let ratio = pair.local_rect.intersection_area(&pair.global_rect) as f64 / pair.global_rect.area() as f64;
        check(ratio >= 0.2, format!("rendered pair {i}: overlap {ratio:.4}"))?;
    }
    let total = (w * h) as f64;
    let fracs: Vec<f64> = (0..10_000)
        .map(|_| {
            let g = sample_crop_rect(w, h, &global, &mut rng);
            sample_overlapping_rect(w, h, &g, &local, 0.0, &mut rng).area() as f64 / total
        })
        .collect();
    let ks = ks_uniform(fracs, local.area_range.0, local.area_range.1);
    check(ks < 0.02, format!("KS statistic {ks:.4}"))?;
    Ok(format!("10000 pairs, min overlap {min_ratio:.4}; KS {ks:.4}"))
}

fn criterion_7() -> Outcome {
    let mut rng = seed::rng(7);
    let d = 8;
    let axis: Vec<f64> = unit(&(0..d).map(|_| rng.sample(StandardNormal)).collect::<Vec<f64>>());
    let n = 400;
    let truth: Vec<usize> = (0..n).map(|i| usize::from(i % 3 == 0)).collect();
    let x = Array2::from_shape_fn((n, d), |(i, j)| {
        let sign = if truth[i] == 1 { -1.0 } else { 1.0 };
        sign * axis[j] + 0.05 * rng.sample::<f64, _>(StandardNormal)
    });
    for s in 0..5 {
        let model = cosine_kmeans(x.view(), 2, 100, s).map_err(|e| e.to_string())?;
        let a = &model.assignments;
        let same = a.iter().zip(&truth).all(|(p, t)| p == t);
        let flipped = a.iter().zip(&truth).all(|(p, t)| *p != *t);
        check(same || flipped, format!("seed {s}: bundles not recovered"))?;
    }

    for (i, total) in [(0u64, 101usize), (1, 1000), (2, 9), (3, 333)] {
        let k = 2 + i as usize * 3;
        let assignments: Vec<usize> = (0..2000).map(|_| {
            let u: f64 = rng.random();
            ((u * u) * k as f64) as usize
        }).collect();
        let picked = balanced_sample(&assignments, total, i).map_err(|e| e.to_string())?;
        check(picked.len() == total, "wrong sample size")?;
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        picked.iter().for_each(|&p| *counts.entry(assignments[p]).or_default() += 1);
        let nonempty: BTreeSet<usize> = assignments.iter().copied().collect();
        check(counts.len() == nonempty.len(), "a cluster got no samples")?;
        let (lo, hi) = (counts.values().min().unwrap(), counts.values().max().unwrap());
        check(hi - lo <= 1, format!("cluster counts range {lo}..{hi}"))?;
    }

    let y = randn(300, 6, &mut rng);
    let model = cosine_kmeans(y.view(), 5, 50, 1).map_err(|e| e.to_string())?;
    let scales: Vec<f64> = (0..300).map(|i| [0.5, 3.7, 1e3, 2.0, 1e-3][i % 5]).collect();
    let scaled = &y * &ndarray::Array1::from(scales).insert_axis(Axis(1));
    check(assign(&model, scaled.view()).unwrap() == model.assignments, "assign not scale invariant")?;
    let pow2 = &y * 4.0;
    let refit = cosine_kmeans(pow2.view(), 5, 50, 1).map_err(|e| e.to_string())?;
    check(refit.assignments == model.assignments, "clustering not scale invariant")?;
    Ok("antipodal bundles recovered for 5 seeds; quotas within 1; assignments scale invariant".into())
}

fn pair_count_auc(scores: &[f64], pos: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, si) in scores.iter().enumerate() {
        for (j, sj) in scores.iter().enumerate() {
            if pos[i] && !pos[j] {
                den += 1.0;
                if si > sj {
                    num += 1.0;
                } else if si == sj {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

fn criterion_8() -> Outcome {
    let four = auc_binary(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).map_err(|e| e.to_string())?;
    check(four == 0.75, format!("4-point AUC {four}"))?;

    let mut rng = seed::rng(8);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let c = rng.random_range(3..=6);
        let n = rng.random_range(3 * c..60);
        let mut y: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        (0..c).for_each(|k| y[k] = k);
        // Coarse scores so ties occur.
        let probs = Array2::from_shape_fn((n, c), |_| (rng.random::<f64>() * 10.0).round() / 10.0);
        let got = auc_macro(probs.view(), &y).map_err(|e| e.to_string())?;
        let want = (0..c)
            .map(|k| pair_count_auc(&probs.column(k).to_vec(), &y.iter().map(|&l| l == k).collect::<Vec<_>>()))
            .sum::<f64>()
            / c as f64;
        worst = worst.max((got - want).abs());
        check((got - want).abs() <= 1e-12, format!("instance {i}: auc_macro {got} vs pair count {want}"))?;

        let warped = probs.mapv(|v| (3.0 * v).exp() - 7.0);
        let again = auc_macro(warped.view(), &y).unwrap();
        check((again - got).abs() <= 1e-12, format!("instance {i}: monotone transform changed AUC"))?;
        let labels: Vec<bool> = y.iter().map(|&l| l == 0).collect();
        let col = probs.column(0).to_vec();
        let a = auc_binary(&col, &labels).unwrap();
        let b = auc_binary(&col.iter().map(|v| v.powi(3) * 5.0 + 1.0).collect::<Vec<_>>(), &labels).unwrap();
        check(a == b, format!("instance {i}: auc_binary changed under monotone transform"))?;
    }
    Ok(format!("4-point AUC 0.75; 100 macro instances, max error {worst:.1e}; monotone invariant"))
}

fn criterion_9() -> Outcome {
    let grid = inverse_reg_grid();
    check(grid.len() == 10 && grid[0] == 1e-4 && grid[9] == 1e4, format!("grid {grid:?}"))?;
    let ratio = 10f64.powf(8.0 / 9.0);
    check(grid.windows(2).all(|w| (w[1] / w[0] / ratio - 1.0).abs() < 1e-12), "grid not log-spaced")?;

    let mut rng = seed::rng(9);
    for trial in 0..20 {
        let n_slides = rng.random_range(5..40);
        let n = n_slides * 10;
        let slides: Vec<String> = (0..n).map(|_| format!("s{}", rng.random_range(0..n_slides))).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let distinct: BTreeSet<&String> = slides.iter().collect();
        if distinct.len() < 5 {
            continue;
        }
        let folds = slide_folds(&slides, &labels, 5, trial).map_err(|e| e.to_string())?;
        let mut fold_of: BTreeMap<&str, usize> = BTreeMap::new();
        for (s, &f) in slides.iter().zip(&folds) {
            check(*fold_of.entry(s).or_insert(f) == f, format!("trial {trial}: slide {s} spans folds"))?;
        }
    }

    check(DEFAULT_REPLICATES == 1000, "default replicates")?;
    check(ProbeConfig::default().bootstrap_replicates == 1000, "probe config replicates")?;
    let groups: Vec<Vec<usize>> = (0..12).map(|g| (g * 7..g * 7 + 1 + g % 4).collect()).collect();
    let slide_of: BTreeMap<usize, usize> = groups.iter().enumerate().flat_map(|(g, m)| m.iter().map(move |&i| (i, g))).collect();
    let calls = AtomicUsize::new(0);
    let whole = AtomicUsize::new(0);
    let ci = bootstrap_ci(
        &groups,
        |idx| {
            calls.fetch_add(1, Ordering::Relaxed);
            let mut per: BTreeMap<usize, usize> = BTreeMap::new();
            idx.iter().for_each(|i| *per.entry(slide_of[i]).or_default() += 1);
            let drawn: usize = per.iter().map(|(g, c)| c / groups[*g].len()).sum();
            if per.iter().all(|(g, c)| c % groups[*g].len() == 0) && drawn == groups.len() {
                whole.fetch_add(1, Ordering::Relaxed);
            }
            Some(idx.len() as f64)
        },
        DEFAULT_REPLICATES,
        3,
    )
    .map_err(|e| e.to_string())?;
    check(ci.replicates == 1000 && ci.skipped == 0, format!("{ci:?}"))?;
    let (c, w) = (calls.load(Ordering::Relaxed), whole.load(Ordering::Relaxed));
    check(c == 1000 && w == 1000, format!("{c} replicates, {w} resampled whole slides"))?;
    let keys = ["b", "a", "b", "c", "a"];
    check(group_indices(&keys) == vec![vec![1, 4], vec![0, 2], vec![3]], "group_indices")?;

    let spec = BenchmarkSpec::pathology_default();
    let best: BTreeMap<String, f64> =
        spec.tasks.iter().map(|t| (t.name.clone(), if t.name.starts_with("Breast") { 0.8 } else { 1.0 })).collect();
    let m = composite_metric(&best, &spec).map_err(|e| e.to_string())?;
    check((m - 0.97167).abs() < 1e-5, format!("composite {m}"))?;
    Ok(format!("grid 1e-4..1e4; folds leak-free; 1000 slide replicates; composite {m:.5}"))
}

fn probe_in_pool(threads: usize, f: impl FnOnce() -> pathssl_core::Result<ProbeResult> + Send) -> Result<ProbeResult, String> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| e.to_string())?;
    pool.install(f).map_err(|e| e.to_string())
}

fn criterion_10() -> Outcome {
    let start = Instant::now();
    let bench = desk_benchmark();
    let plans = plan_benchmark(&bench, 7).map_err(|e| e.to_string())?;
    let records = embed_plans(&bench, &plans, false).map_err(|e| e.to_string())?;
    let mode = FeatureMode::ClsOnly;
    let tasks = benchmark_task_data(&bench, &plans, &records, mode).map_err(|e| e.to_string())?;
    let cfg = ProbeConfig::default();
    let one = probe_in_pool(1, || run_probe(&tasks, mode, &cfg, 1))?;
    let many = probe_in_pool(4, || run_probe(&tasks, mode, &cfg, 1))?;
    check(one == many, "probe results differ between 1 and 4 threads")?;
    let shuffled: Vec<_> = tasks.iter().map(|t| t.with_shuffled_labels(3)).collect();
    let control = run_probe(&shuffled, mode, &cfg, 1).map_err(|e| e.to_string())?;
    let per_task: Vec<String> = one.tasks.iter().map(|t| format!("{} {:.4}", t.name, t.best_auc)).collect();
    check(one.composite > 0.95, format!("composite {:.4} ({})", one.composite, per_task.join(", ")))?;
    check(
        (0.45..=0.60).contains(&control.composite),
        format!("shuffled-label composite {:.4}", control.composite),
    )?;
    let t = within(start, Duration::from_secs(600))?;
    Ok(format!(
        "composite {:.4} ({}); shuffled {:.4}; 1 vs 4 threads identical; {} patches in {t:.0?}",
        one.composite,
        per_task.join(", "),
        control.composite,
        records.len()
    ))
}

fn criterion_11() -> Outcome {
    let rec = toy_encoder(&gen_patch(&desk_benchmark().tasks[2].classes[1], Magnification::X10, 5, 2))
        .map_err(|e| e.to_string())?;
    let tokens = rec.tokens.as_ref().ok_or("encoder returned no tokens")?;
    let pooled = center_pool(tokens, tokens.side()).map_err(|e| e.to_string())?;
    let n = (tokens.side() * tokens.side()) as f64;
    let mut mean = vec![0.0; tokens.dim()];
    for r in 0..tokens.side() {
        for c in 0..tokens.side() {
            for (m, &v) in mean.iter_mut().zip(tokens.token(r, c)) {
                *m += f64::from(v) / n;
            }
        }
    }
    let diff = pooled.iter().zip(&mean).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    check(tokens.side() == 14 && diff < 1e-12, format!("center_pool(14) differs from token mean by {diff:.2e}"))?;

    let cfg = CenterTaskConfig::default();
    let bench = SynthBenchmark {
        tasks: vec![make_center_label_task(&cfg), make_whole_control_task(&cfg)],
        magnifications: Magnification::PROBE_LEVELS.to_vec(),
    };
    let plans = plan_benchmark(&bench, 11).map_err(|e| e.to_string())?;
    let records = embed_plans(&bench, &plans, true).map_err(|e| e.to_string())?;
    let probe_cfg = ProbeConfig::default();
    let mut auc: BTreeMap<(String, String), f64> = BTreeMap::new();
    let modes = ["cls_only", "concat_center:2", "center_only:2"];
    for m in modes {
        let mode: FeatureMode = m.parse().map_err(|e: pathssl_core::Error| e.to_string())?;
        let tasks = benchmark_task_data(&bench, &plans, &records, mode).map_err(|e| e.to_string())?;
        let r = run_probe(&tasks, mode, &probe_cfg, 1).map_err(|e| e.to_string())?;
        for t in r.tasks {
            auc.insert((t.name, m.to_string()), t.best_auc);
        }
    }
    let get = |task: &str, m: &str| auc[&(task.to_string(), m.to_string())];
    let center = bench.tasks[0].name.as_str();
    let control = bench.tasks[1].name.as_str();
    let mut detail = Vec::new();
    for m in &modes[1..] {
        let gain = get(center, m) - get(center, "cls_only");
        let gap = (get(control, m) - get(control, "cls_only")).abs();
        detail.push(format!("{m}: center gain {gain:+.4}, control gap {gap:.4}"));
        check(gain >= 0.05, format!("{m} gains only {gain:.4} on the center task"))?;
        check(gap < 0.03, format!("{m} control gap {gap:.4}"))?;
    }
    Ok(format!(
        "cls_only {:.4}; {}; center_pool(14) == token mean",
        get(center, "cls_only"),
        detail.join("; ")
    ))
}

fn criterion_12() -> Outcome {
    let task = make_titration_task(96, 12, 1.0);
    let bench = SynthBenchmark {
        tasks: vec![task],
        magnifications: vec![Magnification::X10],
    };
    let plans = plan_benchmark(&bench, 21).map_err(|e| e.to_string())?;
    let records = embed_plans(&bench, &plans, false).map_err(|e| e.to_string())?;
    let data = benchmark_task_data(&bench, &plans, &records, FeatureMode::ClsOnly).map_err(|e| e.to_string())?;
    let splits = &data[0].per_magnification[&Magnification::X10];
    let curve = titration_curve(&splits.train, &splits.test, 2, &DEFAULT_FRACTIONS, DEFAULT_SUBSAMPLES, 0)
        .map_err(|e| e.to_string())?;
    let points: Vec<String> = curve.iter().map(|p| format!("{}: {:.4}", p.fraction, p.mean_auc)).collect();
    check(curve.iter().map(|p| p.fraction).eq(DEFAULT_FRACTIONS), "unexpected fractions")?;
    check(curve.iter().all(|p| p.aucs.len() == DEFAULT_SUBSAMPLES), "missing subsamples")?;
    check(
        curve.windows(2).all(|w| w[1].mean_auc >= w[0].mean_auc),
        format!("curve decreases: {}", points.join(", ")),
    )?;
    Ok(format!("mean AUC by fraction {}", points.join(", ")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("loss oracles", criterion_1),
        ("gradient checks", criterion_2),
        ("reduction identities", criterion_3),
        ("color math", criterion_4),
        ("corruption contracts", criterion_5),
        ("crop overlap", criterion_6),
        ("rebalancing", criterion_7),
        ("AUC correctness", criterion_8),
        ("probe protocol", criterion_9),
        ("synthetic benchmark", criterion_10),
        ("center embeddings", criterion_11),
        ("titration trend", criterion_12),
    ];
    // Optional arguments select criteria by number, e.g. `-- 7 9`.
    let only: BTreeSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        ran += 1;
        match f() {
            Ok(msg) => println!("PASS criterion {} ({name}): {msg}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {} ({name}): {msg}", i + 1);
            }
        }
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
