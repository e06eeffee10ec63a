use rand::Rng;
use rand_distr::StandardNormal;

use pathssl_core::probe::{auc_binary, bootstrap_ci, DEFAULT_REPLICATES};
use pathssl_core::seed;

// Slides carry one label each; patch scores mix a class shift, a per-slide
// offset and patch noise.
fn slide_task(n_slides: usize, per_slide: usize, s: u64) -> (Vec<f64>, Vec<bool>, Vec<Vec<usize>>) {
    let mut rng = seed::rng(s);
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    for slide in 0..n_slides {
        let label = slide % 2 == 1;
        let offset: f64 = rng.sample::<f64, _>(StandardNormal) * 0.7;
        let start = scores.len();
        for _ in 0..per_slide {
            let noise: f64 = rng.sample(StandardNormal);
            scores.push(f64::from(u8::from(label)) + offset + noise);
            labels.push(label);
        }
        groups.push((start..scores.len()).collect());
    }
    (scores, labels, groups)
}

fn mean_width(n_slides: usize) -> f64 {
    let widths: Vec<f64> = (0..5)
        .map(|s| {
            let (scores, labels, groups) = slide_task(n_slides, 25, seed::derive_index(41, s));
            let metric = |idx: &[usize]| {
                let sc: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
                let lb: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
                auc_binary(&sc, &lb).ok()
            };
            let ci = bootstrap_ci(&groups, metric, DEFAULT_REPLICATES, s).unwrap();
            assert_eq!(ci.replicates, 1000);
            ci.hi - ci.lo
        })
        .collect();
    widths.iter().sum::<f64>() / widths.len() as f64
}

#[test]
fn fewer_slides_give_wider_intervals() {
    let (w20, w80) = (mean_width(20), mean_width(80));
    assert!(w20 > w80, "20 slides {w20:.4} vs 80 slides {w80:.4}");
}

#[test]
fn constant_metric_collapses_interval() {
    let (_, _, groups) = slide_task(10, 5, 3);
    let ci = bootstrap_ci(&groups, |_| Some(0.7), DEFAULT_REPLICATES, 1).unwrap();
    assert_eq!((ci.lo, ci.hi, ci.skipped), (0.7, 0.7, 0));
}
