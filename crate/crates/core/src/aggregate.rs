//! Case-level evaluation: average pooling of patch embeddings, weak label
//! constructors, gene-set averaging and the data-titration subsampler.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embeddings::{compose_feature, EmbeddingRecord, FeatureMode};
use crate::error::{Error, Result};
use crate::probe::{
    auc_macro, bootstrap_ci, cross_validate, group_indices, train_logreg, BootstrapCi, SplitData, MAX_REDRAWS,
};
use crate::rebalance::{draw_members, quotas};
use crate::seed;
use crate::table::Table;

/// Patches pooled per case.
pub const DEFAULT_SAMPLE_N: usize = 1000;
pub const SURVIVAL_HORIZON_YEARS: f64 = 5.0;
pub const DEFAULT_FRACTIONS: [f64; 4] = [0.125, 0.25, 0.5, 1.0];
pub const DEFAULT_SUBSAMPLES: usize = 5;

/// Mean embedding of a case, with an optional class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub pooled: Vec<f64>,
    pub n_pooled: usize,
    pub label: Option<usize>,
}

/// Averages `sample_n` rows of `features`, drawn without replacement when
/// enough rows exist and with replacement otherwise. When `sample_n` equals
/// the row count every row is used exactly once.
pub fn case_pool(case_id: &str, features: ArrayView2<f64>, sample_n: usize, seed: u64) -> Result<CaseRecord> {
    let n = features.nrows();
    if n == 0 {
        return Err(Error::invalid(format!("case {case_id} has no patches")));
    }
    if sample_n == 0 {
        return Err(Error::invalid("sample_n must be at least 1"));
    }
    let idx: Vec<usize> = if sample_n == n {
        (0..n).collect()
    } else {
        draw_members(&(0..n).collect::<Vec<_>>(), sample_n, &mut seed::rng(seed))
    };
    let mut pooled = vec![0.0; features.ncols()];
    for &i in &idx {
        for (p, v) in pooled.iter_mut().zip(features.row(i)) {
            *p += v;
        }
    }
    pooled.iter_mut().for_each(|p| *p /= idx.len() as f64);
    Ok(CaseRecord {
        case_id: case_id.to_string(),
        pooled,
        n_pooled: idx.len(),
        label: None,
    })
}

/// Groups embedding records by case and pools each case, in case id order.
pub fn pool_cases(records: &[EmbeddingRecord], mode: FeatureMode, sample_n: usize, seed: u64) -> Result<Vec<CaseRecord>> {
    let mut by_case: BTreeMap<&str, Vec<&EmbeddingRecord>> = BTreeMap::new();
    for r in records {
        by_case.entry(&r.case_id).or_default().push(r);
    }
    by_case
        .into_par_iter()
        .map(|(case, recs)| {
            let rows = recs.iter().map(|r| compose_feature(r, mode)).collect::<Result<Vec<_>>>()?;
            let width = rows[0].len();
            let x = Array2::from_shape_vec((rows.len(), width), rows.concat()).map_err(|e| Error::invalid(e.to_string()))?;
            case_pool(case, x.view(), sample_n, seed::derive(seed, case))
        })
        .collect()
}

/// Binarizes one gene's expression at its cohort median: 1 iff strictly
/// above the median.
pub fn gene_median_labels(expression: &BTreeMap<String, f64>, gene: &str) -> Result<BTreeMap<String, usize>> {
    if expression.len() < 2 {
        return Err(Error::invalid(format!("gene {gene}: need at least two cases with expression values")));
    }
    if expression.values().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("gene {gene}: non-finite expression value")));
    }
    let mut values: Vec<f64> = expression.values().copied().collect();
    values.sort_by(f64::total_cmp);
    if values[0] == values[values.len() - 1] {
        return Err(Error::Degenerate(format!("gene {gene}: all expression values are identical")));
    }
    let m = values.len();
    let median = if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    };
    Ok(expression
        .iter()
        .map(|(case, &v)| (case.clone(), usize::from(v > median)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneSetSpec {
    pub name: String,
    pub genes: Vec<String>,
}

impl GeneSetSpec {
    pub fn new(name: &str, genes: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            genes: genes.iter().map(|g| g.to_string()).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.genes.is_empty() {
            return Err(Error::invalid(format!("gene set {} is empty", self.name)));
        }
        Ok(())
    }
}

/// The four shipped gene sets (two liver, two breast).
pub fn default_gene_sets() -> Vec<GeneSetSpec> {
    vec![
        GeneSetSpec::new("LIHC set 1", &["CD3D", "CD3E", "CD3G", "CD247", "CD19", "MS4A1", "MKI67"]),
        GeneSetSpec::new("LIHC set 2", &["CYP3A4", "CYP1A2", "GLUL", "CYP2E1", "FABP1"]),
        GeneSetSpec::new(
            "BRCA set 1",
            &[
                "ADAM33", "AURKA", "BIRC5", "CCNB2", "CDC20", "CDC45", "CDCA5", "CDCA8", "CENPA", "DACT3", "E2F2", "KIF2C",
                "KPNA2", "MCM10", "MYBL2", "NCAPG", "NCAPH", "NDC80", "ORC1", "PLK1", "PODN", "PRR11", "SFRP2", "SKA1",
                "TROAP",
            ],
        ),
        GeneSetSpec::new(
            "BRCA set 2",
            &[
                "BCL2", "CCNE1", "CDC20", "CDCA7", "CENPA", "CMC2", "ESR1", "FOXA1", "KIF2C", "MAPT", "MLPH", "MSANTD3",
                "MYBL2", "NAT1", "PGR", "PTTG1", "SCUBE2", "SLC39A6", "SLC7A5", "UBE2C",
            ],
        ),
    ]
}

/// Unweighted mean of the per-gene AUCs over the genes of `spec`.
pub fn geneset_auc(per_gene: &BTreeMap<String, f64>, spec: &GeneSetSpec) -> Result<f64> {
    spec.validate()?;
    let mut sum = 0.0;
    for g in &spec.genes {
        sum += per_gene
            .get(g)
            .ok_or_else(|| Error::invalid(format!("gene set {}: no AUC for gene {g}", spec.name)))?;
    }
    Ok(sum / spec.genes.len() as f64)
}

/// 1 if survival past the horizon is established, 0 for death within it,
/// `None` when censored before it.
pub fn survival_label(followup_years: f64, event_observed: bool) -> Result<Option<usize>> {
    if !(followup_years >= 0.0) {
        return Err(Error::invalid(format!("follow-up must be non-negative, got {followup_years}")));
    }
    Ok(if followup_years > SURVIVAL_HORIZON_YEARS {
        Some(1)
    } else if event_observed {
        Some(0)
    } else {
        None
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakEvalResult {
    pub auc: f64,
    pub ci: BootstrapCi,
    pub inverse_reg: f64,
    pub n_train: usize,
    pub n_test: usize,
}

fn labelled(cases: &[CaseRecord], what: &str) -> Result<SplitData> {
    let rows: Vec<&CaseRecord> = cases.iter().filter(|c| c.label.is_some()).collect();
    if rows.is_empty() {
        return Err(Error::invalid(format!("no labelled {what} cases")));
    }
    let width = rows[0].pooled.len();
    if let Some(bad) = rows.iter().find(|c| c.pooled.len() != width) {
        return Err(Error::invalid(format!("case {} has {} features, expected {width}", bad.case_id, bad.pooled.len())));
    }
    Ok(SplitData {
        x: Array2::from_shape_vec((rows.len(), width), rows.iter().flat_map(|c| c.pooled.iter().copied()).collect())
            .map_err(|e| Error::invalid(e.to_string()))?,
        y: rows.iter().map(|c| c.label.expect("filtered")).collect(),
        slides: rows.iter().map(|c| c.case_id.clone()).collect(),
    })
}

/// Case-level linear evaluation: the regularization strength is chosen by
/// cross-validation on `train` with folds grouped by case, the model is
/// refit on all of `train` and scored on `test`. The interval resamples
/// test cases. Cases without a label are ignored.
pub fn weak_eval(train: &[CaseRecord], test: &[CaseRecord], replicates: usize, seed: u64) -> Result<WeakEvalResult> {
    let tr = labelled(train, "train")?;
    let te = labelled(test, "test")?;
    let n_classes = tr.y.iter().chain(&te.y).max().map_or(0, |m| m + 1);
    for (what, d) in [("train", &tr), ("test", &te)] {
        let mut seen = vec![false; n_classes];
        d.y.iter().for_each(|&y| seen[y] = true);
        if seen.iter().filter(|&&s| s).count() < 2 {
            return Err(Error::Degenerate(format!("{what} cases contain fewer than two classes")));
        }
    }
    let cv = cross_validate(tr.x.view(), &tr.y, &tr.slides, n_classes, seed::derive(seed, "cv"))?;
    let model = train_logreg(tr.x.view(), &tr.y, n_classes, cv.inverse_reg)?;
    let probs = model.predict_proba(te.x.view());
    let auc = auc_macro(probs.view(), &te.y)?;
    let ci = bootstrap_ci(
        &group_indices(&te.slides),
        |idx| {
            let p = probs.select(Axis(0), idx);
            let y: Vec<usize> = idx.iter().map(|&i| te.y[i]).collect();
            auc_macro(p.view(), &y).ok()
        },
        replicates,
        seed::derive(seed, "bootstrap"),
    )?;
    Ok(WeakEvalResult {
        auc,
        ci,
        inverse_reg: cv.inverse_reg,
        n_train: tr.len(),
        n_test: te.len(),
    })
}

/// Subsets of the training slides drawn for one fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TitrationDraw {
    pub fraction: f64,
    pub subsets: Vec<Vec<String>>,
}

/// For each fraction, `subsamples` independent uniform subsets of
/// `round(f * n)` slides, kept in input order. Fraction 1 yields the full
/// list every time.
pub fn titrate_slides(slides: &[String], fractions: &[f64], subsamples: usize, seed: u64) -> Result<Vec<TitrationDraw>> {
    if subsamples == 0 {
        return Err(Error::invalid("subsamples must be at least 1"));
    }
    let n = slides.len();
    fractions
        .iter()
        .enumerate()
        .map(|(fi, &f)| {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::invalid(format!("fraction {f} outside (0, 1]")));
            }
            let k = (f * n as f64).round() as usize;
            if k == 0 {
                return Err(Error::invalid(format!("fraction {f} of {n} slides selects none")));
            }
            let subsets = (0..subsamples)
                .map(|s| {
                    let mut rng = seed::rng(seed::derive(seed, &format!("{fi}/{s}")));
                    let mut idx = index::sample(&mut rng, n, k).into_vec();
                    idx.sort_unstable();
                    idx.into_iter().map(|i| slides[i].clone()).collect()
                })
                .collect();
            Ok(TitrationDraw { fraction: f, subsets })
        })
        .collect()
}

/// Selects `total` indices with equal per-class quotas (remainder to the
/// lowest class ids). Classes with fewer patches than their quota are drawn
/// with replacement.
pub fn class_balanced_patch_sample(labels: &[usize], total: usize, seed: u64) -> Result<Vec<usize>> {
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut members = vec![Vec::new(); n_classes];
    for (i, &y) in labels.iter().enumerate() {
        members[y].push(i);
    }
    if let Some(c) = members.iter().position(Vec::is_empty) {
        return Err(Error::invalid(format!("class {c} has no patches")));
    }
    if n_classes == 0 {
        return Err(Error::invalid("no patches to sample"));
    }
    let mut rng = seed::rng(seed);
    Ok(quotas(n_classes, total)
        .into_iter()
        .zip(&members)
        .flat_map(|(q, m)| draw_members(m, q, &mut rng))
        .collect())
}

/// Inverse regularisation used when a titration subset is too small for
/// cross-validation.
pub const FALLBACK_INVERSE_REG: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TitrationPoint {
    pub fraction: f64,
    pub n_slides: usize,
    /// One AUC per defined subsample.
    pub aucs: Vec<f64>,
    pub mean_auc: f64,
    /// Subsets redrawn because they lacked a class.
    pub redrawn: usize,
    /// Subsamples still lacking a class after every redraw.
    pub skipped: usize,
    /// Fits that used [`FALLBACK_INVERSE_REG`] because no CV fold was usable.
    pub cv_fallbacks: usize,
}

struct SubsetFit {
    auc: Option<f64>,
    redrawn: usize,
    cv_fallback: bool,
}

fn rows_of(train: &SplitData, subset: &[String]) -> Vec<usize> {
    let keep: std::collections::BTreeSet<&String> = subset.iter().collect();
    (0..train.len()).filter(|&i| keep.contains(&train.slides[i])).collect()
}

fn covers_classes(train: &SplitData, idx: &[usize], n_classes: usize) -> bool {
    let mut seen = vec![false; n_classes];
    idx.iter().for_each(|&i| seen[train.y[i]] = true);
    seen.iter().all(|&s| s)
}

fn fit_subset(
    train: &SplitData,
    test: &SplitData,
    slides: &[String],
    subset: &[String],
    n_classes: usize,
    seed: u64,
) -> Result<SubsetFit> {
    let mut idx = rows_of(train, subset);
    let mut redrawn = 0;
    // A subset without every class cannot be fit; draw another of the same size.
    while !covers_classes(train, &idx, n_classes) {
        if redrawn == MAX_REDRAWS {
            return Ok(SubsetFit { auc: None, redrawn, cv_fallback: false });
        }
        redrawn += 1;
        let mut rng = seed::rng(seed::derive_index(seed::derive(seed, "redraw"), redrawn as u64));
        let pick: Vec<String> = index::sample(&mut rng, slides.len(), subset.len()).into_iter().map(|i| slides[i].clone()).collect();
        idx = rows_of(train, &pick);
    }
    let x = train.x.select(Axis(0), &idx);
    let y: Vec<usize> = idx.iter().map(|&i| train.y[i]).collect();
    let groups: Vec<&String> = idx.iter().map(|&i| &train.slides[i]).collect();
    let (inverse_reg, cv_fallback) = match cross_validate(x.view(), &y, &groups, n_classes, seed::derive(seed, "cv")) {
        Ok(cv) => (cv.inverse_reg, false),
        Err(Error::Degenerate(_) | Error::InvalidInput(_)) => (FALLBACK_INVERSE_REG, true),
        Err(e) => return Err(e),
    };
    let model = train_logreg(x.view(), &y, n_classes, inverse_reg)?;
    let auc = auc_macro(model.predict_proba(test.x.view()).view(), &test.y)?;
    Ok(SubsetFit { auc: Some(auc), redrawn, cv_fallback })
}

/// Fits a probe on each titration subset of the training slides and scores
/// it on the full test split. A subset missing a class is replaced by a new
/// draw of the same size, up to [`MAX_REDRAWS`] times, and skipped after
/// that. Subsets too small for cross-validation use
/// [`FALLBACK_INVERSE_REG`].
pub fn titration_curve(
    train: &SplitData,
    test: &SplitData,
    n_classes: usize,
    fractions: &[f64],
    subsamples: usize,
    seed: u64,
) -> Result<Vec<TitrationPoint>> {
    let mut slides: Vec<String> = train.slides.clone();
    slides.sort();
    slides.dedup();
    let draws = titrate_slides(&slides, fractions, subsamples, seed::derive(seed, "draw"))?;
    let units: Vec<(usize, usize)> = (0..draws.len()).flat_map(|d| (0..subsamples).map(move |s| (d, s))).collect();
    let fits = units
        .par_iter()
        .map(|&(d, s)| {
            let key = seed::derive(seed, &format!("fit/{d}/{s}"));
            fit_subset(train, test, &slides, &draws[d].subsets[s], n_classes, key)
        })
        .collect::<Result<Vec<SubsetFit>>>()?;
    draws
        .iter()
        .enumerate()
        .map(|(d, draw)| {
            let part = &fits[d * subsamples..(d + 1) * subsamples];
            let aucs: Vec<f64> = part.iter().filter_map(|f| f.auc).collect();
            if aucs.is_empty() {
                return Err(Error::Degenerate(format!(
                    "no subset of {} slides at fraction {} contains every class",
                    draw.subsets[0].len(),
                    draw.fraction
                )));
            }
            Ok(TitrationPoint {
                fraction: draw.fraction,
                n_slides: draw.subsets[0].len(),
                mean_auc: aucs.iter().sum::<f64>() / aucs.len() as f64,
                aucs,
                redrawn: part.iter().map(|f| f.redrawn).sum(),
                skipped: part.iter().filter(|f| f.auc.is_none()).count(),
                cv_fallbacks: part.iter().filter(|f| f.cv_fallback).count(),
            })
        })
        .collect()
}

/// Reads `case_id` and `label` columns.
pub fn read_case_labels(path: &Path) -> Result<BTreeMap<String, String>> {
    let t = Table::read(path)?;
    let (ci, li) = (t.column("case_id")?, t.column("label")?);
    let mut out = BTreeMap::new();
    for (n, row) in t.rows.iter().enumerate() {
        if out.insert(row[ci].clone(), row[li].clone()).is_some() {
            return Err(t.error(n, format!("duplicate case {}", row[ci])));
        }
    }
    Ok(out)
}

/// Reads a gene x case matrix: the first column holds gene symbols and the
/// header names the cases. Returns gene → case → value.
pub fn read_expression_matrix(path: &Path) -> Result<BTreeMap<String, BTreeMap<String, f64>>> {
    let t = Table::read(path)?;
    if t.header.len() < 2 {
        return Err(Error::format(path, "expression matrix needs a gene column and at least one case"));
    }
    let mut out = BTreeMap::new();
    for (n, row) in t.rows.iter().enumerate() {
        let mut values = BTreeMap::new();
        for (case, v) in t.header[1..].iter().zip(&row[1..]) {
            if v.is_empty() || v.eq_ignore_ascii_case("na") {
                continue;
            }
            let v: f64 = v.parse().map_err(|_| t.error(n, format!("bad value {v:?} for {case}")))?;
            values.insert(case.clone(), v);
        }
        out.insert(row[0].clone(), values);
    }
    Ok(out)
}

/// Reads `case_id`, `followup_years` and `event` (0/1 or true/false)
/// columns and returns the labels of cases with a resolvable outcome.
pub fn read_survival_labels(path: &Path) -> Result<BTreeMap<String, usize>> {
    let t = Table::read(path)?;
    let (ci, fi, ei) = (t.column("case_id")?, t.column("followup_years")?, t.column("event")?);
    let mut out = BTreeMap::new();
    for (n, row) in t.rows.iter().enumerate() {
        let years: f64 = row[fi].parse().map_err(|_| t.error(n, format!("bad follow-up {:?}", row[fi])))?;
        let event = match row[ei].to_ascii_lowercase().as_str() {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(t.error(n, format!("bad event flag {other:?}"))),
        };
        if let Some(l) = survival_label(years, event).map_err(|e| t.error(n, e))? {
            out.insert(row[ci].clone(), l);
        }
    }
    Ok(out)
}
