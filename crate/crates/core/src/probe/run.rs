use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{concatenate, Array2, Axis};
use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::auc::auc_macro;
use super::bootstrap::{bootstrap_ci, bootstrap_ci_multi, group_indices, BootstrapCi, DEFAULT_REPLICATES};
use super::composite::{best_over_magnifications, composite_metric, BenchmarkSpec, TaskSpec};
use super::cv::cross_validate;
use super::logreg::train_logreg;
use crate::embeddings::{compose_feature, store_read, FeatureMode};
use crate::error::{Error, Result};
use crate::patch::Magnification;
use crate::seed;
use crate::table::Table;

/// Features, labels and slide ids of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitData {
    pub x: Array2<f64>,
    pub y: Vec<usize>,
    pub slides: Vec<String>,
}

impl SplitData {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn select(&self, idx: &[usize]) -> SplitData {
        SplitData {
            x: self.x.select(Axis(0), idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            slides: idx.iter().map(|&i| self.slides[i].clone()).collect(),
        }
    }

    fn concat(a: &SplitData, b: &SplitData) -> Result<SplitData> {
        Ok(SplitData {
            x: concatenate![Axis(0), a.x, b.x],
            y: a.y.iter().chain(&b.y).copied().collect(),
            slides: a.slides.iter().chain(&b.slides).cloned().collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSplits {
    pub train: SplitData,
    pub tune: SplitData,
    pub test: SplitData,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub name: String,
    pub weight: f64,
    pub n_classes: usize,
    pub per_magnification: BTreeMap<Magnification, TaskSplits>,
}

impl TaskData {
    /// A copy with labels permuted within each split. The permutation is
    /// shared across magnifications so paired patches keep matching labels.
    pub fn with_shuffled_labels(&self, seed: u64) -> TaskData {
        let mut out = self.clone();
        let phases = ["train", "tune", "test"];
        for (phase, key) in phases.iter().enumerate() {
            let mut perm: Option<Vec<usize>> = None;
            for splits in out.per_magnification.values_mut() {
                let split = [&mut splits.train, &mut splits.tune, &mut splits.test].into_iter().nth(phase).expect("three splits");
                let perm = perm.get_or_insert_with(|| {
                    let mut p: Vec<usize> = (0..split.y.len()).collect();
                    p.shuffle(&mut seed::rng(seed::derive(seed, &format!("{}/{key}", self.name))));
                    p
                });
                split.y = perm.iter().map(|&i| split.y[i]).collect();
            }
        }
        out
    }
}

/// Patch counts and bootstrap size of the probe protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// Training patches when evaluating on the tune split.
    pub train: usize,
    /// Tune patches evaluated in tune mode.
    pub tune: usize,
    /// Train plus tune patches used to fit the test-mode model.
    pub train_tune: usize,
    pub test: usize,
    pub bootstrap_replicates: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            train: 10_000,
            tune: 5_000,
            train_tune: 15_000,
            test: 5_000,
            bootstrap_replicates: DEFAULT_REPLICATES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnificationResult {
    pub magnification: Magnification,
    pub tune_inverse_reg: f64,
    pub tune_auc: f64,
    pub test_inverse_reg: f64,
    pub test_auc: f64,
    pub n_train: usize,
    pub n_tune: usize,
    pub n_train_tune: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub name: String,
    pub weight: f64,
    pub per_magnification: Vec<MagnificationResult>,
    /// Chosen by tune AUC.
    pub selected_magnification: Magnification,
    /// Test AUC at the selected magnification.
    pub best_auc: f64,
    /// Highest test AUC over magnifications, for reference.
    pub best_test_auc_any: f64,
    pub ci: BootstrapCi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub feature_mode: String,
    pub seed: u64,
    pub tasks: Vec<TaskResult>,
    /// Weighted mean of `best_auc`.
    pub composite: f64,
    pub composite_ci: BootstrapCi,
    /// Weighted mean of `best_test_auc_any`.
    pub composite_test_selected: f64,
}

fn sample(n: usize, k: usize, seed: u64) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut idx = index::sample(&mut seed::rng(seed), n, k).into_vec();
    idx.sort_unstable();
    idx
}

struct Fit {
    inverse_reg: f64,
    auc: f64,
    probs: Array2<f64>,
    eval: SplitData,
}

fn fit_and_score(train: &SplitData, eval: &SplitData, n_classes: usize, seed: u64) -> Result<Fit> {
    let cv = cross_validate(train.x.view(), &train.y, &train.slides, n_classes, seed)?;
    let model = train_logreg(train.x.view(), &train.y, n_classes, cv.inverse_reg)?;
    let probs = model.predict_proba(eval.x.view());
    let auc = auc_macro(probs.view(), &eval.y)?;
    Ok(Fit {
        inverse_reg: cv.inverse_reg,
        auc,
        probs,
        eval: eval.clone(),
    })
}

fn eval_magnification(
    task: &TaskData,
    mag: Magnification,
    splits: &TaskSplits,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<(MagnificationResult, Fit)> {
    let key = |phase: &str| seed::derive(seed, &format!("{}/{}/{}", task.name, mag, phase));
    let train = splits.train.select(&sample(splits.train.len(), cfg.train, key("train")));
    let tune = splits.tune.select(&sample(splits.tune.len(), cfg.tune, key("tune")));
    let tune_fit = fit_and_score(&train, &tune, task.n_classes, key("cv-tune"))?;

    let pooled = SplitData::concat(&splits.train, &splits.tune)?;
    let train_tune = pooled.select(&sample(pooled.len(), cfg.train_tune, key("train-tune")));
    let test = splits.test.select(&sample(splits.test.len(), cfg.test, key("test")));
    let test_fit = fit_and_score(&train_tune, &test, task.n_classes, key("cv-test"))?;
    Ok((
        MagnificationResult {
            magnification: mag,
            tune_inverse_reg: tune_fit.inverse_reg,
            tune_auc: tune_fit.auc,
            test_inverse_reg: test_fit.inverse_reg,
            test_auc: test_fit.auc,
            n_train: train.len(),
            n_tune: tune.len(),
            n_train_tune: train_tune.len(),
            n_test: test.len(),
        },
        test_fit,
    ))
}

fn resampled_auc(fit: &Fit, idx: &[usize]) -> Option<f64> {
    let probs = fit.probs.select(Axis(0), idx);
    let y: Vec<usize> = idx.iter().map(|&i| fit.eval.y[i]).collect();
    auc_macro(probs.view(), &y).ok()
}

/// Runs the probe protocol on in-memory data. For every task and
/// magnification a model is tuned by cross-validation on the train sample and
/// scored on the tune sample, and another is fit on train plus tune and
/// scored on the test sample. The magnification is chosen on tune AUC; the
/// composite and its slide bootstrap interval use the test AUCs.
pub fn run_probe(tasks: &[TaskData], mode: FeatureMode, cfg: &ProbeConfig, seed: u64) -> Result<ProbeResult> {
    if tasks.is_empty() {
        return Err(Error::invalid("no probe tasks"));
    }
    let units: Vec<(usize, Magnification)> = tasks
        .iter()
        .enumerate()
        .flat_map(|(t, task)| task.per_magnification.keys().map(move |&m| (t, m)))
        .collect();
    let fits: Vec<(MagnificationResult, Fit)> = units
        .par_iter()
        .map(|&(t, m)| eval_magnification(&tasks[t], m, &tasks[t].per_magnification[&m], cfg, seed))
        .collect::<Result<_>>()?;

    let mut results = Vec::with_capacity(tasks.len());
    let mut selected_fits: Vec<&Fit> = Vec::with_capacity(tasks.len());
    for (t, task) in tasks.iter().enumerate() {
        let mine: Vec<&(MagnificationResult, Fit)> = units
            .iter()
            .zip(&fits)
            .filter(|((ti, _), _)| *ti == t)
            .map(|(_, f)| f)
            .collect();
        let tune_map: BTreeMap<Magnification, f64> = mine.iter().map(|(r, _)| (r.magnification, r.tune_auc)).collect();
        let test_map: BTreeMap<Magnification, f64> = mine.iter().map(|(r, _)| (r.magnification, r.test_auc)).collect();
        let (selected, _) = best_over_magnifications(&tune_map)?;
        let (_, best_any) = best_over_magnifications(&test_map)?;
        let fit = &mine.iter().find(|(r, _)| r.magnification == selected).expect("selected exists").1;
        let groups = group_indices(&fit.eval.slides);
        let ci = bootstrap_ci(
            &groups,
            |idx| resampled_auc(fit, idx),
            cfg.bootstrap_replicates,
            seed::derive(seed, &format!("{}/bootstrap", task.name)),
        )?;
        selected_fits.push(fit);
        results.push(TaskResult {
            name: task.name.clone(),
            weight: task.weight,
            per_magnification: mine.iter().map(|(r, _)| r.clone()).collect(),
            selected_magnification: selected,
            best_auc: test_map[&selected],
            best_test_auc_any: best_any,
            ci,
        });
    }

    let spec = BenchmarkSpec {
        tasks: tasks
            .iter()
            .map(|t| TaskSpec {
                name: t.name.clone(),
                classes: Vec::new(),
                weight: t.weight,
                splits: None,
            })
            .collect(),
    };
    let composite = composite_metric(&results.iter().map(|r| (r.name.clone(), r.best_auc)).collect(), &spec)?;
    let composite_test_selected =
        composite_metric(&results.iter().map(|r| (r.name.clone(), r.best_test_auc_any)).collect(), &spec)?;
    let sets: Vec<Vec<Vec<usize>>> = selected_fits.iter().map(|f| group_indices(&f.eval.slides)).collect();
    let composite_ci = bootstrap_ci_multi(
        &sets,
        |sample| {
            let mut aucs = BTreeMap::new();
            for ((fit, idx), task) in selected_fits.iter().zip(sample).zip(tasks) {
                aucs.insert(task.name.clone(), resampled_auc(fit, idx)?);
            }
            composite_metric(&aucs, &spec).ok()
        },
        cfg.bootstrap_replicates,
        seed::derive(seed, "composite/bootstrap"),
    )?;
    Ok(ProbeResult {
        feature_mode: mode.to_string(),
        seed,
        tasks: results,
        composite,
        composite_ci,
        composite_test_selected,
    })
}

/// One row of a split label table.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRow {
    pub patch_id: String,
    pub slide_id: String,
    pub label: String,
}

/// Reads a delimited table with `patch_id`, `slide_id` and `label` columns.
pub fn read_label_table(path: &Path) -> Result<Vec<LabelRow>> {
    let table = Table::read(path)?;
    let (pi, si, li) = (table.column("patch_id")?, table.column("slide_id")?, table.column("label")?);
    Ok(table
        .rows
        .iter()
        .map(|f| LabelRow {
            patch_id: f[pi].clone(),
            slide_id: f[si].clone(),
            label: f[li].clone(),
        })
        .collect())
}

fn class_index(task: &TaskSpec, label: &str, path: &Path) -> Result<usize> {
    if task.classes.is_empty() {
        label
            .parse()
            .map_err(|_| Error::format(path, format!("label {label:?} is not a class index")))
    } else {
        task.classes
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::format(path, format!("label {label:?} is not a class of task {}", task.name)))
    }
}

/// Joins split label tables with embedding stores (one per magnification)
/// by patch id and composes features with `mode`.
pub fn load_task_data(
    spec: &BenchmarkSpec,
    stores: &BTreeMap<Magnification, PathBuf>,
    mode: FeatureMode,
) -> Result<Vec<TaskData>> {
    spec.validate()?;
    let mut features: BTreeMap<Magnification, HashMap<String, Vec<f64>>> = BTreeMap::new();
    for (&mag, path) in stores {
        let records = store_read(path)?;
        let map = records
            .par_iter()
            .map(|r| Ok((r.patch_id.clone(), compose_feature(r, mode)?)))
            .collect::<Result<HashMap<_, _>>>()?;
        features.insert(mag, map);
    }
    spec.tasks
        .iter()
        .map(|task| {
            let files = task
                .splits
                .as_ref()
                .ok_or_else(|| Error::invalid(format!("task {} has no split files", task.name)))?;
            let tables = [&files.train, &files.tune, &files.test]
                .map(|p| read_label_table(p).map(|rows| (p.clone(), rows)));
            let [train, tune, test] = tables;
            let (train, tune, test) = (train?, tune?, test?);
            let mut labels = Vec::new();
            for (path, rows) in [&train, &tune, &test] {
                labels.push(rows.iter().map(|r| class_index(task, &r.label, path)).collect::<Result<Vec<_>>>()?);
            }
            let n_classes = if task.classes.is_empty() {
                labels.iter().flatten().max().map_or(0, |m| m + 1)
            } else {
                task.classes.len()
            };
            let mut per_magnification = BTreeMap::new();
            for (&mag, feats) in &features {
                let build = |(path, rows): &(PathBuf, Vec<LabelRow>), y: &Vec<usize>| -> Result<SplitData> {
                    let mut data = Vec::new();
                    let mut width = None;
                    for r in rows {
                        let f = feats.get(&r.patch_id).ok_or_else(|| {
                            Error::format(path, format!("patch {} missing from the {mag} store", r.patch_id))
                        })?;
                        width.get_or_insert(f.len());
                        data.extend_from_slice(f);
                    }
                    Ok(SplitData {
                        x: Array2::from_shape_vec((rows.len(), width.unwrap_or(0)), data)
                            .map_err(|e| Error::invalid(e.to_string()))?,
                        y: y.clone(),
                        slides: rows.iter().map(|r| r.slide_id.clone()).collect(),
                    })
                };
                per_magnification.insert(
                    mag,
                    TaskSplits {
                        train: build(&train, &labels[0])?,
                        tune: build(&tune, &labels[1])?,
                        test: build(&test, &labels[2])?,
                    },
                );
            }
            Ok(TaskData {
                name: task.name.clone(),
                weight: task.weight,
                n_classes,
                per_magnification,
            })
        })
        .collect()
}

/// Loads the benchmark from disk and runs [`run_probe`].
pub fn run_linear_probe(
    spec: &BenchmarkSpec,
    stores: &BTreeMap<Magnification, PathBuf>,
    mode: FeatureMode,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<ProbeResult> {
    let tasks = load_task_data(spec, stores, mode)?;
    run_probe(&tasks, mode, cfg, seed)
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

/// Plain-text table: one row per task and magnification, then the
/// composite in `metric [lo - hi]` form.
pub fn render_probe_table(method: &str, result: &ProbeResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Task\tWeight\tMagnification\tTune AUC\tTest AUC\tSelected");
    for t in &result.tasks {
        for m in &t.per_magnification {
            let mark = if m.magnification == t.selected_magnification { "*" } else { "" };
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}",
                t.name,
                t.weight,
                m.magnification,
                pct(m.tune_auc),
                pct(m.test_auc),
                mark
            );
        }
        let _ = writeln!(
            s,
            "{}\t{}\tbest\t\t{} [{} - {}]\t",
            t.name,
            t.weight,
            pct(t.best_auc),
            pct(t.ci.lo),
            pct(t.ci.hi)
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "Method\tFeatures\tLinear Probe Metric [95% CI]");
    let _ = writeln!(
        s,
        "{}\t{}\t{} [{} - {}]",
        method,
        result.feature_mode,
        pct(result.composite),
        pct(result.composite_ci.lo),
        pct(result.composite_ci.hi)
    );
    s
}
