use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use pathssl_core::aggregate::{titration_curve, TitrationPoint};
use pathssl_core::probe::{load_task_data, render_probe_table, run_probe, BenchmarkSpec};
use pathssl_core::seed;
use serde::{Deserialize, Serialize};

use super::corpus::Corpus;
use super::synth::find_stores;
use crate::config::PipelineConfig;
use crate::errors::{require_path, ConfigError};
use crate::rundir::RunDir;

pub const PROBE_RESULT: &str = "probe_result.json";

fn stores(cfg: &PipelineConfig) -> Result<std::collections::BTreeMap<pathssl_core::Magnification, std::path::PathBuf>> {
    require_path(&cfg.paths.stores, "store directory")?;
    let stores = find_stores(&cfg.paths.stores);
    if stores.is_empty() {
        return Err(ConfigError(format!("no embedding stores in {}", cfg.paths.stores.display())).into());
    }
    Ok(stores)
}

pub fn probe(cfg: &PipelineConfig, out: Option<&Path>) -> Result<()> {
    let corpus = Corpus::open(&cfg.paths.corpus)?;
    let spec = corpus.benchmark_spec()?;
    let stores = stores(cfg)?;
    let pc = &cfg.probe;
    let run = RunDir::start(out.unwrap_or(&cfg.paths.reports.join("probe")), cfg)?;
    let mut tasks = load_task_data(&spec, &stores, pc.feature_mode)?;
    if pc.shuffle_labels {
        tasks = tasks
            .iter()
            .map(|t| t.with_shuffled_labels(seed::derive(cfg.master_seed, "shuffle")))
            .collect();
    }
    let result = run_probe(&tasks, pc.feature_mode, &pc.sizes, cfg.master_seed)?;
    run.write_json(PROBE_RESULT, &result)?;
    let table = render_probe_table(&pc.method, &result);
    run.write("probe_table.txt", &table)?;
    print!("{table}");
    run.finish()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TitrationReport {
    pub task: String,
    pub magnification: pathssl_core::Magnification,
    pub feature_mode: String,
    pub points: Vec<TitrationPoint>,
}

pub fn titrate(cfg: &PipelineConfig, out: Option<&Path>) -> Result<()> {
    let tc = &cfg.titrate;
    let corpus = Corpus::open(&cfg.paths.corpus)?;
    let full = corpus.benchmark_spec()?;
    let name = tc.task.clone().unwrap_or_else(|| full.tasks[0].name.clone());
    let task = full
        .tasks
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| ConfigError(format!("titrate.task {name:?} is not a corpus task")))?;
    let mut stores = stores(cfg)?;
    stores.retain(|m, _| *m == tc.magnification);
    if stores.is_empty() {
        return Err(ConfigError(format!("no {} store in {}", tc.magnification, cfg.paths.stores.display())).into());
    }
    let spec = BenchmarkSpec { tasks: vec![task.clone()] };
    let data = load_task_data(&spec, &stores, tc.feature_mode)?.remove(0);
    let splits = &data.per_magnification[&tc.magnification];
    let run = RunDir::start(out.unwrap_or(&cfg.paths.reports.join("titrate")), cfg)?;
    let points = titration_curve(
        &splits.train,
        &splits.test,
        data.n_classes,
        &tc.fractions,
        tc.subsamples,
        seed::derive(cfg.master_seed, "titrate"),
    )?;
    let mut table = String::from("fraction\tslides\tmean_auc\tsubsample_aucs\tredrawn\tskipped\tcv_fallbacks\n");
    for p in &points {
        let each: Vec<String> = p.aucs.iter().map(|a| format!("{a:.4}")).collect();
        let _ = writeln!(
            table,
            "{}\t{}\t{:.4}\t{}\t{}\t{}\t{}",
            p.fraction,
            p.n_slides,
            p.mean_auc,
            each.join(","),
            p.redrawn,
            p.skipped,
            p.cv_fallbacks
        );
    }
    run.write_json(
        "titration.json",
        &TitrationReport {
            task: name,
            magnification: tc.magnification,
            feature_mode: tc.feature_mode.to_string(),
            points,
        },
    )?;
    run.write("titration.tsv", &table)?;
    print!("{table}");
    run.finish()
}
