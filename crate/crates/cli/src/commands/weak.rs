use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Result;
use pathssl_core::aggregate::{
    default_gene_sets, gene_median_labels, geneset_auc, pool_cases, read_case_labels, read_expression_matrix,
    read_survival_labels, weak_eval as evaluate, CaseRecord, GeneSetSpec, WeakEvalResult,
};
use pathssl_core::embeddings::store_read;
use pathssl_core::seed;
use serde::{Deserialize, Serialize};

use super::synth::store_path;
use crate::config::PipelineConfig;
use crate::errors::{require_path, ConfigError};
use crate::rundir::{read_json, RunDir};

pub const WEAK_RESULT: &str = "weak_result.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeakTask {
    pub name: String,
    #[serde(flatten)]
    pub result: WeakEvalResult,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeakReport {
    pub method: String,
    pub feature_mode: String,
    pub tasks: Vec<WeakTask>,
    /// Mean per-gene AUC of each gene set that could be evaluated.
    pub gene_sets: BTreeMap<String, f64>,
}

fn label_paths(cfg: &PipelineConfig) -> Result<(PathBuf, PathBuf, String)> {
    let w = &cfg.weak;
    match (&w.train_labels, &w.test_labels, &w.task) {
        (Some(a), Some(b), _) => Ok((a.clone(), b.clone(), w.task.clone().unwrap_or_else(|| "labels".into()))),
        (None, None, Some(task)) => {
            let dir = cfg.paths.corpus.join("cases").join(task);
            Ok((dir.join("train.tsv"), dir.join("test.tsv"), task.clone()))
        }
        _ => Err(ConfigError("weak: set both train_labels and test_labels, or a corpus task".into()).into()),
    }
}

fn with_labels(cases: &BTreeMap<String, CaseRecord>, ids: &[&String], labels: &BTreeMap<String, usize>) -> Vec<CaseRecord> {
    ids.iter()
        .filter_map(|id| {
            let c = cases.get(*id)?;
            Some(CaseRecord {
                label: Some(*labels.get(*id)?),
                ..c.clone()
            })
        })
        .collect()
}

fn class_ids(train: &BTreeMap<String, String>, test: &BTreeMap<String, String>) -> BTreeMap<String, usize> {
    let mut names: Vec<&String> = train.values().chain(test.values()).collect();
    names.sort();
    names.dedup();
    // Integer labels keep their value; other names are indexed in sorted order.
    let numeric = names.iter().all(|n| n.parse::<usize>().is_ok());
    train
        .iter()
        .chain(test)
        .map(|(c, l)| {
            let id = if numeric { l.parse().expect("checked") } else { names.binary_search(&l).expect("present") };
            (c.clone(), id)
        })
        .collect()
}

pub fn weak_eval(cfg: &PipelineConfig, out: Option<&Path>) -> Result<()> {
    let w = &cfg.weak;
    let (train_path, test_path, task_name) = label_paths(cfg)?;
    let store = store_path(&cfg.paths.stores, w.magnification);
    for (p, what) in [(&train_path, "train case table"), (&test_path, "test case table"), (&store, "embedding store")] {
        require_path(p, what)?;
    }
    for (p, what) in [(&w.expression, "expression matrix"), (&w.gene_sets, "gene-set file"), (&w.survival, "survival table")] {
        if let Some(p) = p {
            require_path(p, what)?;
        }
    }
    let train_labels = read_case_labels(&train_path)?;
    let test_labels = read_case_labels(&test_path)?;
    let records = store_read(&store)?;
    let run = RunDir::start(out.unwrap_or(&cfg.paths.reports.join("weak-eval")), cfg)?;
    let pooled: BTreeMap<String, CaseRecord> = pool_cases(&records, w.feature_mode, w.sample_n, seed::derive(cfg.master_seed, "pool"))?
        .into_iter()
        .map(|c| (c.case_id.clone(), c))
        .collect();
    let train_ids: Vec<&String> = train_labels.keys().collect();
    let test_ids: Vec<&String> = test_labels.keys().collect();
    let eval = |name: &str, labels: &BTreeMap<String, usize>| -> Result<WeakTask> {
        let result = evaluate(
            &with_labels(&pooled, &train_ids, labels),
            &with_labels(&pooled, &test_ids, labels),
            w.bootstrap_replicates,
            seed::derive(cfg.master_seed, &format!("weak/{name}")),
        )?;
        Ok(WeakTask {
            name: name.to_string(),
            result,
        })
    };

    let mut tasks = vec![eval(&task_name, &class_ids(&train_labels, &test_labels))?];
    if let Some(p) = &w.survival {
        tasks.push(eval("survival", &read_survival_labels(p)?)?);
    }
    let mut gene_sets = BTreeMap::new();
    if let Some(p) = &w.expression {
        let expression = read_expression_matrix(p)?;
        let sets: Vec<GeneSetSpec> = match &w.gene_sets {
            Some(g) => read_json(g)?,
            None => default_gene_sets(),
        };
        let mut per_gene = BTreeMap::new();
        for set in &sets {
            for gene in &set.genes {
                if per_gene.contains_key(gene) {
                    continue;
                }
                let Some(values) = expression.get(gene) else { continue };
                let cohort: BTreeMap<String, f64> = values
                    .iter()
                    .filter(|(c, _)| pooled.contains_key(*c) && (train_labels.contains_key(*c) || test_labels.contains_key(*c)))
                    .map(|(c, v)| (c.clone(), *v))
                    .collect();
                let labels = gene_median_labels(&cohort, gene)?;
                let t = eval(&format!("gene:{gene}"), &labels)?;
                per_gene.insert(gene.clone(), t.result.auc);
            }
            if let Ok(mean) = geneset_auc(&per_gene, set) {
                gene_sets.insert(set.name.clone(), mean);
            }
        }
    }
    let report = WeakReport {
        method: w.method.clone(),
        feature_mode: w.feature_mode.to_string(),
        tasks,
        gene_sets,
    };
    run.write_json(WEAK_RESULT, &report)?;
    let table = render_weak_table(&[report]);
    run.write("weak_table.txt", &table)?;
    print!("{table}");
    run.finish()
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

/// Methods as rows and tasks as columns; each header carries the
/// train/test case counts.
pub fn render_weak_table(reports: &[WeakReport]) -> String {
    let mut columns: Vec<(String, String)> = Vec::new();
    for r in reports {
        for t in r.tasks.iter().filter(|t| !t.name.starts_with("gene:")) {
            if !columns.iter().any(|(n, _)| n == &t.name) {
                columns.push((t.name.clone(), format!("{} ({}/{})", t.name, t.result.n_train, t.result.n_test)));
            }
        }
        for g in r.gene_sets.keys() {
            if !columns.iter().any(|(n, _)| n == g) {
                columns.push((g.clone(), g.clone()));
            }
        }
    }
    let mut s = String::from("Method\tFeatures");
    for (_, h) in &columns {
        s.push('\t');
        s.push_str(h);
    }
    s.push('\n');
    for r in reports {
        let _ = write!(s, "{}\t{}", r.method, r.feature_mode);
        for (name, _) in &columns {
            let cell = match r.tasks.iter().find(|t| &t.name == name) {
                Some(t) => format!("{} [{} - {}]", pct(t.result.auc), pct(t.result.ci.lo), pct(t.result.ci.hi)),
                None => r.gene_sets.get(name).map(|v| pct(*v)).unwrap_or_else(|| "-".into()),
            };
            let _ = write!(s, "\t{cell}");
        }
        s.push('\n');
    }
    s
}
