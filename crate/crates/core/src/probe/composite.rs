use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patch::Magnification;

/// Paths of the per-split label tables of a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFiles {
    pub train: PathBuf,
    pub tune: PathBuf,
    pub test: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: String,
    #[serde(default)]
    pub classes: Vec<String>,
    pub weight: f64,
    #[serde(default)]
    pub splits: Option<SplitFiles>,
}

/// Probe tasks and their weights in the composite metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub tasks: Vec<TaskSpec>,
}

impl BenchmarkSpec {
    /// The eleven-task pathology benchmark with its published weights.
    pub fn pathology_default() -> Self {
        let task = |name: &str, weight: f64| TaskSpec {
            name: name.to_string(),
            classes: Vec::new(),
            weight,
            splits: None,
        };
        Self {
            tasks: vec![
                task("Breast Inv Car", 0.33),
                task("Breast NP", 0.33),
                task("Breast TF", 0.33),
                task("CAMELYON16", 1.0),
                task("Lung AD", 1.0),
                task("CIN", 1.0),
                task("CRC", 1.0),
                task("Gleason NCB", 0.5),
                task("Gleason RP", 0.5),
                task("Tissue type", 0.5),
                task("TCGA study type", 0.5),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::invalid("benchmark has no tasks"));
        }
        let mut names = std::collections::BTreeSet::new();
        for t in &self.tasks {
            if !(t.weight > 0.0 && t.weight.is_finite()) {
                return Err(Error::invalid(format!("task {} has non-positive weight {}", t.name, t.weight)));
            }
            if !names.insert(t.name.as_str()) {
                return Err(Error::invalid(format!("duplicate task name {}", t.name)));
            }
        }
        Ok(())
    }
}

/// Highest AUC among 5x, 10x and 20x; ties go to the higher magnification.
pub fn best_over_magnifications(aucs: &BTreeMap<Magnification, f64>) -> Result<(Magnification, f64)> {
    let mut best: Option<(Magnification, f64)> = None;
    for m in Magnification::PROBE_LEVELS.iter().rev() {
        let auc = *aucs
            .get(m)
            .ok_or_else(|| Error::invalid(format!("missing AUC at {m}")))?;
        if best.is_none_or(|(_, b)| auc > b) {
            best = Some((*m, auc));
        }
    }
    Ok(best.expect("three levels"))
}

/// Weighted mean of per-task AUCs.
pub fn composite_metric(best_aucs: &BTreeMap<String, f64>, spec: &BenchmarkSpec) -> Result<f64> {
    spec.validate()?;
    if best_aucs.len() != spec.tasks.len() {
        let extra: Vec<&String> = best_aucs.keys().filter(|k| !spec.tasks.iter().any(|t| &t.name == *k)).collect();
        if !extra.is_empty() {
            return Err(Error::invalid(format!("AUCs given for unknown tasks {extra:?}")));
        }
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for t in &spec.tasks {
        let auc = best_aucs
            .get(&t.name)
            .ok_or_else(|| Error::invalid(format!("missing AUC for task {}", t.name)))?;
        num += t.weight * auc;
        den += t.weight;
    }
    Ok(num / den)
}
