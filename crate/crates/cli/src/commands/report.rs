use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use pathssl_core::probe::ProbeResult;

use super::probe::PROBE_RESULT;
use super::weak::{render_weak_table, WeakReport, WEAK_RESULT};
use crate::config::{PipelineConfig, ResultRef};
use crate::errors::{require_path, ConfigError};
use crate::rundir::{read_json, RunDir};

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

/// File-name safe version of a task name.
fn slug(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// One row per method: per-task test AUC at the selected magnification and
/// the composite with its interval.
pub fn render_probe_summary(results: &[(String, ProbeResult)]) -> String {
    let mut s = String::from("Method\tFeatures");
    let tasks: Vec<&str> = results
        .first()
        .map(|(_, r)| r.tasks.iter().map(|t| t.name.as_str()).collect())
        .unwrap_or_default();
    for t in &tasks {
        let _ = write!(s, "\t{t}");
    }
    s.push_str("\tLinear Probe Metric [95% CI]\n");
    for (method, r) in results {
        let _ = write!(s, "{method}\t{}", r.feature_mode);
        for t in &tasks {
            let cell = r.tasks.iter().find(|x| x.name == *t).map_or("-".to_string(), |x| pct(x.best_auc));
            let _ = write!(s, "\t{cell}");
        }
        let _ = writeln!(s, "\t{} [{} - {}]", pct(r.composite), pct(r.composite_ci.lo), pct(r.composite_ci.hi));
    }
    s
}

fn defaults(refs: &[ResultRef], fallback: ResultRef) -> Vec<ResultRef> {
    if refs.is_empty() {
        if fallback.path.exists() {
            vec![fallback]
        } else {
            Vec::new()
        }
    } else {
        refs.to_vec()
    }
}

pub fn report(cfg: &PipelineConfig, out: Option<&Path>) -> Result<()> {
    let probe_refs = defaults(
        &cfg.report.probe,
        ResultRef {
            method: cfg.probe.method.clone(),
            path: cfg.paths.reports.join("probe").join(PROBE_RESULT),
        },
    );
    let weak_refs = defaults(
        &cfg.report.weak,
        ResultRef {
            method: cfg.weak.method.clone(),
            path: cfg.paths.reports.join("weak-eval").join(WEAK_RESULT),
        },
    );
    if probe_refs.is_empty() && weak_refs.is_empty() {
        return Err(ConfigError(format!("no probe or weak results found under {}", cfg.paths.reports.display())).into());
    }
    for r in probe_refs.iter().chain(&weak_refs) {
        require_path(&r.path, "result document")?;
    }
    let probes: Vec<(String, ProbeResult)> = probe_refs
        .iter()
        .map(|r| Ok((r.method.clone(), read_json(&r.path)?)))
        .collect::<Result<_>>()?;
    let weak: Vec<WeakReport> = weak_refs
        .iter()
        .map(|r| {
            let mut w: WeakReport = read_json(&r.path)?;
            w.method = r.method.clone();
            Ok(w)
        })
        .collect::<Result<_>>()?;

    let run = RunDir::start(out.unwrap_or(&cfg.paths.reports.join("report")), cfg)?;
    let mut text = String::new();
    if !probes.is_empty() {
        text.push_str("Patch-level linear probe (test AUC x 100)\n");
        text.push_str(&render_probe_summary(&probes));
        let mut names: Vec<&str> = probes.iter().flat_map(|(_, r)| r.tasks.iter().map(|t| t.name.as_str())).collect();
        names.sort();
        names.dedup();
        for name in names {
            let mut bars = String::from("method\tauc\tci_lo\tci_hi\tmagnification\n");
            for (m, r) in &probes {
                if let Some(t) = r.tasks.iter().find(|t| t.name == name) {
                    let _ = writeln!(bars, "{m}\t{}\t{}\t{}\t{}", t.best_auc, t.ci.lo, t.ci.hi, t.selected_magnification);
                }
            }
            run.write(format!("bars/probe_{}.tsv", slug(name)), &bars)?;
        }
        let mut bars = String::from("method\tauc\tci_lo\tci_hi\n");
        for (m, r) in &probes {
            let _ = writeln!(bars, "{m}\t{}\t{}\t{}", r.composite, r.composite_ci.lo, r.composite_ci.hi);
        }
        run.write("bars/probe_composite.tsv", &bars)?;
    }
    if !weak.is_empty() {
        if !text.is_empty() {
            text.push('\n');
        }
        text.push_str("Weakly supervised case-level evaluation (test AUC x 100)\n");
        text.push_str(&render_weak_table(&weak));
        let mut names: Vec<&str> = weak.iter().flat_map(|w| w.tasks.iter().map(|t| t.name.as_str())).collect();
        names.sort();
        names.dedup();
        for name in names.into_iter().filter(|n| !n.starts_with("gene:")) {
            let mut bars = String::from("method\tauc\tci_lo\tci_hi\n");
            for w in &weak {
                if let Some(t) = w.tasks.iter().find(|t| t.name == name) {
                    let _ = writeln!(bars, "{}\t{}\t{}\t{}", w.method, t.result.auc, t.result.ci.lo, t.result.ci.hi);
                }
            }
            run.write(format!("bars/weak_{}.tsv", slug(name)), &bars)?;
        }
    }
    run.write("report.txt", &text)?;
    print!("{text}");
    run.finish()
}
