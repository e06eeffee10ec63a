//! On-disk layout of the synthetic corpus written by `synth-gen`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pathssl_core::patch::{Magnification, Patch};
use pathssl_core::probe::BenchmarkSpec;
use pathssl_core::synth::{plan_benchmark, render_planned, PatchPlan, SynthBenchmark};
use serde::{Deserialize, Serialize};

use crate::errors::require_path;
use crate::rundir::read_json;

pub const MANIFEST: &str = "manifest.tsv";
pub const SYNTH_DEF: &str = "synth.json";
pub const BENCHMARK: &str = "benchmark.json";
const HEADER: &str = "patch_id\ttask\tsplit\tslide_id\tcase_id\tmagnification\tlabel\tfile";

/// The benchmark definition and seed a corpus was rendered from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDef {
    pub seed: u64,
    pub benchmark: SynthBenchmark,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub patch_id: String,
    pub task: String,
    pub split: String,
    pub slide_id: String,
    pub case_id: String,
    pub magnification: Magnification,
    pub label: usize,
    /// Relative to the corpus directory; empty when no PNG was written.
    pub file: String,
}

pub fn png_path(plan: &PatchPlan) -> String {
    format!("patches/{}/{}/{}.png", plan.task_name, plan.magnification, plan.patch_id)
}

pub fn render_manifest(plans: &[PatchPlan], with_files: bool) -> String {
    let mut s = String::with_capacity(plans.len() * 96);
    s.push_str(HEADER);
    s.push('\n');
    for p in plans {
        let file = if with_files { png_path(p) } else { String::new() };
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            p.patch_id, p.task_name, p.split, p.slide_id, p.case_id, p.magnification, p.label, file
        );
    }
    s
}

/// A corpus directory opened for reading.
pub struct Corpus {
    pub dir: PathBuf,
    pub def: SynthDef,
    pub rows: Vec<ManifestRow>,
}

impl Corpus {
    pub fn open(dir: &Path) -> Result<Corpus> {
        require_path(dir, "corpus directory")?;
        let def: SynthDef = read_json(&dir.join(SYNTH_DEF))?;
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            bail!(pathssl_core::Error::Format {
                path,
                message: "unexpected manifest header".into()
            });
        }
        let rows = lines
            .enumerate()
            .map(|(n, line)| {
                let f: Vec<&str> = line.split('\t').collect();
                let bad = |m: String| pathssl_core::Error::Format {
                    path: path.clone(),
                    message: format!("line {}: {m}", n + 2),
                };
                if f.len() != 8 {
                    return Err(bad(format!("expected 8 fields, got {}", f.len())));
                }
                Ok(ManifestRow {
                    patch_id: f[0].into(),
                    task: f[1].into(),
                    split: f[2].into(),
                    slide_id: f[3].into(),
                    case_id: f[4].into(),
                    magnification: f[5].parse().map_err(|e: pathssl_core::Error| bad(e.to_string()))?,
                    label: f[6].parse().map_err(|_| bad(format!("bad label {:?}", f[6])))?,
                    file: f[7].into(),
                })
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Corpus {
            dir: dir.to_path_buf(),
            def,
            rows,
        })
    }

    /// Loader for patches of this corpus: reads the PNG when one was
    /// written and re-renders from the benchmark definition otherwise.
    pub fn loader(&self) -> Result<PatchLoader<'_>> {
        let plans = if self.rows.iter().any(|r| r.file.is_empty()) {
            let plans = plan_benchmark(&self.def.benchmark, self.def.seed)?;
            Some(
                plans
                    .into_iter()
                    .map(|p| ((p.patch_id.clone(), p.magnification), p))
                    .collect(),
            )
        } else {
            None
        };
        Ok(PatchLoader { corpus: self, plans })
    }

    /// The probe benchmark with split paths made absolute.
    pub fn benchmark_spec(&self) -> Result<BenchmarkSpec> {
        let mut spec: BenchmarkSpec = read_json(&self.dir.join(BENCHMARK))?;
        for t in &mut spec.tasks {
            if let Some(s) = &mut t.splits {
                for p in [&mut s.train, &mut s.tune, &mut s.test] {
                    *p = self.dir.join(&*p);
                }
            }
        }
        Ok(spec)
    }
}

pub struct PatchLoader<'a> {
    corpus: &'a Corpus,
    plans: Option<HashMap<(String, Magnification), PatchPlan>>,
}

impl PatchLoader<'_> {
    pub fn load(&self, row: &ManifestRow) -> Result<Patch> {
        let patch = if row.file.is_empty() {
            let plan = self
                .plans
                .as_ref()
                .and_then(|m| m.get(&(row.patch_id.clone(), row.magnification)))
                .ok_or_else(|| pathssl_core::Error::Format {
                    path: self.corpus.dir.join(MANIFEST),
                    message: format!("patch {} at {} is not part of the corpus definition", row.patch_id, row.magnification),
                })?;
            render_planned(&self.corpus.def.benchmark, plan)?
        } else {
            Patch::read_png(self.corpus.dir.join(&row.file))?
        };
        Ok(patch.with_provenance(row.slide_id.clone(), row.case_id.clone(), row.magnification))
    }
}
