use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use pathssl_core::embeddings::{store_write, EmbeddingRecord};
use pathssl_core::probe::{BenchmarkSpec, SplitFiles, TaskSpec};
use pathssl_core::synth::{plan_benchmark, render_planned, toy_encoder, LabelMode, Split};
use pathssl_core::Magnification;
use rayon::prelude::*;

use super::corpus::{png_path, render_manifest, Corpus, SynthDef, BENCHMARK, MANIFEST, SYNTH_DEF};
use crate::config::PipelineConfig;
use crate::rundir::RunDir;

pub fn synth_gen(cfg: &PipelineConfig, out: Option<&Path>) -> Result<()> {
    let run = RunDir::start(out.unwrap_or(&cfg.paths.corpus), cfg)?;
    let bench = &cfg.synth.benchmark;
    let plans = plan_benchmark(bench, cfg.master_seed)?;
    if cfg.synth.write_png {
        plans.par_iter().try_for_each(|p| -> Result<()> {
            let path = run.join(png_path(p));
            std::fs::create_dir_all(path.parent().expect("nested path"))?;
            render_planned(bench, p)?.write_png(&path)?;
            Ok(())
        })?;
    }
    run.write(MANIFEST, &render_manifest(&plans, cfg.synth.write_png))?;
    run.write_json(
        SYNTH_DEF,
        &SynthDef {
            seed: cfg.master_seed,
            benchmark: bench.clone(),
        },
    )?;

    let first_mag = bench.magnifications[0];
    let mut spec = BenchmarkSpec { tasks: Vec::new() };
    for (t, task) in bench.tasks.iter().enumerate() {
        let rows = |split: Split| plans.iter().filter(move |p| p.task == t && p.split == split && p.magnification == first_mag);
        for split in Split::ALL {
            let mut s = String::from("patch_id\tslide_id\tlabel\n");
            for p in rows(split) {
                let _ = writeln!(s, "{}\t{}\t{}", p.patch_id, p.slide_id, p.label);
            }
            run.write(format!("labels/{}/{split}.tsv", task.name), &s)?;
        }
        if task.label_mode == LabelMode::PerSlide {
            // Case tables for weak evaluation: train and tune cases train.
            let mut cases: [BTreeMap<&str, usize>; 2] = Default::default();
            for p in plans.iter().filter(|p| p.task == t && p.magnification == first_mag) {
                cases[usize::from(p.split == Split::Test)].insert(&p.case_id, p.label);
            }
            for (name, table) in ["train", "test"].iter().zip(&cases) {
                let mut s = String::from("case_id\tlabel\n");
                for (c, l) in table {
                    let _ = writeln!(s, "{c}\t{l}");
                }
                run.write(format!("cases/{}/{name}.tsv", task.name), &s)?;
            }
        }
        let rel = |split: &str| format!("labels/{}/{split}.tsv", task.name).into();
        spec.tasks.push(TaskSpec {
            name: task.name.clone(),
            classes: Vec::new(),
            weight: task.weight,
            splits: Some(SplitFiles {
                train: rel("train"),
                tune: rel("tune"),
                test: rel("test"),
            }),
        });
    }
    run.write_json(BENCHMARK, &spec)?;
    println!("wrote {} patches to {}", plans.len(), run.path().display());
    run.finish()
}

pub fn store_path(dir: &Path, mag: Magnification) -> std::path::PathBuf {
    dir.join(format!("{mag}.pseb"))
}

/// Stores present in `dir`, keyed by magnification.
pub fn find_stores(dir: &Path) -> BTreeMap<Magnification, std::path::PathBuf> {
    Magnification::ALL
        .iter()
        .map(|&m| (m, store_path(dir, m)))
        .filter(|(_, p)| p.exists())
        .collect()
}

pub fn embed_toy(cfg: &PipelineConfig, out: Option<&Path>) -> Result<()> {
    let corpus = Corpus::open(&cfg.paths.corpus)?;
    let run = RunDir::start(out.unwrap_or(&cfg.paths.stores), cfg)?;
    let loader = corpus.loader()?;
    let mut by_mag: BTreeMap<Magnification, Vec<usize>> = BTreeMap::new();
    for (i, r) in corpus.rows.iter().enumerate() {
        by_mag.entry(r.magnification).or_default().push(i);
    }
    for (mag, idx) in by_mag {
        let records = idx
            .par_iter()
            .map(|&i| -> Result<EmbeddingRecord> {
                let row = &corpus.rows[i];
                let mut rec = toy_encoder(&loader.load(row)?)?;
                rec.patch_id = row.patch_id.clone();
                if !cfg.embed.keep_tokens {
                    rec.tokens = None;
                }
                Ok(rec)
            })
            .collect::<Result<Vec<_>>>()?;
        let n = store_write(&store_path(run.path(), mag), &records)?;
        println!("{mag}: {n} records");
    }
    run.finish()
}
