use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use pathssl_core::corruptions::path_blur;
use pathssl_core::imagecolor::{color_jitter, fit_template as fit, randstainna, StainTemplate};
use pathssl_core::patch::Patch;
use pathssl_core::seed;
use pathssl_core::views::make_multicrop;
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use super::corpus::Corpus;
use crate::config::PipelineConfig;
use crate::errors::require_path;
use crate::rundir::{read_json, RunDir};

pub const TEMPLATE: &str = "template.json";

/// Up to `n` corpus patches chosen uniformly with `seed`, in manifest order.
fn sample_patches(corpus: &Corpus, n: usize, seed: u64) -> Result<Vec<(String, Patch)>> {
    let total = corpus.rows.len();
    let mut idx = index::sample(&mut seed::rng(seed), total, n.min(total)).into_vec();
    idx.sort_unstable();
    let loader = corpus.loader()?;
    idx.par_iter()
        .map(|&i| {
            let row = &corpus.rows[i];
            Ok((format!("{}_{}", row.patch_id, row.magnification), loader.load(row)?))
        })
        .collect()
}

fn fitted_template(cfg: &PipelineConfig, corpus: &Corpus) -> Result<StainTemplate> {
    let patches: Vec<Patch> = sample_patches(corpus, cfg.augment.max_images, seed::derive(cfg.master_seed, "template/sample"))?
        .into_iter()
        .map(|(_, p)| p)
        .collect();
    Ok(fit(&patches, cfg.augment.max_images, seed::derive(cfg.master_seed, "template/fit"))?)
}

pub fn fit_template(cfg: &PipelineConfig, out: Option<&Path>) -> Result<()> {
    let corpus = Corpus::open(&cfg.paths.corpus)?;
    let run = RunDir::start(out.unwrap_or(&cfg.paths.reports.join("fit-template")), cfg)?;
    let template = fitted_template(cfg, &corpus)?;
    run.write_json(TEMPLATE, &template)?;
    println!("template fitted on {} images", template.n_fit_images);
    run.finish()
}

pub fn augment_preview(cfg: &PipelineConfig, out: Option<&Path>) -> Result<()> {
    let corpus = Corpus::open(&cfg.paths.corpus)?;
    let template = match &cfg.augment.template {
        Some(p) => {
            require_path(p, "stain template")?;
            let t: StainTemplate = read_json(p)?;
            t.validate()?;
            t
        }
        None => fitted_template(cfg, &corpus)?,
    };
    let run = RunDir::start(out.unwrap_or(&cfg.paths.reports.join("augment-preview")), cfg)?;
    run.write_json(TEMPLATE, &template)?;
    let sources = sample_patches(&corpus, cfg.augment.n_preview, seed::derive(cfg.master_seed, "preview/sample"))?;
    let mut table = String::from("source\tview\tx\ty\tw\th\n");
    for (i, (id, patch)) in sources.iter().enumerate() {
        let mut rng = seed::rng(seed::derive(cfg.master_seed, &format!("preview/{id}")));
        let mut aug = patch.clone();
        if rng.random::<f64>() < cfg.augment.randstainna_probability {
            aug = randstainna(&aug, &template, &mut rng);
        }
        aug = color_jitter(&aug, &cfg.augment.jitter, cfg.augment.jitter_probability, &mut rng);
        aug = path_blur(&aug, &cfg.pathblur, &mut rng);
        let batch = make_multicrop(&aug, &cfg.crops, id, &mut rng)?;
        let dir = run.join(format!("{i:02}_{id}"));
        std::fs::create_dir_all(&dir)?;
        patch.write_png(dir.join("source.png"))?;
        aug.write_png(dir.join("augmented.png"))?;
        batch.teacher_global.write_png(dir.join("teacher.png"))?;
        batch.student_global.write_png(dir.join("student.png"))?;
        let mut rects = vec![("teacher".to_string(), batch.teacher_rect), ("student".to_string(), batch.student_rect)];
        for (j, (local, rect)) in batch.locals.iter().zip(&batch.local_rects).enumerate() {
            local.write_png(dir.join(format!("local_{j:02}.png")))?;
            rects.push((format!("local_{j:02}"), *rect));
        }
        for (view, r) in rects {
            let _ = writeln!(table, "{id}\t{view}\t{}\t{}\t{}\t{}", r.x, r.y, r.w, r.h);
        }
    }
    run.write("views.tsv", &table)?;
    println!("wrote {} previews to {}", sources.len(), run.path().display());
    run.finish()
}
