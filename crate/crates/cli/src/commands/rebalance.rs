use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use ndarray::Array2;
use pathssl_core::embeddings::{compose_feature, store_read};
use pathssl_core::rebalance::{balanced_sample, cosine_kmeans, write_id_list};
use pathssl_core::seed;

use super::synth::store_path;
use crate::config::PipelineConfig;
use crate::errors::require_path;
use crate::rundir::RunDir;

pub fn rebalance(cfg: &PipelineConfig, out: Option<&Path>) -> Result<()> {
    let rc = &cfg.rebalance;
    let path = store_path(&cfg.paths.stores, rc.magnification);
    require_path(&path, "embedding store")?;
    let records = store_read(&path)?;
    let rows = records
        .iter()
        .map(|r| compose_feature(r, rc.feature_mode))
        .collect::<pathssl_core::Result<Vec<_>>>()?;
    let width = rows.first().map_or(0, Vec::len);
    let x = Array2::from_shape_vec((rows.len(), width), rows.concat())?;
    let run = RunDir::start(out.unwrap_or(&cfg.paths.reports.join("rebalance")), cfg)?;
    let model = cosine_kmeans(x.view(), rc.k, rc.max_iters, seed::derive(cfg.master_seed, "kmeans"))?;
    let picked = balanced_sample(&model.assignments, rc.total, seed::derive(cfg.master_seed, "balanced"))?;
    let ids: Vec<String> = picked.iter().map(|&i| records[i].patch_id.clone()).collect();
    write_id_list(&run.join("selected_ids.txt"), &ids)?;

    let mut sizes = vec![(0usize, 0usize); model.k()];
    for &a in &model.assignments {
        sizes[a].0 += 1;
    }
    for &i in &picked {
        sizes[model.assignments[i]].1 += 1;
    }
    let mut table = String::from("cluster\tmembers\tselected\n");
    for (c, (m, s)) in sizes.iter().enumerate() {
        let _ = writeln!(table, "{c}\t{m}\t{s}");
    }
    run.write("clusters.tsv", &table)?;
    run.write_json("model.json", &model)?;
    println!("selected {} of {} records over {} clusters", ids.len(), records.len(), model.k());
    run.finish()
}
