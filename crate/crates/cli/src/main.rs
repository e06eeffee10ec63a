//! `pathssl`: config-driven command-line driver.

mod commands;
mod config;
mod errors;
mod rundir;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::PipelineConfig;
use errors::ConfigError;

#[derive(Parser)]
#[command(name = "pathssl", version, about = "Histopathology SSL recipe pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Pipeline config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `master_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory, overriding the location derived from `paths`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Render the synthetic corpus: PNG patches, manifest and label tables.
    SynthGen,
    /// Fit a RandStainNA template on corpus patches.
    FitTemplate,
    /// Write augmented views of a few corpus patches.
    AugmentPreview,
    /// Cluster embeddings and write a cluster-balanced selection.
    Rebalance,
    /// Embed the corpus with the toy encoder.
    EmbedToy,
    /// Evaluate the objectives and their gradient checks on random inputs.
    LossBench,
    /// Run the patch-level linear probe.
    Probe,
    /// Run case-level (weakly supervised) evaluation.
    WeakEval,
    /// Probe AUC against the fraction of training slides.
    Titrate,
    /// Render tables and bar-chart data from probe and weak results.
    Report,
}

fn run(cli: Cli) -> Result<()> {
    let path = cli
        .config
        .ok_or_else(|| ConfigError("--config <path> is required".into()))?;
    let mut cfg = PipelineConfig::load(&path)?;
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(ConfigError("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let out = cli.out.as_deref();
    match cli.command {
        Command::SynthGen => commands::synth_gen(&cfg, out),
        Command::FitTemplate => commands::fit_template(&cfg, out),
        Command::AugmentPreview => commands::augment_preview(&cfg, out),
        Command::Rebalance => commands::rebalance(&cfg, out),
        Command::EmbedToy => commands::embed_toy(&cfg, out),
        Command::LossBench => commands::loss_bench(&cfg, out),
        Command::Probe => commands::probe(&cfg, out),
        Command::WeakEval => commands::weak_eval(&cfg, out),
        Command::Titrate => commands::titrate(&cfg, out),
        Command::Report => commands::report(&cfg, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(errors::exit_code(&e))
        }
    }
}
