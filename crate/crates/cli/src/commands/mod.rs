//! Subcommand implementations. Each writes into its own run directory.

mod augment;
mod corpus;
mod loss;
mod probe;
mod rebalance;
mod report;
mod synth;
mod weak;

pub use augment::{augment_preview, fit_template};
pub use loss::loss_bench;
pub use probe::{probe, titrate};
pub use rebalance::rebalance;
pub use report::report;
pub use synth::{embed_toy, synth_gen};
pub use weak::weak_eval;
