//! Linear-probe evaluation: L2 logistic regression, slide-grouped
//! cross-validation, AUC, magnification selection, the weighted composite
//! metric and slide bootstrap intervals.

mod auc;
mod bootstrap;
mod composite;
mod cv;
mod logreg;
mod run;

pub use auc::{auc_binary, auc_macro};
pub use bootstrap::{bootstrap_ci, bootstrap_ci_multi, group_indices, nearest_rank, BootstrapCi, DEFAULT_REPLICATES, MAX_REDRAWS};
pub use composite::{best_over_magnifications, composite_metric, BenchmarkSpec, SplitFiles, TaskSpec};
pub use cv::{cross_validate, inverse_reg_grid, slide_folds, CvResult, GRID_SIZE, N_FOLDS};
pub use logreg::{objective_and_grad, train_logreg, ProbeModel, MAX_ITERS};
pub use run::{
    load_task_data, read_label_table, render_probe_table, run_linear_probe, run_probe, LabelRow, MagnificationResult,
    ProbeConfig, ProbeResult, SplitData, TaskData, TaskResult, TaskSplits,
};
