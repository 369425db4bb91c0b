//! Config-driven batch runs: every configured game against every configured
//! optimizer, with trajectories, spectral reports, a summary table and plots.

mod config;
mod plots;
mod runner;

pub use config::{ExperimentConfig, GameSpec, LoggingConfig, OptimizerSpec};
pub use plots::{emit_plots, PlotOutcome, PLOT_NAMES};
pub use runner::{
    read_json, replot, run_dir_name, run_experiment, run_single, write_json, write_summary,
    RunMeta, RunOutcome, RunStatus, RunSummary, SummaryRow, DIVERGENCE_NORM, SUMMARY_FILE,
    SUMMARY_HEADER,
};
