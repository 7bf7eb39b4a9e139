//! Reproducible experiments on top of `vsl-core`: config files, run
//! directories and the `train`, `eval`, `export-latents` and
//! `sweep-unlabeled` subcommands.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod run;

pub use commands::{
    cmd_eval, cmd_export_latents, cmd_sweep_unlabeled, cmd_train, EvalArgs, ExportArgs, SweepArgs,
    SweepResult, TrainArgs,
};
pub use config::ExperimentConfig;
pub use error::CliError;
pub use run::{run_dir, RunSummary};
