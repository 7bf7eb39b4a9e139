use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vsl_cli::{
    cmd_eval, cmd_export_latents, cmd_sweep_unlabeled, cmd_train, CliError, EvalArgs, ExportArgs,
    SweepArgs, TrainArgs,
};

/// Variational sequential labelers: training and analysis runs.
#[derive(Debug, Parser)]
#[command(name = "vsl", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Train from a config file into runs/run-<hash>-seed<seed>.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override a config value, e.g. `--set train.seed=1` or `--set seed=1`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Train this many consecutive seeds and report mean and sd.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        /// Replace an existing run directory.
        #[arg(long)]
        overwrite: bool,
        /// Keep a deterministic subsample of this many unlabeled sentences.
        #[arg(long)]
        unlabeled_cap: Option<usize>,
    },
    /// Score a checkpoint on a labeled file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        word_column: Option<usize>,
        #[arg(long)]
        label_column: Option<usize>,
    },
    /// Write per-token latent means and a 2-D PCA projection as CSV.
    ExportLatents {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Any of hidden, y, z (default: all the variant has).
        #[arg(long, value_delimiter = ',')]
        variables: Vec<String>,
        #[arg(long)]
        word_column: Option<usize>,
        #[arg(long)]
        label_column: Option<usize>,
    },
    /// Train once per `sweep.sizes` entry and tabulate dev scores.
    SweepUnlabeled {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        overwrite: bool,
        /// Run this many sizes at once in child processes.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
}

fn dispatch(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Train {
            config,
            set,
            seeds,
            overwrite,
            unlabeled_cap,
        } => {
            if seeds == 0 {
                return Err(CliError::usage("--seeds must be at least 1"));
            }
            cmd_train(&TrainArgs {
                config,
                overrides: set,
                seeds,
                overwrite,
                unlabeled_cap,
            })
            .map(drop)
        }
        Cmd::Eval {
            checkpoint,
            data,
            word_column,
            label_column,
        } => cmd_eval(&EvalArgs {
            checkpoint,
            data,
            word_column,
            label_column,
        })
        .map(drop),
        Cmd::ExportLatents {
            checkpoint,
            data,
            output,
            variables,
            word_column,
            label_column,
        } => cmd_export_latents(&ExportArgs {
            checkpoint,
            data,
            output,
            variables,
            word_column,
            label_column,
        })
        .map(drop),
        Cmd::SweepUnlabeled {
            config,
            set,
            overwrite,
            parallel,
        } => cmd_sweep_unlabeled(&SweepArgs {
            config,
            overrides: set,
            overwrite,
            parallel,
        })
        .map(drop),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap exits with 2 on usage errors
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
