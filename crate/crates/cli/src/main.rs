mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Query-token embeddings and the hierarchical forecaster for irregular
/// multivariate time series.
///
/// Any setting can be given as `--data.<key> v`, `--model.<key> v` or
/// `--train.<key> v`; these override the config file.
#[derive(Debug, Parser)]
#[command(name = "quite", version)]
struct Cli {
    /// `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset and its split manifest.
    Gen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model and save a checkpoint plus its loss curve.
    Train(RunArgs),
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also write the metrics as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare embedding variants over all seeds.
    Ablate {
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated embedding kinds.
        #[arg(long, default_value = "add,concat,meanpool,quite")]
        variants: String,
    },
    /// Forecast error against extra history removal.
    SweepSparsity {
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient checks.
    GradCheck {
        /// ops, embed, model or all.
        #[arg(long, default_value = "all")]
        scope: String,
    },
    /// Parameter count and multiply-accumulate estimates.
    Cost(CostArgs),
    /// Loss curve, forecast trace and embedding dump for a checkpoint.
    EmitPlots(RunArgs),
    /// Train every (dim, layers, heads) cell of the grid.
    GridSearch {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "run")]
    run_id: String,
    /// Existing checkpoint base path (emit-plots only).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CostArgs {
    #[arg(long, default_value_t = 32)]
    batch: u64,
    #[arg(long, default_value_t = 12)]
    obs_per_variable: u64,
    #[arg(long, default_value_t = 3)]
    obs_per_patch: u64,
    #[arg(long, default_value_t = 12)]
    pred_len: u64,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<quite_core::Error>())
        .any(quite_core::Error::is_numerical);
    if numerical || err.downcast_ref::<commands::GradFailure>().is_some() {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let (args, overrides) = match settings::extract_overrides(std::env::args().collect()) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::run(cli, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
