//! `dualnet` command-line driver.

mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dualnet::data::Task;
use dualnet::Precision;

#[derive(Parser)]
#[command(name = "dualnet", version, about = "DualNet intrusion detection: preprocess, train, evaluate, explain, sweep")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options every command shares.
#[derive(Args, Clone)]
pub struct Common {
    /// Output root; each run writes a timestamped directory beneath it.
    #[arg(long, env = run::OUT_ROOT_ENV, default_value = run::DEFAULT_OUT_ROOT)]
    pub out: PathBuf,
    /// Overrides the seed in the training config.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Where the records come from.
#[derive(Args, Clone)]
pub struct DataArgs {
    /// Encoded dataset (.bin or .csv), or a raw CSV when --schema is given.
    #[arg(long)]
    pub data: PathBuf,
    /// Schema JSON file, or one of nsl-kdd, nsl-kdd-41, unsw-nb15. Marks --data as raw CSV.
    #[arg(long)]
    pub schema: Option<PathBuf>,
}

#[derive(Args, Clone)]
pub struct TrainArgs {
    /// Architecture config JSON; defaults to DualNet-tiny sized to the data.
    #[arg(long)]
    pub arch_config: Option<PathBuf>,
    /// Training config JSON.
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<Task>,
    #[arg(long)]
    pub precision: Option<Precision>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the encoder on a raw CSV and write the encoded dataset plus its sidecar.
    Preprocess {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "binary")]
        task: Task,
        /// Encoded file format.
        #[arg(long, default_value = "bin", value_parser = ["bin", "csv"])]
        format: String,
    },
    /// Train a network and write a checkpoint with its history.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Stratified k-fold cross-validation.
    Crossval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Accept classes with fewer members than folds instead of failing.
        #[arg(long)]
        allow_sparse_classes: bool,
    },
    /// Score a checkpoint on a dataset.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        task: Option<Task>,
    },
    /// Rank features by the attention they receive.
    Explain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        topk: usize,
        /// Use at most this many leading rows.
        #[arg(long)]
        samples: Option<usize>,
        /// Per-position score: column-mean or column-max.
        #[arg(long, default_value = "column-mean", value_parser = ["column-mean", "column-max"])]
        importance: String,
        /// One-hot group aggregation: sum or max.
        #[arg(long, default_value = "sum", value_parser = ["sum", "max"])]
        group: String,
    },
    /// Train a grid of architectures and write one CSV row per configuration.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// growth, depth, plainstack or connectivity.
        #[arg(long)]
        kind: String,
        /// Grid such as 1..6 or 1,2,4; defaults per kind.
        #[arg(long)]
        grid: Option<String>,
        /// Encoded dataset (or raw CSV with --schema); synthetic blobs when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        train_config: Option<PathBuf>,
        #[arg(long)]
        task: Option<Task>,
        #[arg(long)]
        precision: Option<Precision>,
        /// Stem and attention as wide as the encoded input; needs --data.
        #[arg(long)]
        paper_scale: bool,
        /// Rows of the synthetic set used without --data.
        #[arg(long, default_value_t = 600)]
        synthetic_rows: usize,
    },
}

/// One-line error category: the library's kind, else `io` or `usage`.
fn error_kind(err: &anyhow::Error) -> &'static str {
    if let Some(e) = err.chain().find_map(|c| c.downcast_ref::<dualnet::Error>()) {
        return e.kind();
    }
    if err.chain().any(|c| c.is::<std::io::Error>()) {
        return "io";
    }
    "usage"
}

/// Context chain joined by `: `, skipping causes already quoted by the layer above.
fn one_line(err: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if msg.contains(&text) {
            continue;
        }
        if !msg.is_empty() {
            msg.push_str(": ");
        }
        msg.push_str(&text);
    }
    msg.replace('\n', " ")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}: {}", error_kind(&err), one_line(&err));
            ExitCode::FAILURE
        }
    }
}
