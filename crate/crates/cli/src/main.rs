mod args;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use args::{ExperimentOverrides, SynthArgs};

/// Multimodal MCI detection on precomputed embeddings: product-of-experts
/// fusion with a supervised contrastive term over picture labels.
///
/// Every experiment setting can come from a JSON or TOML config file
/// (`--config`) and be overridden by the flag of the same name.
/// Exit status: 0 success, 1 verification failure, 2 input error.
#[derive(Debug, Parser)]
#[command(name = "poe-supcon", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus (manifest + containers) and print its counts
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the bias-flipped twin under OUT/bias_flipped
        #[arg(long)]
        flipped: bool,
        #[command(flatten)]
        synth: SynthArgs,
    },
    /// Cross-validated training; writes report.json, report.csv,
    /// fold_uar.tsv and per-fold checkpoints
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory holding manifest.json
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Score validation folds on this dataset instead (same samples,
        /// different features), e.g. a bias-flipped twin
        #[arg(long = "eval_data")]
        eval_data: Option<PathBuf>,
        /// Parallel folds (0 = one per fold)
        #[arg(long, env = "POE_SUPCON_JOBS", default_value_t = 0)]
        jobs: usize,
        #[arg(long = "no_checkpoints")]
        no_checkpoints: bool,
        #[command(flatten)]
        overrides: ExperimentOverrides,
    },
    /// Print subgroup metrics and disparities from a saved report
    Eval {
        /// report.json written by `train`
        #[arg(long)]
        report: PathBuf,
        /// Comma-separated subgroups to show (Both,En,Zh,M,F)
        #[arg(long, value_delimiter = ',')]
        subgroups: Vec<String>,
    },
    /// Run the 8-cell {concat,poe} x {±cl} x {±image} grid; writes
    /// ablation.csv with deltas against the concat baseline
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "eval_data")]
        eval_data: Option<PathBuf>,
        #[arg(long, env = "POE_SUPCON_JOBS", default_value_t = 0)]
        jobs: usize,
        #[command(flatten)]
        overrides: ExperimentOverrides,
    },
    /// Finite-difference check of every analytic gradient
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Perturb the analytic gradients (negative control)
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Ingest CSV embeddings into manifest + binary containers
    Convert {
        /// CSV with header sample_id,participant_id,picture_id,language,gender,label
        #[arg(long)]
        samples: PathBuf,
        /// MODALITY=PATH sidecar CSV keyed by sample_id (repeatable)
        #[arg(long = "embedding", value_name = "MODALITY=PATH", required = true)]
        embeddings: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { config, out, flipped, synth } => commands::synth(config.as_deref(), &out, flipped, &synth),
        Command::Train { config, data, out, eval_data, jobs, no_checkpoints, overrides } => {
            commands::train(config.as_deref(), &data, &out, eval_data.as_deref(), jobs, !no_checkpoints, &overrides)
        }
        Command::Eval { report, subgroups } => commands::eval(&report, &subgroups),
        Command::Ablate { config, data, out, eval_data, jobs, overrides } => {
            commands::ablate(config.as_deref(), &data, &out, eval_data.as_deref(), jobs, &overrides)
        }
        Command::Gradcheck { seed, corrupt } => commands::gradcheck(seed, corrupt),
        Command::Convert { samples, embeddings, out } => commands::convert(&samples, &embeddings, &out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
