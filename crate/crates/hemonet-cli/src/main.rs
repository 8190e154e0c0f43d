//! Command-line pipeline: ingest a class-folder dataset, train a model,
//! evaluate it, fuse members into an ensemble, and consolidate reports.

mod artifacts;
mod commands;
mod config;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "hemonet",
    version,
    about = "CNN training and ensemble toolkit for blood-smear image classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan a class-folder dataset, assign splits, and write dataset.json.
    Ingest {
        /// Dataset root: one subdirectory per class.
        root: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model on the ingested dataset and write model.ckpt,
    /// history.csv, and train_report.json.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// dataset.json location (defaults to <out>/dataset.json).
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a split (or import a confusion matrix) and
    /// write confusion.csv, metrics.json, and probs.csv.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// train | validation | test
        #[arg(long, default_value = "test")]
        split: String,
        /// Compute metrics from an existing confusion CSV instead of a model.
        #[arg(long = "from-confusion")]
        from_confusion: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Fuse member predictions (checkpoints or probability CSVs) and write
    /// the fused artifacts plus a member-vs-ensemble comparison.
    Ensemble {
        /// Member checkpoints.
        #[arg(long, value_delimiter = ',')]
        members: Vec<PathBuf>,
        /// Member probability CSVs (offline fusion).
        #[arg(long, value_delimiter = ',')]
        probs: Vec<PathBuf>,
        /// mean | weighted=w1,w2,... | trained
        #[arg(long)]
        fusion: Option<String>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Consolidate training histories and metrics from a run directory into
    /// report.json and per-epoch curve CSVs.
    Report {
        run_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest {
            root,
            config,
            seed,
            out,
        } => config::RunConfig::load(config.as_deref(), seed, out.as_deref())
            .and_then(|cfg| commands::ingest::run(&root, &cfg)),
        Command::Train {
            config,
            seed,
            out,
            dataset,
        } => config::RunConfig::load(config.as_deref(), seed, out.as_deref())
            .and_then(|cfg| commands::train::run(&cfg, dataset.as_deref())),
        Command::Eval {
            checkpoint,
            split,
            from_confusion,
            config,
            seed,
            out,
            dataset,
        } => config::RunConfig::load(config.as_deref(), seed, out.as_deref()).and_then(|cfg| {
            commands::eval::run(
                &cfg,
                checkpoint.as_deref(),
                &split,
                from_confusion.as_deref(),
                dataset.as_deref(),
            )
        }),
        Command::Ensemble {
            members,
            probs,
            fusion,
            split,
            config,
            seed,
            out,
            dataset,
        } => config::RunConfig::load(config.as_deref(), seed, out.as_deref()).and_then(|cfg| {
            commands::ensemble::run(
                &cfg,
                &members,
                &probs,
                fusion.as_deref(),
                &split,
                dataset.as_deref(),
            )
        }),
        Command::Report {
            run_dir,
            config,
            seed,
            out,
        } => config::RunConfig::load(config.as_deref(), seed, out.as_deref())
            .and_then(|cfg| commands::report::run(&run_dir, &cfg)),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
