//! `wpcn`: dataset generation, labeling, training, evaluation and
//! benchmarking of the schedulers. Every CSV starts with a `# config:` line.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use wpcn::pipelines::AlgorithmKind;

mod commands;
mod config;
mod report;

use config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "wpcn",
    version,
    about = "Minimum-length scheduling in wireless powered networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the experiment seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Restricts the run to one user count.
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Restricts the run to these kinds (repeatable).
    #[arg(long, global = true)]
    kind: Vec<AlgorithmKind>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw the train/val/test instance sets.
    Generate,
    /// Attach OPT labels to every dataset.
    Label,
    /// Train a bundle per kind.
    Train,
    /// Evaluate the bundles on the test set.
    Eval,
    /// generate, label, train and eval for every user count, then combine.
    Bench,
    /// Check config, datasets, bundles and reports; non-zero exit on failure.
    Validate {
        /// Print the effective config as TOML before validating.
        #[arg(long)]
        print_config: bool,
    },
}

fn load(c: Common) -> Result<ExperimentConfig> {
    let base = match &c.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    base.finalize(c.seed, c.n, &c.kind, c.out)
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = load(cli.common)?;
    match cli.command {
        Command::Generate => commands::generate(&cfg).map(|_| true),
        Command::Label => commands::label(&cfg).map(|_| true),
        Command::Train => commands::train(&cfg).map(|_| true),
        Command::Eval => commands::eval(&cfg).map(|s| s.iter().all(|e| e.passed())),
        Command::Bench => commands::bench(&cfg),
        Command::Validate { print_config } => {
            if print_config {
                print!("{}", cfg.to_toml()?);
            }
            commands::validate(&cfg)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("validation failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
