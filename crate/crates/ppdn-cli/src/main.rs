use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use ppdn_cli::commands;
use ppdn_cli::config::ExperimentConfig;
use ppdn_cli::CliError;

/// Paired-sample training experiments: train, evaluate, compare optimizers,
/// verify descent conditions, and check gradients — all seeded and
/// reproducible.
#[derive(Parser)]
#[command(name = "ppdn", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model on the full synthetic corpus and write a checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Initialization and shuffling seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Single-image evaluation of a checkpoint on one test slice.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// weak | peak | combined
        #[arg(long)]
        set: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-validated comparison of the configured training modes.
    /// Exit code 3 flags a weak-set ordering violation.
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-batch descent-condition reports for a checkpoint.
    DescentReport {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 20)]
        num_batches: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Batch-sampling seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the full objective under both gatings.
    GradCheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the synthetic corpus and write it as line records.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig, CliError> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => {
            let config = ExperimentConfig::default();
            config.validate()?;
            Ok(config)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, seed, out } => {
            commands::cmd_train(&load_config(&config)?, seed, out)
        }
        Command::Eval {
            checkpoint,
            corpus,
            set,
            out,
        } => commands::cmd_eval(&checkpoint, &corpus, &set, out),
        Command::Compare { config, out } => commands::cmd_compare(&load_config(&config)?, out),
        Command::DescentReport {
            checkpoint,
            corpus,
            num_batches,
            config,
            seed,
            out,
        } => commands::cmd_descent_report(
            &checkpoint,
            &corpus,
            num_batches,
            &load_config(&config)?,
            seed,
            out,
        ),
        Command::GradCheck { config, seed, out } => {
            commands::cmd_grad_check(&load_config(&config)?, seed, out)
        }
        Command::GenData { config, out } => commands::cmd_gen_data(&load_config(&config)?, out),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
