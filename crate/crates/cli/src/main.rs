//! `sigsde`: train and evaluate Neural SDE generators from a config file.

mod config;
mod data;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Needs;
use error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "sigsde", version, about = "Neural SDE training with signature kernel scores")]
struct Cli {
    /// Worker threads; 0 uses one per core. Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one split of the configured dataset as a CSV path batch.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "train")]
        split: run::Split,
    },
    /// Train a generator; writes checkpoints, metrics and a config snapshot.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Print one line per step to stderr.
        #[arg(long)]
        verbose: bool,
    },
    /// KS, ACF and cross-correlation reports for a checkpoint.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump the signature kernel Gram matrix of a CSV path batch.
    Gram {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference checks of the MLP, kernel and training pipeline.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
    },
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Simulate { config, out, split } => {
            let cfg = run::load_config(&config, Needs::Data)?;
            run::simulate(&cfg, split, &out)
        }
        Command::Train { config, out, verbose } => {
            let cfg = run::load_config(&config, Needs::Data)?;
            run::train(&cfg, &out, verbose)
        }
        Command::Eval { config, checkpoint, out } => {
            let cfg = run::load_config(&config, Needs::Data)?;
            run::eval(&cfg, &checkpoint, &out)
        }
        Command::Gram { config, data, out } => {
            let cfg = run::load_config(&config, Needs::Nothing)?;
            run::gram(&cfg, &data, &out)
        }
        Command::Gradcheck { config } => {
            let cfg = run::load_config(&config, Needs::Nothing)?;
            let reports = run::gradcheck(&cfg)?;
            let mut failed = Vec::new();
            for r in &reports {
                println!("{}", serde_json::to_string(r).expect("report serializes"));
                if !r.passed {
                    failed.push(r.name.clone());
                }
            }
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::GradcheckFailed(failed))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build_global() {
        eprintln!("error: cannot start worker pool: {e}");
        return ExitCode::from(error::EXIT_IO as u8);
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
