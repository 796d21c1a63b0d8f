//! `spdt`: synthetic cohorts, featurization, nested cross-validation,
//! model comparison and result tables over on-disk artifacts.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use spdt_core::ErrorClass;

#[derive(Debug, Parser)]
#[command(name = "spdt", version, about = "SPD-matrix features and elastic-net evaluation pipeline")]
struct Cli {
    /// Worker threads; output does not depend on this value.
    #[arg(long, global = true, env = "SPDT_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort with planted ground truth.
    Synth(commands::SynthArgs),
    /// Compute subject-level SPD means and a feature table for a cohort.
    Featurize(commands::FeaturizeArgs),
    /// Repeated nested cross-validation on featurized subjects.
    Evaluate(commands::EvaluateArgs),
    /// Paired comparison of two cross-validation reports.
    Compare(commands::CompareArgs),
    /// Mean/min/max RMSE grid over the twelve conditions.
    Table(commands::TableArgs),
    /// Determinants of the Euclidean, Log-Euclidean and Riemannian means
    /// of diag(2, 1/2) and diag(1/2, 2).
    DemoSwelling {
        /// Emit JSON instead of text.
        #[arg(long)]
        json: bool,
    },
}

/// Exit code of an error: 2 validation, 3 convergence, 4 I/O.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<spdt_core::Error>() {
            return match e.class() {
                ErrorClass::Validation => 2,
                ErrorClass::Convergence => 3,
                ErrorClass::Io => 4,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
    }
    2
}

/// Error chain joined by ": ". Core errors already render their own causes,
/// so the walk stops at the first one.
fn describe(err: &anyhow::Error) -> String {
    let mut parts = Vec::new();
    for cause in err.chain() {
        parts.push(cause.to_string());
        if cause.downcast_ref::<spdt_core::Error>().is_some() {
            break;
        }
    }
    parts.join(": ")
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(config::invalid("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Featurize(a) => commands::featurize(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Compare(a) => commands::compare(&a),
        Command::Table(a) => commands::table(&a),
        Command::DemoSwelling { json } => commands::demo_swelling(json),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Output path, or standard output when absent.
pub(crate) fn emit(out: Option<&PathBuf>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text).map_err(|e| spdt_core::Error::from(e).context(path.display().to_string()))?
        }
        None => print!("{text}"),
    }
    Ok(())
}
