use std::path::PathBuf;
use std::process::ExitCode;

use aflow_cli::{cmd_diagnose, cmd_run, cmd_spectrum, cmd_verify, init_threads, CliError, ExperimentConfig};
use clap::{Parser, Subcommand};
use serde::Serialize;

/// Numerical experiments with the anomaly flow on flat complex tori.
///
/// The worker thread count is read from AFLOW_THREADS (default: all cores).
#[derive(Parser)]
#[command(name = "aflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML or JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a verification suite and write verify_report.json.
    Verify {
        /// algebra, lemma32, lemma33, lemma31, variations, orthogonality or all
        #[arg(long)]
        suite: String,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Print the spectral gap of the linearized flow on the configured grid.
    Spectrum {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the defect report of a stored checkpoint.
    Diagnose {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn print_json<T: Serialize>(v: &T) -> Result<(), CliError> {
    let s = serde_json::to_string_pretty(v).map_err(|e| CliError::Serialize(e.to_string()))?;
    println!("{s}");
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let summary = cmd_run(&cfg)?;
            let m = &summary.manifest;
            match m.status {
                Some(s) => println!("status {s:?}, outputs in {}", summary.output_dir.display()),
                None => println!("done, outputs in {}", summary.output_dir.display()),
            }
            if let Some(fit) = &m.decay_fit {
                println!("decay rate {:.6} (r2 {:.6})", fit.rate, fit.r2);
            }
        }
        Command::Verify { suite, out } => {
            let file = cmd_verify(&suite, &out)?;
            for r in &file.suites {
                println!("{}: {} checks passed in {:.2}s", r.suite.name(), r.checks.len(), r.seconds);
            }
        }
        Command::Spectrum { config } => print_json(&cmd_spectrum(&ExperimentConfig::load(&config)?)?)?,
        Command::Diagnose { checkpoint } => print_json(&cmd_diagnose(&checkpoint)?)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("aflow: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
