//! Command-line front end. Every subcommand reads one JSON config document,
//! validates it for that experiment, runs it, and reports named verdicts.
//!
//! Exit codes: 0 all checks passed, 1 a check failed, 2 invalid
//! configuration, 3 I/O failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sa_lab::config::{self, CliOverrides, ExperimentKind};
use sa_lab::runner::{self, RunnerError};

#[derive(Parser)]
#[command(name = "salab", version, about = "Contractive stochastic approximation laboratory")]
struct Cli {
    /// Path to the JSON config document.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides the config's `out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Master seed; overrides the config's `run.master_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker pool size; 0 uses all cores. Overrides `run.jobs`.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the iteration with an explicitly selected update map.
    RunSa,
    /// Run tabular Q-learning on the configured decision process.
    RunQ,
    /// Run off-policy temporal-difference evaluation.
    RunTd,
    /// Tabulate the anchor skeleton of a step-size schedule.
    Anchors,
    /// Check the smoothed-norm construction on the configured map.
    MoreauCheck,
    /// Fit an almost-sure rate envelope over an ensemble.
    RateFit,
    /// Fit an ensemble concentration bound.
    Concentration,
    /// Trace an even-moment curve over an ensemble.
    Lp,
}

impl Command {
    fn kind(&self) -> ExperimentKind {
        match self {
            Self::RunSa => ExperimentKind::RunSa,
            Self::RunQ => ExperimentKind::RunQ,
            Self::RunTd => ExperimentKind::RunTd,
            Self::Anchors => ExperimentKind::Anchors,
            Self::MoreauCheck => ExperimentKind::MoreauCheck,
            Self::RateFit => ExperimentKind::RateFit,
            Self::Concentration => ExperimentKind::Concentration,
            Self::Lp => ExperimentKind::Lp,
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(run() as u8)
}

fn run() -> i32 {
    let cli = Cli::parse();
    let Some(config_path) = cli.config else {
        eprintln!("error: --config <path> is required");
        return runner::EXIT_BAD_CONFIG;
    };
    let text = match std::fs::read_to_string(&config_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {}: {e}", config_path.display());
            return runner::EXIT_IO;
        }
    };
    let raw = match config::parse(&text) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return runner::EXIT_BAD_CONFIG;
        }
    };
    let overrides = CliOverrides {
        out: cli.out,
        seed: cli.seed,
        jobs: cli.jobs,
    };
    let kind = cli.command.kind();
    let cfg = match config::validate(&raw, kind, &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return runner::EXIT_BAD_CONFIG;
        }
    };
    let echo: serde_json::Value =
        serde_json::from_str(&text).expect("already parsed as JSON");
    match runner::execute(&cfg, &echo) {
        Ok(report) => {
            for (name, ok) in &report.verdicts {
                println!("check {name}: {}", if *ok { "pass" } else { "FAIL" });
            }
            println!(
                "{}: wrote {} files to {}",
                kind.name(),
                report.files.len(),
                report.out_dir.display()
            );
            report.exit_code()
        }
        Err(e @ RunnerError::Config(_)) => {
            eprintln!("error: {e}");
            runner::EXIT_BAD_CONFIG
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
