use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use lacuna_cli::{run, CliError, Experiment, ExperimentConfig, RunOptions};

#[derive(Parser)]
#[command(name = "lacuna", version, about = "Wave-packet experiments for heat-flow norm inflation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed, overriding `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Build u0 and write its schedule and packet table.
    BuildData,
    /// Norm tables and sqrt(t)-weighted sup curves.
    Norms,
    /// Gamma_s table and the u200 comparison.
    Gamma,
    /// Assemble the norm-inflation lower bound.
    Inflation,
    /// Check the estimates against frozen constants.
    VerifyLemmas {
        /// Recompute and freeze the constants.
        #[arg(long)]
        calibrate: bool,
    },
    /// Solve for the remainder y.
    Picard,
    /// Run the experiment named in the config.
    Run,
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    let path = cli.config.ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(&path)?;
    let mut opts = RunOptions::default();
    cfg.experiment = match cli.command {
        Command::BuildData => Experiment::BuildData,
        Command::Norms => Experiment::Norms,
        Command::Gamma => Experiment::Gamma,
        Command::Inflation => Experiment::Inflation,
        Command::VerifyLemmas { calibrate } => {
            opts.calibrate = calibrate;
            Experiment::VerifyLemmas
        }
        Command::Picard => Experiment::Picard,
        Command::Run => cfg.experiment,
    };
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let summary = run(&cfg, &opts)?;
    for f in &summary.files {
        println!("wrote {}", f.display());
    }
    for f in &summary.failures {
        eprintln!("FAILED: {f}");
    }
    Ok(summary.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = match cli.command {
        Command::VerifyLemmas { .. } => "verify-lemmas",
        _ => "experiment",
    };
    match execute(cli).with_context(|| format!("{name} failed")) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<CliError>().map(CliError::exit_code).unwrap_or(1);
            ExitCode::from(code as u8)
        }
    }
}
