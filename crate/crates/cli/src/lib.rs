//! Experiment drivers for the lacuna packet laboratory: datum construction, norm tables,
//! `Gamma_s`, Picard remainder, inflation assembly and the lemma verification suite.

pub mod config;
pub mod experiments;
pub mod inflation;
pub mod lemmas;
pub mod output;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{Experiment, ExperimentConfig};
pub use inflation::{run_inflation, InflationReport};
pub use lemmas::{verify_lemmas, LemmaTable};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error at {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{0}")]
    Compute(String),
    #[error("check failed: {0}")]
    Check(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), message: e.to_string() }
    }

    pub fn csv(path: &Path, e: csv::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), message: e.to_string() }
    }

    pub fn compute(e: impl std::fmt::Display) -> Self {
        CliError::Compute(e.to_string())
    }

    /// 1 for failed checks and module errors, 2 for configuration errors, 3 for IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Compute(_) | CliError::Check(_) => 1,
        }
    }
}

/// Run-time switches that are not part of the experiment definition.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Recompute and freeze lemma constants instead of checking against them.
    pub calibrate: bool,
}

/// Files written and checks that failed.
#[derive(Clone, Debug, Default)]
pub struct RunSummary {
    pub files: Vec<PathBuf>,
    pub failures: Vec<String>,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            1
        }
    }
}

/// Runs the experiment named in the config and writes its outputs under `output_dir`.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary, CliError> {
    cfg.validate()?;
    output::ensure_dir(&cfg.output_dir)?;
    match cfg.experiment {
        Experiment::BuildData => experiments::build_data(cfg),
        Experiment::Norms => experiments::norms(cfg),
        Experiment::Gamma => experiments::gamma(cfg),
        Experiment::Picard => experiments::picard(cfg),
        Experiment::Inflation => {
            let rep = run_inflation(cfg)?;
            inflation::emit_outputs(&rep, cfg)
        }
        Experiment::VerifyLemmas => {
            let table = verify_lemmas(cfg, opts.calibrate)?;
            lemmas::emit_outputs(&table, cfg)
        }
    }
}
