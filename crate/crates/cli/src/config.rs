//! Experiment configuration: one JSON document, unknown keys rejected.

use std::path::{Path, PathBuf};

use lacuna::construction::{self, InitialDataParams};
use serde::{Deserialize, Serialize};

use crate::lemmas::LemmaCorpus;
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    BuildData,
    Norms,
    Gamma,
    Inflation,
    VerifyLemmas,
    Picard,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::BuildData => "build-data",
            Experiment::Norms => "norms",
            Experiment::Gamma => "gamma",
            Experiment::Inflation => "inflation",
            Experiment::VerifyLemmas => "verify-lemmas",
            Experiment::Picard => "picard",
        }
    }
}

/// Dyadic ball family for Carleson-type lower ends: radii `2^k`, `kmin <= k <= kmax`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallConfig {
    pub kmin: i32,
    pub kmax: i32,
}

impl Default for BallConfig {
    fn default() -> Self {
        BallConfig { kmin: -4, kmax: 0 }
    }
}

/// Time grids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Ratio of the geometric Picard grid.
    #[serde(default = "default_ratio")]
    pub ratio: f64,
    /// Number of sample times for norm-vs-t curves.
    #[serde(default = "default_norm_times")]
    pub norm_times: usize,
    /// Times for the `Gamma_s` table; empty means `T` alone.
    #[serde(default)]
    pub gamma_times: Vec<f64>,
}

fn default_ratio() -> f64 {
    2.0
}

fn default_norm_times() -> usize {
    12
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { ratio: default_ratio(), norm_times: default_norm_times(), gamma_times: Vec::new() }
    }
}

/// Graded Gauss rule for the optional quadrature cross-check of `B(u_1, u_1)(T)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureConfig {
    pub levels: usize,
    pub nodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Datum; its `q` is replaced by each entry of `amplitudes` where a Q sweep applies.
    pub params: InitialDataParams,
    #[serde(default = "default_amplitudes")]
    pub amplitudes: Vec<f64>,
    /// Triebel index used for the inflation ratio and the remainder.
    #[serde(default = "default_q_index")]
    pub q_index: f64,
    /// Triebel indices reported by `norms`.
    #[serde(default = "default_q_indices")]
    pub q_indices: Vec<f64>,
    /// Evaluation time `T`.
    pub horizon: f64,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub balls: BallConfig,
    #[serde(default)]
    pub quadrature: Option<QuadratureConfig>,
    /// Picard stopping tolerance on the `E_T` difference of iterates.
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Solve for the remainder `y` in `inflation`; otherwise `y` is reported as unknown.
    #[serde(default = "default_true")]
    pub include_remainder: bool,
    pub output_dir: PathBuf,
    #[serde(default = "default_constants")]
    pub constants: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub svg: bool,
    #[serde(default)]
    pub lemmas: LemmaCorpus,
}

fn default_amplitudes() -> Vec<f64> {
    vec![1.0, 2.0, 3.0]
}

fn default_q_index() -> f64 {
    4.0
}

fn default_q_indices() -> Vec<f64> {
    vec![2.0, 3.0, 4.0]
}

fn default_tol() -> f64 {
    1e-4
}

fn default_max_iter() -> usize {
    30
}

fn default_true() -> bool {
    true
}

fn default_constants() -> PathBuf {
    PathBuf::from("constants.json")
}

fn default_seed() -> u64 {
    20_240_617
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks everything that can be checked before any computation starts.
    pub fn validate(&self) -> Result<(), CliError> {
        let p = &self.params;
        if !(p.q.is_finite() && p.q >= 0.0) {
            return Err(bad(format!("params.q = {} must be finite and >= 0", p.q)));
        }
        if self.amplitudes.is_empty() || self.amplitudes.iter().any(|q| !(q.is_finite() && *q >= 0.0)) {
            return Err(bad("amplitudes must be a nonempty list of finite values >= 0"));
        }
        if !(self.q_index > 1.0 && self.q_index.is_finite()) {
            return Err(bad(format!("q_index = {} must be finite and > 1", self.q_index)));
        }
        if self.q_indices.iter().any(|q| !(*q > 1.0 && q.is_finite())) {
            return Err(bad("q_indices entries must be finite and > 1"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(bad(format!("horizon = {} must be positive", self.horizon)));
        }
        if !(self.grid.ratio > 1.0 && self.grid.ratio.is_finite()) {
            return Err(bad(format!("grid.ratio = {} must exceed 1", self.grid.ratio)));
        }
        if self.grid.norm_times < 2 {
            return Err(bad("grid.norm_times must be at least 2"));
        }
        if self.grid.gamma_times.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(bad("grid.gamma_times entries must be positive"));
        }
        if self.balls.kmin > self.balls.kmax {
            return Err(bad("balls.kmin must not exceed balls.kmax"));
        }
        if let Some(q) = &self.quadrature {
            if q.levels == 0 || q.nodes == 0 {
                return Err(bad("quadrature.levels and quadrature.nodes must be positive"));
            }
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(bad(format!("tol = {} must be positive", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(bad("max_iter must be positive"));
        }
        construction::make_psi(p.h).map_err(|e| bad(format!("params.h: {e}")))?;
        for &q in &self.amplitudes {
            construction::frequency_schedule(&p.with_q(q)).map_err(|e| bad(format!("params: {e}")))?;
        }
        if self.experiment == Experiment::Inflation {
            let k0 = construction::frequency_schedule(p).map_err(|e| bad(e.to_string()))?[0].k_norm();
            if self.horizon <= 1.0 / (k0 * k0) {
                return Err(bad(format!(
                    "inflation needs horizon > |k_0|^-2 = {:e}, got {:e}",
                    1.0 / (k0 * k0),
                    self.horizon
                )));
            }
        }
        self.lemmas.validate()?;
        Ok(())
    }

    pub fn params_for(&self, q: f64) -> InitialDataParams {
        self.params.with_q(q)
    }
}
