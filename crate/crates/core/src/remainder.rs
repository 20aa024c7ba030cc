//! Time-step division and Picard iteration for the remainder `y` in `u = u_1 - u_2 + y`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, Interpolation, TimeSampledField};
use crate::construction::{self, ConstructionError, InitialDataParams};
use crate::duhamel::{self, DuhamelError, NodePrune};
use crate::packets::PacketField;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RemainderError {
    #[error("Q^3 = {0} exceeds the desk-scale guard 1e4")]
    TooManySteps(f64),
    #[error("Picard iteration diverges: contraction ratios {0:?}; try a smaller Q / sqrt(r) or horizon")]
    Divergence(Vec<f64>),
    #[error("invalid time grid: {0}")]
    Grid(String),
    #[error(transparent)]
    Duhamel(#[from] DuhamelError),
    #[error(transparent)]
    Construction(#[from] ConstructionError),
    #[error(transparent)]
    Analysis(#[from] analysis::AnalysisError),
}

/// Breakpoints `T_alpha = |k_{r_alpha}|^-2`, `r_alpha = r - alpha r / Q^3`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimeDivision {
    pub beta: usize,
    pub r_alpha: Vec<usize>,
    pub breakpoints: Vec<f64>,
    pub warnings: Vec<String>,
}

pub fn time_step_schedule(params: &InitialDataParams) -> Result<TimeDivision, RemainderError> {
    let q3 = params.q.powi(3);
    if q3 > 1e4 {
        return Err(RemainderError::TooManySteps(q3));
    }
    let js = construction::schedule_exponents(params)?;
    let beta = (q3.round() as usize).max(1);
    let r = params.r as f64;
    let mut warnings = Vec::new();
    if q3 < 0.5 {
        warnings.push(format!("Q^3 = {q3} rounds below 1; using a single interval"));
    }
    let mut r_alpha: Vec<usize> = Vec::new();
    let mut breakpoints = Vec::new();
    for a in 0..=beta {
        let ra = (r - a as f64 * r / beta as f64).round().max(0.0) as usize;
        if r_alpha.last() == Some(&ra) {
            warnings.push(format!("alpha = {a}: index r_alpha = {ra} repeats; collapsed"));
            continue;
        }
        r_alpha.push(ra);
        breakpoints.push(2f64.powi(-2 * js[ra] as i32));
    }
    Ok(TimeDivision { beta, r_alpha, breakpoints, warnings })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Relative packet pruning threshold (`tol / 100` by default).
    pub prune_eps: f64,
    /// Sample pruning budget per node in `sqrt(t)`-weighted L1 mass (`tol / 100` by default).
    pub sample_budget: f64,
}

impl PicardConfig {
    pub fn with_tol(tol: f64) -> Self {
        PicardConfig { tol, max_iter: 30, prune_eps: tol / 100.0, sample_budget: tol / 100.0 }
    }

    pub fn node_prune(&self) -> Option<NodePrune> {
        if self.prune_eps <= 0.0 && self.sample_budget <= 0.0 {
            return None;
        }
        Some(NodePrune { eps_rel: self.prune_eps, weighted_budget: self.sample_budget })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PicardLogRow {
    pub n: usize,
    pub et_diff_upper: f64,
    pub packet_count: usize,
    pub dropped_mass: f64,
    pub contraction_ratio: f64,
}

#[derive(Clone, Debug)]
pub struct PicardState {
    pub n: usize,
    pub y: TimeSampledField,
    pub log: Vec<PicardLogRow>,
    pub converged: bool,
    pub times: Vec<f64>,
}

impl PicardState {
    pub fn ratios(&self) -> Vec<f64> {
        self.log.iter().skip(1).map(|r| r.contraction_ratio).collect()
    }
}

/// Time grid `0, T 2^{-m}, ..., T/2, T` with `m` chosen so the first cell resolves `max_rate`,
/// at least 16 nodes.
pub fn picard_grid(horizon: f64, max_rate: f64, ratio: f64) -> Vec<f64> {
    let t0 = (0.25 / max_rate.max(1e-300)).min(horizon / ratio.powi(15));
    let mut v = vec![0.0];
    let mut g = crate::numeric::geometric_grid(t0, horizon, ratio);
    while g.len() < 16 {
        g = crate::numeric::geometric_grid(g[0] / ratio, horizon, ratio);
    }
    v.extend(g);
    v
}

fn zero_trajectory(times: &[f64]) -> TimeSampledField {
    TimeSampledField::sampled(
        times.to_vec(),
        vec![PacketField::zero(3); times.len()],
        Interpolation::HeatFromLeft,
        vec![0.0; times.len()],
    )
    .expect("valid grid")
}

fn nodes(u: &TimeSampledField) -> &[PacketField] {
    match u {
        TimeSampledField::Sampled { fields, .. } => fields,
        TimeSampledField::HeatFlow { .. } => unreachable!("sampled trajectory expected"),
    }
}

fn prune_trajectory(u: &TimeSampledField, cfg: &PicardConfig) -> (TimeSampledField, f64) {
    let TimeSampledField::Sampled { times, fields, interp, growth } = u else {
        return (u.clone(), 0.0);
    };
    let Some(np) = cfg.node_prune() else {
        return (u.clone(), 0.0);
    };
    let mut dropped = 0.0;
    let pruned: Vec<PacketField> = fields
        .iter()
        .zip(times)
        .map(|(f, &t)| {
            let before = f.dropped_mass;
            let g = np.apply(f, t);
            dropped += (g.dropped_mass - before) * t.sqrt();
            g
        })
        .collect();
    (
        TimeSampledField::Sampled { times: times.clone(), fields: pruned, interp: *interp, growth: growth.clone() },
        dropped,
    )
}

fn is_zero_traj(u: &TimeSampledField) -> bool {
    nodes(u).iter().all(|f| f.is_empty())
}

/// `G_0 + G_1(y) - G_2(y)` with `d = u_2 - u_1`:
/// `G_0 = B(u_2, u_1 - u_2) + B(u_1, u_2)`, `G_1(y) = B(y, d) + B(d, y)`, `G_2(y) = B(y, y)`.
pub struct PicardMap {
    pub times: Vec<f64>,
    pub u1: TimeSampledField,
    pub u2: TimeSampledField,
    pub d: TimeSampledField,
    pub g0: TimeSampledField,
    pub prune: Option<NodePrune>,
}

impl PicardMap {
    pub fn new(
        u1: &TimeSampledField,
        u2: &TimeSampledField,
        times: &[f64],
        prune: Option<NodePrune>,
    ) -> Result<Self, RemainderError> {
        if times.first() != Some(&0.0) || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(RemainderError::Grid("times must start at 0 and increase".into()));
        }
        let u1s = duhamel::combine(&[(1.0, u1)], times)?;
        let u2s = duhamel::combine(&[(1.0, u2)], times)?;
        let d = duhamel::combine(&[(1.0, &u2s), (-1.0, &u1s)], times)?;
        let minus_d = duhamel::combine(&[(-1.0, &d)], times)?;
        let pr = prune.as_ref();
        let b1 = duhamel::duhamel_trajectory_pruned(&u2s, &minus_d, times, false, pr)?;
        drop(minus_d);
        let b2 = duhamel::duhamel_trajectory_pruned(&u1s, &u2s, times, false, pr)?;
        let g0 = duhamel::combine(&[(1.0, &b1), (1.0, &b2)], times)?;
        Ok(PicardMap { times: times.to_vec(), u1: u1s, u2: u2s, d, g0, prune })
    }

    pub fn apply(&self, y: &TimeSampledField) -> Result<TimeSampledField, RemainderError> {
        if is_zero_traj(y) {
            return Ok(self.g0.clone());
        }
        let t = &self.times;
        let pr = self.prune.as_ref();
        let yd = duhamel::duhamel_trajectory_pruned(y, &self.d, t, false, pr)?;
        let dy = duhamel::duhamel_trajectory_pruned(&self.d, y, t, false, pr)?;
        let yy = duhamel::duhamel_trajectory_pruned(y, y, t, false, pr)?;
        Ok(duhamel::combine(&[(1.0, &self.g0), (1.0, &yd), (1.0, &dy), (-1.0, &yy)], t)?)
    }
}

/// Picard iteration `y_{n+1} = G_0 + G_1(y_n) - G_2(y_n)` from `y_0 = 0` on the heat-from-left grid `times`.
pub fn picard_remainder(
    u1: &TimeSampledField,
    u2: &TimeSampledField,
    times: &[f64],
    cfg: &PicardConfig,
) -> Result<PicardState, RemainderError> {
    picard_remainder_observed(u1, u2, times, cfg, |_, _| {})
}

/// As [`picard_remainder`], calling `observe(n, y_n)` on every iterate.
pub fn picard_remainder_observed(
    u1: &TimeSampledField,
    u2: &TimeSampledField,
    times: &[f64],
    cfg: &PicardConfig,
    mut observe: impl FnMut(usize, &TimeSampledField),
) -> Result<PicardState, RemainderError> {
    let map = PicardMap::new(u1, u2, times, cfg.node_prune())?;
    let horizon = *times.last().unwrap();
    let mut y = zero_trajectory(times);
    let mut log: Vec<PicardLogRow> = Vec::new();
    let mut converged = false;
    let mut dropped_total = 0.0;
    let mut n = 0;
    while n < cfg.max_iter {
        let next = map.apply(&y)?;
        let (next, dropped) = prune_trajectory(&next, cfg);
        dropped_total += dropped;
        let diff = duhamel::combine(&[(1.0, &next), (-1.0, &y)], times)?;
        let e = analysis::et_upper(&diff, horizon);
        let ratio = match log.last() {
            Some(prev) if prev.et_diff_upper > 0.0 => e / prev.et_diff_upper,
            _ => f64::NAN,
        };
        n += 1;
        log.push(PicardLogRow {
            n,
            et_diff_upper: e,
            packet_count: nodes(&next).iter().map(|f| f.len()).sum(),
            dropped_mass: dropped_total,
            contraction_ratio: ratio,
        });
        observe(n, &next);
        y = next;
        if e < cfg.tol {
            converged = true;
            break;
        }
        let recent: Vec<f64> = log.iter().rev().take(3).map(|r| r.contraction_ratio).collect();
        if recent.len() == 3 && recent.iter().all(|r| *r > 1.0) {
            return Err(RemainderError::Divergence(log.iter().map(|r| r.contraction_ratio).collect()));
        }
    }
    Ok(PicardState { n, y, log, converged, times: times.to_vec() })
}

/// `E_T` upper bound of `y - (G_0 + G_1(y) - G_2(y))`, with the map pruned as in `cfg`.
pub fn fixed_point_residual(
    u1: &TimeSampledField,
    u2: &TimeSampledField,
    state: &PicardState,
    cfg: &PicardConfig,
) -> Result<f64, RemainderError> {
    let map = PicardMap::new(u1, u2, &state.times, cfg.node_prune())?;
    let img = map.apply(&state.y)?;
    let diff = duhamel::combine(&[(1.0, &state.y), (-1.0, &img)], &state.times)?;
    Ok(analysis::et_upper(&diff, *state.times.last().unwrap()))
}

/// Mild-equation residual of `u = u_1 - u_2 + y` by direct substitution:
/// `E_T` upper bound of `u - (e^{t Delta} u_0 - B(u, u))`, plus the residual norm of `u` at `check_times`.
pub fn mild_residual(
    u1: &TimeSampledField,
    u2: &TimeSampledField,
    state: &PicardState,
    check_times: &[f64],
    cfg: &PicardConfig,
) -> Result<(f64, Vec<(f64, f64)>), RemainderError> {
    let t = &state.times;
    let u = duhamel::combine(&[(1.0, u1), (-1.0, u2), (1.0, &state.y)], t)?;
    let buu = duhamel::duhamel_trajectory_pruned(&u, &u, t, false, cfg.node_prune().as_ref())?;
    let res = duhamel::combine(&[(1.0, &u), (-1.0, u1), (1.0, &buu)], t)?;
    let horizon = *t.last().unwrap();
    let total = analysis::et_upper(&res, horizon);
    let at = check_times.iter().map(|&s| (s, res.value_at(s).mass())).collect();
    Ok((total, at))
}

/// Per-`alpha` remainder sizes against `Q^{alpha + 3} (r^{-1/2} + |k_0|^{-1})`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RemainderReport {
    /// `(alpha, T_alpha, ||y||_{X_{T_alpha}} upper, rhs, ratio)` for `T_alpha` within the horizon.
    pub per_alpha: Vec<(usize, f64, f64, f64, f64)>,
    /// Triebel functional (canonical blocks) upper bound of `y(T)`.
    pub y_final_upper: f64,
    pub y_final_over_q2: f64,
    pub q: f64,
}

pub fn remainder_bound_report(
    state: &PicardState,
    params: &InitialDataParams,
    division: &TimeDivision,
    q_index: f64,
) -> Result<RemainderReport, RemainderError> {
    let sched = construction::frequency_schedule(params)?;
    let k0 = sched[0].k_norm();
    let horizon = *state.times.last().unwrap();
    let mut per_alpha = Vec::new();
    for (a, &ta) in division.breakpoints.iter().enumerate() {
        if ta > horizon {
            break;
        }
        let x = analysis::xt_upper(&state.y, ta);
        let rhs = params.q.powi(a as i32 + 3) * ((params.r as f64).powf(-0.5) + 1.0 / k0);
        per_alpha.push((a, ta, x, rhs, if rhs > 0.0 { x / rhs } else { f64::NAN }));
    }
    let filter = analysis::LPFilter::default();
    let y_t = state.y.value_at(horizon);
    let dec = analysis::canonical_decomposition(&y_t, &filter);
    let up = analysis::triebel_upper_norm(&dec, q_index, &[])?.upper;
    let q2 = params.q * params.q;
    Ok(RemainderReport {
        per_alpha,
        y_final_upper: up,
        y_final_over_q2: if q2 > 0.0 { up / q2 } else { f64::NAN },
        q: q_index,
    })
}
