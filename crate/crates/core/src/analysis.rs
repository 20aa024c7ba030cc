//! Littlewood-Paley blocks, the maximal function, and the norm functionals
//! (Triebel-Lizorkin, Besov, Carleson BMO^-1, X_T and E_T), all reported as brackets.

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use thiserror::Error;

use crate::numeric::{gauss_legendre, NormBracket};
use crate::packets::{self, apply_multiplier, evaluate, vec_norm, FrequencyCenter, MultiplierSpec, PacketError, PacketField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("filter constraint violated: {0}")]
    Filter(String),
    #[error("summability index q = {0} must exceed 1")]
    InvalidQ(f64),
    #[error("empty time grid")]
    EmptyGrid,
    #[error("packet at {center} reaches |xi| = {reach}, outside the ball B_9(0)")]
    OutsideLowBall { center: FrequencyCenter, reach: f64 },
    #[error("block at level {level} has a packet at {center} that Delta_{level} annihilates")]
    IncompatibleBlock { level: i32, center: FrequencyCenter },
    #[error("invalid trajectory: {0}")]
    Trajectory(String),
    #[error(transparent)]
    Packet(#[from] PacketError),
}

/// Smooth transition from 0 (at `x <= 0`) to 1 (at `x >= 1`).
fn smooth_step(x: f64, sigma: f64) -> f64 {
    let g = |y: f64| if y <= 0.0 { 0.0 } else { (-sigma / y).exp() };
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        let a = g(x);
        a / (a + g(1.0 - x))
    }
}

/// Radial dyadic filter `phi(rho) = chi(rho) - chi(2 rho)`, where `chi` is 1 below 5/4 and 0 above 7/4.
#[derive(Clone, Debug)]
pub struct LPFilter {
    pub smoothness: f64,
    /// `(rho, phi(rho))` on `[0, 2]`.
    pub profile: Vec<(f64, f64)>,
    pub partition_residual: f64,
}

impl LPFilter {
    pub fn chi(&self, rho: f64) -> f64 {
        1.0 - smooth_step((rho - 1.25) * 2.0, self.smoothness)
    }

    pub fn phi(&self, rho: f64) -> f64 {
        self.chi(rho) - self.chi(2.0 * rho)
    }

    /// `phi(2^-j |xi|)`.
    pub fn block_symbol(&self, j: i32, xi: [f64; 3]) -> f64 {
        self.phi(packets::norm3(xi) * 2f64.powi(-j))
    }
}

impl Default for LPFilter {
    fn default() -> Self {
        lp_filter_build(1.0).expect("default filter")
    }
}

pub fn lp_filter_build(smoothness: f64) -> Result<LPFilter, AnalysisError> {
    if !(smoothness > 0.0 && smoothness.is_finite()) {
        return Err(AnalysisError::Filter(format!("smoothness {smoothness}")));
    }
    let mut f = LPFilter { smoothness, profile: Vec::new(), partition_residual: 0.0 };
    let n = 4096;
    for i in 0..=n {
        let rho = 2.0 * i as f64 / n as f64;
        let v = f.phi(rho);
        if !(-1e-15..=1.0 + 1e-15).contains(&v) {
            return Err(AnalysisError::Filter(format!("phi({rho}) = {v} outside [0, 1]")));
        }
        if (rho < 0.625 || rho > 1.75) && v != 0.0 {
            return Err(AnalysisError::Filter(format!("phi({rho}) = {v} outside the support annulus")));
        }
        if (0.875..=1.25).contains(&rho) && v != 1.0 {
            return Err(AnalysisError::Filter(format!("phi({rho}) = {v} off the plateau")));
        }
        f.profile.push((rho, v));
    }
    let mut worst: f64 = 0.0;
    for i in 0..=600 {
        let rho = 2f64.powf(-3.0 + 6.0 * i as f64 / 600.0);
        let s: f64 = (-40..=40).map(|j| f.phi(rho * 2f64.powi(-j))).sum();
        worst = worst.max((s - 1.0).abs());
    }
    if worst > 1e-10 {
        return Err(AnalysisError::Filter(format!("partition of unity residual {worst:e}")));
    }
    f.partition_residual = worst;
    Ok(f)
}

/// Radial interval `[lo, hi]` containing the Fourier support of a packet.
fn support_shell(p: &packets::WavePacket) -> (f64, f64) {
    let k = p.center.norm();
    (k - p.envelope.radius(), k + p.envelope.radius())
}

/// `Delta_j f`; packets whose support shell misses the annulus of `phi(2^-j .)` are dropped.
pub fn lp_block(f: &PacketField, j: i32, filter: &LPFilter) -> PacketField {
    let s = 2f64.powi(j);
    let kept = f.filter(|p| {
        let (lo, hi) = support_shell(p);
        hi > 0.625 * s && lo < 1.75 * s
    });
    packets::apply_symbol_fn(&kept, |xi| filter.block_symbol(j, xi))
}

/// Default probe set: the origin, `+-(pi/16, 0, 0)` and a spacing-2 lattice in `[-4, 4]^3`.
pub fn default_probes() -> Vec<[f64; 3]> {
    let x0 = std::f64::consts::PI / 16.0;
    let mut v = vec![[0.0, 0.0, 0.0], [x0, 0.0, 0.0], [-x0, 0.0, 0.0]];
    for i in -2..=2 {
        for j in -2..=2 {
            for k in -2..=2 {
                if (i, j, k) != (0, 0, 0) {
                    v.push([2.0 * i as f64, 2.0 * j as f64, 2.0 * k as f64]);
                }
            }
        }
    }
    v
}

fn lq_sum(terms: impl Iterator<Item = f64>, q: f64) -> f64 {
    if q.is_infinite() {
        terms.fold(0.0, f64::max)
    } else {
        let v: Vec<f64> = terms.collect();
        let m = v.iter().cloned().fold(0.0, f64::max);
        if m == 0.0 {
            return 0.0;
        }
        m * v.iter().map(|x| (x / m).powf(q)).sum::<f64>().powf(1.0 / q)
    }
}

/// Bracket for `sup_x (sum_l 2^{-l q} |f_l(x)|^q)^{1/q}` for one representation `f = sum_l Delta_l f_l`.
pub fn triebel_upper_norm(
    decomposition: &[(i32, PacketField)],
    q: f64,
    probes: &[[f64; 3]],
) -> Result<NormBracket, AnalysisError> {
    if !(q > 1.0) {
        return Err(AnalysisError::InvalidQ(q));
    }
    for (l, f) in decomposition {
        let s = 2f64.powi(*l);
        for p in f.packets() {
            let (lo, hi) = support_shell(p);
            if !(hi > 0.625 * s && lo < 1.75 * s) {
                return Err(AnalysisError::IncompatibleBlock { level: *l, center: p.center });
            }
        }
    }
    let upper = lq_sum(decomposition.iter().map(|(l, f)| f.mass() * 2f64.powi(-l)), q);
    let lower = probes
        .par_iter()
        .map(|&x| lq_sum(decomposition.iter().map(|(l, f)| vec_norm(&evaluate(f, x)) * 2f64.powi(-l)), q))
        .reduce(|| 0.0, f64::max);
    Ok(NormBracket::new(lower.min(upper), upper, format!("triebel q={q}: probes / block L1 masses")))
}

/// Levels `k` with `Delta_k p != 0` possible, from the support shell of a packet.
fn packet_levels(p: &packets::WavePacket) -> Option<(i32, i32)> {
    let (mut lo, hi) = support_shell(p);
    if lo <= 0.0 {
        // Smallest nonzero sample frequency.
        let e = &p.envelope;
        lo = f64::INFINITY;
        for idx in 0..e.num_points() {
            if e.sample(idx).iter().any(|c| c.re != 0.0 || c.im != 0.0) {
                let r = packets::norm3(p.xi(idx));
                if r > 0.0 {
                    lo = lo.min(r);
                }
            }
        }
        if !lo.is_finite() {
            return None;
        }
    }
    let kmin = (lo / 1.75).log2().floor() as i32;
    let kmax = (hi / 0.625).log2().ceil() as i32;
    Some((kmin, kmax))
}

/// Canonical representation `f_k = (Delta_{k-1} + Delta_k + Delta_{k+1}) f` over the levels where `Delta_k f != 0`.
pub fn canonical_decomposition(f: &PacketField, filter: &LPFilter) -> Vec<(i32, PacketField)> {
    let mut levels = std::collections::BTreeSet::new();
    for p in f.packets() {
        if let Some((a, b)) = packet_levels(p) {
            for k in a..=b {
                levels.insert(k);
            }
        }
    }
    let mut out = Vec::new();
    for k in levels {
        if lp_block(f, k, filter).is_empty() {
            continue;
        }
        let s = 2f64.powi(k);
        // Packets missing the annulus of Delta_k contribute nothing to Delta_k f_k.
        let near = f.filter(|p| {
            let (lo, hi) = support_shell(p);
            hi > 0.625 * s && lo < 1.75 * s
        });
        let fk = packets::apply_symbol_fn(&near, |xi| {
            filter.block_symbol(k - 1, xi) + filter.block_symbol(k, xi) + filter.block_symbol(k + 1, xi)
        });
        out.push((k, fk));
    }
    out
}

/// Per-sample L1 weights `h^3 |e|` with heat rates `|xi|^2`.
#[derive(Clone, Debug, Default)]
pub struct MassSpectrum {
    pub mass: Vec<f64>,
    pub rate: Vec<f64>,
}

impl MassSpectrum {
    pub fn of(f: &PacketField) -> Self {
        let mut s = MassSpectrum::default();
        for p in f.packets() {
            let e = &p.envelope;
            let h3 = e.h().powi(3);
            for idx in 0..e.num_points() {
                let m = e.sample_norm(idx) * h3;
                if m > 0.0 {
                    let xi = p.xi(idx);
                    s.mass.push(m);
                    s.rate.push(xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]);
                }
            }
        }
        s
    }

    /// `U(t) = sum m e^{-t A}`, the L1 mass of the heat flow at time `t`.
    pub fn at(&self, t: f64) -> f64 {
        self.mass.iter().zip(&self.rate).map(|(m, a)| m * packets::heat_factor(t, *a)).sum()
    }

    /// `int_0^dt U(s) ds`.
    pub fn integral(&self, dt: f64) -> f64 {
        self.mass
            .iter()
            .zip(&self.rate)
            .map(|(m, a)| {
                let x = a * dt;
                if x < 1e-8 {
                    m * dt
                } else {
                    m * (-(-x).exp_m1()) / a
                }
            })
            .sum()
    }

    /// `sup_{t >= t0} sqrt(t) U(t)` bounded term by term.
    pub fn sqrt_t_tail(&self, t0: f64) -> f64 {
        self.mass
            .iter()
            .zip(&self.rate)
            .map(|(m, a)| {
                if *a == 0.0 {
                    return f64::INFINITY;
                }
                let tp = (0.5 / a).max(t0);
                m * tp.sqrt() * (-a * tp).exp()
            })
            .sum()
    }

    /// `int_{t0}^inf U(t)^2 dt <= U(t0) * sum m e^{-t0 A} / A`.
    pub fn square_tail(&self, t0: f64) -> f64 {
        let u = self.at(t0);
        if u == 0.0 {
            return 0.0;
        }
        let s: f64 = self
            .mass
            .iter()
            .zip(&self.rate)
            .map(|(m, a)| if *a == 0.0 { f64::INFINITY } else { m * (-a * t0).exp() / a })
            .sum();
        u * s
    }

    pub fn max_rate(&self) -> f64 {
        self.rate.iter().cloned().fold(0.0, f64::max)
    }
}

/// Geometric grid `[2^{-2 jmax - 4}, 4]` with ratio `2^{1/4}`, where `2^jmax` bounds the support.
pub fn besov_grid(f: &PacketField) -> Vec<f64> {
    let jmax = f.support_bound().max(1.0).log2().ceil();
    crate::numeric::geometric_grid(2f64.powf(-2.0 * jmax - 4.0), 4.0, 2f64.powf(0.25))
}

/// Bracket for `sup_{t > 0} sqrt(t) ||e^{t Delta} f||_inf`.
pub fn besov_norm(f: &PacketField, grid: &[f64], probes: &[[f64; 3]]) -> Result<NormBracket, AnalysisError> {
    if grid.is_empty() {
        return Err(AnalysisError::EmptyGrid);
    }
    if f.is_empty() {
        return Ok(NormBracket::zero());
    }
    let spec = MassSpectrum::of(f);
    let u: Vec<f64> = grid.iter().map(|&t| spec.at(t)).collect();
    let grid_bound = |stride: usize| -> f64 {
        let idx: Vec<usize> = (0..grid.len()).step_by(stride).chain(std::iter::once(grid.len() - 1)).collect();
        let mut b = grid[idx[0]].sqrt() * spec.at(0.0);
        for w in idx.windows(2) {
            b = b.max(grid[w[1]].sqrt() * u[w[0]]);
        }
        b.max(spec.sqrt_t_tail(grid[grid.len() - 1]))
    };
    let fine = grid_bound(1);
    let coarse = grid_bound(2);
    let per_sample: f64 = spec
        .mass
        .iter()
        .zip(&spec.rate)
        .map(|(m, a)| if *a == 0.0 { f64::INFINITY } else { m / (2.0 * std::f64::consts::E * a).sqrt() })
        .sum();
    let upper = fine.min(per_sample);
    // Lower: scan the grid from the largest candidate down, skipping times that cannot improve.
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| (grid[b].sqrt() * u[b]).total_cmp(&(grid[a].sqrt() * u[a])));
    let mut lower: f64 = 0.0;
    for i in order {
        let cap = grid[i].sqrt() * u[i];
        if cap <= lower {
            break;
        }
        let g = apply_multiplier(f, &MultiplierSpec::Heat { t: grid[i] })?;
        let m = probes.par_iter().map(|&x| vec_norm(&evaluate(&g, x))).reduce(|| 0.0, f64::max);
        lower = lower.max(grid[i].sqrt() * m);
    }
    Ok(NormBracket::new(
        lower.min(upper),
        upper,
        format!("besov: grid {} pts, refinement estimate {:.3e}", grid.len(), (coarse - fine).abs() / fine.max(1e-300)),
    ))
}

/// `||f||_inf` bracket for fields with Fourier support in `B_9(0)`, a lower bound for the low-frequency blocks.
pub fn low_freq_linfty_lower(f: &PacketField, probes: &[[f64; 3]]) -> Result<NormBracket, AnalysisError> {
    for p in f.packets() {
        let reach = p.center.norm() + p.envelope.radius();
        if reach > 9.0 {
            return Err(AnalysisError::OutsideLowBall { center: p.center, reach });
        }
    }
    Ok(packets::sup_norm(f, probes).with_note("L_inf of a B_9-supported field: lower bound for the low blocks"))
}

/// Balls `B_R(x)` for Carleson-type averages.
#[derive(Clone, Debug)]
pub struct BallGrid {
    pub centers: Vec<[f64; 3]>,
    pub radii: Vec<f64>,
}

impl BallGrid {
    /// Dyadic radii `2^k` for `k` in `kmin..=kmax` with the default probe centers.
    pub fn dyadic(kmin: i32, kmax: i32) -> Self {
        let x0 = std::f64::consts::PI / 16.0;
        BallGrid {
            centers: vec![[0.0, 0.0, 0.0], [x0, 0.0, 0.0], [-x0, 0.0, 0.0], [1.0, 1.0, 1.0]],
            radii: (kmin..=kmax).map(|k| 2f64.powi(k)).collect(),
        }
    }
}

/// Offsets of a lattice stencil in the unit ball with `n` points per radius.
fn ball_stencil(n: i32) -> Vec<[f64; 3]> {
    let mut v = Vec::new();
    for i in -n..=n {
        for j in -n..=n {
            for k in -n..=n {
                let p = [i as f64 / n as f64, j as f64 / n as f64, k as f64 / n as f64];
                if packets::norm3(p) <= 1.0 + 1e-12 {
                    v.push(p);
                }
            }
        }
    }
    v
}

/// Time nodes on `(0, tmax]` graded dyadically toward 0, resolving rates up to `amax`.
fn carleson_nodes(tmax: f64, amax: f64) -> Vec<(f64, f64)> {
    let levels = ((tmax * amax).max(1.0).log2().ceil() as usize + 2).min(40);
    crate::numeric::graded_nodes(tmax, levels, 4)
}

/// Average of `|u|^2` over `B_R(x) x (0, R^2]` by stencil and graded Gauss quadrature.
fn carleson_average(traj: &TimeSampledField, x: [f64; 3], r: f64, stencil: &[[f64; 3]], nodes: &[(f64, f64)]) -> f64 {
    let pts: Vec<[f64; 3]> = stencil.iter().map(|s| [x[0] + r * s[0], x[1] + r * s[1], x[2] + r * s[2]]).collect();
    let total: f64 = nodes
        .par_iter()
        .map(|&(t, w)| {
            let f = traj.value_at(t);
            let avg: f64 = pts.iter().map(|&y| evaluate(&f, y).iter().map(|c| c.norm_sqr()).sum::<f64>()).sum::<f64>()
                / pts.len() as f64;
            w * avg
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    total.sqrt()
}

/// A trajectory on `(0, T]`.
#[derive(Clone, Debug)]
pub enum TimeSampledField {
    /// `t -> e^{t Delta} data`.
    HeatFlow { data: PacketField, horizon: f64 },
    /// Values `fields[i]` at `times[i]`, with `times[0] = 0`.
    Sampled {
        times: Vec<f64>,
        fields: Vec<PacketField>,
        interp: Interpolation,
        /// `growth[i]` bounds the L1 mass the true trajectory may gain on `(t_{i-1}, t_i]`
        /// beyond the interpolant; `growth[0]` is unused.
        growth: Vec<f64>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interpolation {
    /// `u(t) = fields[i]` on `(t_{i-1}, t_i]`.
    ConstantLeft,
    /// `u(t) = e^{(t - t_{i-1}) Delta} fields[i-1]` on `(t_{i-1}, t_i)`, exact at nodes.
    HeatFromLeft,
}

impl TimeSampledField {
    pub fn heat_flow(data: PacketField, horizon: f64) -> Self {
        TimeSampledField::HeatFlow { data, horizon }
    }

    pub fn sampled(
        times: Vec<f64>,
        fields: Vec<PacketField>,
        interp: Interpolation,
        growth: Vec<f64>,
    ) -> Result<Self, AnalysisError> {
        if times.len() < 2 || times.len() != fields.len() || growth.len() != times.len() {
            return Err(AnalysisError::Trajectory("need matching times, fields and growth with at least two nodes".into()));
        }
        if times[0] != 0.0 || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(AnalysisError::Trajectory("times must start at 0 and increase strictly".into()));
        }
        if growth.iter().any(|g| !(*g >= 0.0)) {
            return Err(AnalysisError::Trajectory("growth bounds must be non-negative".into()));
        }
        Ok(TimeSampledField::Sampled { times, fields, interp, growth })
    }

    pub fn zero(horizon: f64) -> Self {
        TimeSampledField::HeatFlow { data: PacketField::zero(3), horizon }
    }

    pub fn horizon(&self) -> f64 {
        match self {
            TimeSampledField::HeatFlow { horizon, .. } => *horizon,
            TimeSampledField::Sampled { times, .. } => *times.last().unwrap(),
        }
    }

    /// Cell index `i` with `t` in `(t_{i-1}, t_i]`.
    fn cell(times: &[f64], t: f64) -> usize {
        times.partition_point(|&s| s < t).clamp(1, times.len() - 1)
    }

    pub fn value_at(&self, t: f64) -> PacketField {
        match self {
            TimeSampledField::HeatFlow { data, .. } => {
                apply_multiplier(data, &MultiplierSpec::Heat { t }).expect("non-negative time")
            }
            TimeSampledField::Sampled { times, fields, interp, .. } => {
                let i = Self::cell(times, t);
                match interp {
                    Interpolation::ConstantLeft => fields[i].clone(),
                    Interpolation::HeatFromLeft => {
                        if t == times[i] {
                            fields[i].clone()
                        } else {
                            apply_multiplier(&fields[i - 1], &MultiplierSpec::Heat { t: t - times[i - 1] })
                                .expect("non-negative time")
                        }
                    }
                }
            }
        }
    }

    /// Cells `(a, b, sup-mass bound, int of mass^2 bound)` covering `(0, T]`.
    fn mass_cells(&self) -> Vec<(f64, f64, f64, f64)> {
        match self {
            TimeSampledField::HeatFlow { data, horizon } => {
                let spec = MassSpectrum::of(data);
                if spec.mass.is_empty() {
                    return vec![(0.0, *horizon, 0.0, 0.0)];
                }
                let amax = spec.max_rate().max(1.0 / horizon);
                let t0 = (0.125 / amax).min(*horizon);
                let grid = crate::numeric::geometric_grid(t0, *horizon, 2f64.powf(0.25));
                let mut out = Vec::with_capacity(grid.len() + 1);
                let u0 = spec.at(0.0);
                out.push((0.0, t0, u0, u0 * spec.integral(t0)));
                for w in grid.windows(2) {
                    let ua = spec.at(w[0]);
                    out.push((w[0], w[1], ua, ua * ua * (w[1] - w[0])));
                }
                out
            }
            TimeSampledField::Sampled { times, fields, interp, growth } => {
                let mut out = Vec::with_capacity(times.len());
                for i in 1..times.len() {
                    let dt = times[i] - times[i - 1];
                    match interp {
                        Interpolation::ConstantLeft => {
                            let m = fields[i].mass() + growth[i];
                            out.push((times[i - 1], times[i], m, m * m * dt));
                        }
                        Interpolation::HeatFromLeft => {
                            let spec = MassSpectrum::of(&fields[i - 1]);
                            let m0 = spec.at(0.0);
                            let g = growth[i];
                            let int_m = spec.integral(dt);
                            let sq = m0 * int_m + 2.0 * g * int_m + g * g * dt;
                            out.push((times[i - 1], times[i], (m0 + g).max(fields[i].mass()), sq));
                        }
                    }
                }
                out
            }
        }
    }

    /// Node times and exact node values used for lower bounds.
    fn lower_nodes(&self) -> Vec<(f64, PacketField)> {
        match self {
            TimeSampledField::HeatFlow { data, horizon } => {
                let spec = MassSpectrum::of(data);
                let amax = spec.max_rate().max(1.0 / horizon);
                let t0 = (0.125 / amax).min(*horizon);
                crate::numeric::geometric_grid(t0, *horizon, 2f64.sqrt())
                    .into_iter()
                    .map(|t| (t, self.value_at(t)))
                    .collect()
            }
            TimeSampledField::Sampled { times, fields, .. } => {
                times.iter().cloned().zip(fields.iter().cloned()).skip(1).collect()
            }
        }
    }

    pub fn max_rate(&self) -> f64 {
        match self {
            TimeSampledField::HeatFlow { data, .. } => MassSpectrum::of(data).max_rate(),
            TimeSampledField::Sampled { fields, .. } => {
                fields.iter().map(|f| MassSpectrum::of(f).max_rate()).fold(0.0, f64::max)
            }
        }
    }

    /// Upper bound for `sup_{0 < t <= T} ||u(t)||_inf` by L1 masses.
    pub fn sup_mass(&self, tmax: f64) -> f64 {
        self.mass_cells().iter().filter(|c| c.0 < tmax).map(|c| c.2).fold(0.0, f64::max)
    }
}

/// Bracket for the Koch-Tataru `X_T` quantity
/// `sup_{x, R^2 <= T} (|B_R|^{-1} int_0^{R^2} int_{B_R} |u|^2)^{1/2}`.
pub fn xt_norm(u: &TimeSampledField, t: f64, balls: &BallGrid) -> Result<NormBracket, AnalysisError> {
    if !(t > 0.0) || t > u.horizon() * (1.0 + 1e-12) {
        return Err(AnalysisError::Trajectory(format!("horizon {t} outside (0, {}]", u.horizon())));
    }
    let mut sq = 0.0;
    for (a, b, _, s) in u.mass_cells() {
        if a >= t {
            break;
        }
        sq += if b <= t { s } else { s * (t - a) / (b - a) };
    }
    let upper = sq.sqrt();
    if upper == 0.0 {
        return Ok(NormBracket::zero().with_note("X_T: zero trajectory"));
    }
    let amax = u.max_rate();
    let stencil = ball_stencil(2);
    let mut lower: f64 = 0.0;
    for &r in &balls.radii {
        let tr = r * r;
        if tr > t {
            continue;
        }
        let nodes = carleson_nodes(tr, amax);
        for &x in &balls.centers {
            lower = lower.max(carleson_average(u, x, r, &stencil, &nodes));
        }
    }
    Ok(NormBracket::new(lower.min(upper), upper, "X_T: ball quadrature / (int ||u^||_L1^2)^{1/2}"))
}

/// Bracket for `sup_{0 < t <= T} sqrt(t) ||u(t)||_inf + ||u||_{X_T}`.
pub fn et_norm(u: &TimeSampledField, t: f64, probes: &[[f64; 3]], balls: &BallGrid) -> Result<NormBracket, AnalysisError> {
    let sup = sqrt_t_sup(u, t, probes)?;
    let xt = xt_norm(u, t, balls)?;
    Ok(sup.plus(&xt).with_note("E_T = sup sqrt(t)|u| + X_T"))
}

/// Upper end of [`et_norm`] alone, without probe or ball evaluations.
pub fn et_upper(u: &TimeSampledField, t: f64) -> f64 {
    let mut sq = 0.0;
    let mut sup: f64 = 0.0;
    for (a, b, m, s) in u.mass_cells() {
        if a >= t {
            break;
        }
        sq += if b <= t { s } else { s * (t - a) / (b - a) };
        sup = sup.max(b.min(t).sqrt() * m);
    }
    sup + sq.sqrt()
}

/// Upper end of [`xt_norm`] on `(0, t]`.
pub fn xt_upper(u: &TimeSampledField, t: f64) -> f64 {
    let mut sq = 0.0;
    for (a, b, _, s) in u.mass_cells() {
        if a >= t {
            break;
        }
        sq += if b <= t { s } else { s * (t - a) / (b - a) };
    }
    sq.sqrt()
}

/// Bracket for `sup_{0 < t <= T} sqrt(t) ||u(t)||_inf`.
pub fn sqrt_t_sup(u: &TimeSampledField, t: f64, probes: &[[f64; 3]]) -> Result<NormBracket, AnalysisError> {
    let upper = u
        .mass_cells()
        .iter()
        .filter(|c| c.0 < t)
        .map(|c| c.1.min(t).sqrt() * c.2)
        .fold(0.0, f64::max);
    if upper == 0.0 {
        return Ok(NormBracket::zero());
    }
    let lower = u
        .lower_nodes()
        .par_iter()
        .filter(|(s, _)| *s <= t)
        .map(|(s, f)| {
            let m = probes.iter().map(|&x| vec_norm(&evaluate(f, x))).fold(0.0, f64::max);
            s.sqrt() * m
        })
        .reduce(|| 0.0, f64::max);
    Ok(NormBracket::new(lower.min(upper), upper, "sup sqrt(t)|u|: node probes / cell L1 masses"))
}

/// Bracket for the Carleson characterization of `||f||_{BMO^-1}`.
pub fn bmo_carleson_norm(f: &PacketField, balls: &BallGrid) -> Result<NormBracket, AnalysisError> {
    if f.is_empty() {
        return Ok(NormBracket::zero());
    }
    let spec = MassSpectrum::of(f);
    let amax = spec.max_rate();
    let rmax = balls.radii.iter().cloned().fold(0.0, f64::max);
    let t_end = (rmax * rmax).max(4.0 / spec.rate.iter().cloned().filter(|a| *a > 0.0).fold(f64::INFINITY, f64::min));
    let t0 = (0.125 / amax.max(1e-300)).min(t_end);
    let grid = crate::numeric::geometric_grid(t0, t_end, 2f64.powf(0.25));
    let mut sq = spec.at(0.0) * spec.integral(t0);
    for w in grid.windows(2) {
        let u = spec.at(w[0]);
        sq += u * u * (w[1] - w[0]);
    }
    sq += spec.square_tail(t_end);
    let upper = sq.sqrt();
    let traj = TimeSampledField::heat_flow(f.clone(), rmax * rmax);
    let stencil = ball_stencil(2);
    let mut lower: f64 = 0.0;
    for &r in &balls.radii {
        let nodes = carleson_nodes(r * r, amax);
        for &x in &balls.centers {
            lower = lower.max(carleson_average(&traj, x, r, &stencil, &nodes));
        }
    }
    Ok(NormBracket::new(lower.min(upper), upper, "Carleson BMO^-1: ball quadrature / (int U^2)^{1/2}"))
}

/// `max_R` of the stencil average of `|f|` over `B_R(x)`: a lower approximation of `Mf(x)`.
pub fn maximal_function(f: &PacketField, x: [f64; 3], radii: &[f64]) -> f64 {
    let stencil = ball_stencil(4);
    radii
        .iter()
        .map(|&r| {
            let s: f64 = stencil
                .par_iter()
                .map(|o| vec_norm(&evaluate(f, [x[0] + r * o[0], x[1] + r * o[1], x[2] + r * o[2]])))
                .collect::<Vec<f64>>()
                .iter()
                .sum();
            s / stencil.len() as f64
        })
        .fold(0.0, f64::max)
}

/// Gauss-Legendre rule on `[a, b]`.
pub fn gauss_on(a: f64, b: f64, n: usize) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    x.iter().zip(&w).map(|(x, w)| (a + half * (x + 1.0), half * w)).collect()
}

/// Componentwise complex difference norm helper used by reproduction checks.
pub fn field_distance_at(a: &PacketField, b: &PacketField, x: [f64; 3]) -> f64 {
    let va = evaluate(a, x);
    let vb = evaluate(b, x);
    let d: Vec<C64> = va.iter().zip(&vb).map(|(p, q)| p - q).collect();
    vec_norm(&d)
}
