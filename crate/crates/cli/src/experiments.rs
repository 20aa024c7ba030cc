//! `build-data`, `norms`, `gamma` and `picard` drivers.

use lacuna::analysis::{
    self, besov_grid, besov_norm, bmo_carleson_norm, canonical_decomposition, default_probes, low_freq_linfty_lower,
    sqrt_t_sup, triebel_upper_norm, BallGrid, LPFilter, MassSpectrum, TimeSampledField,
};
use lacuna::construction::{self, InitialDataParams};
use lacuna::duhamel::{self, QuadratureSpec};
use lacuna::packets::{self, PacketField};
use lacuna::remainder::{self, PicardConfig, PicardLogRow, PicardState};
use lacuna::NormBracket;

use crate::config::ExperimentConfig;
use crate::output::{num, write_text, Chart, Series, Table};
use crate::{CliError, RunSummary};

/// Samples below this fraction of the largest one carry round-off only and no direction.
pub const DIVERGENCE_FLOOR: f64 = 1e-14;
pub const DIVERGENCE_TOL: f64 = 1e-10;

pub fn ball_grid(cfg: &ExperimentConfig) -> BallGrid {
    BallGrid::dyadic(cfg.balls.kmin, cfg.balls.kmax)
}

pub fn triebel_canonical(f: &PacketField, q: f64) -> Result<NormBracket, CliError> {
    let dec = canonical_decomposition(f, &LPFilter::default());
    triebel_upper_norm(&dec, q, &default_probes()).map_err(CliError::compute)
}

/// Triebel bracket of `u_0` through its construction blocks `Q f_l / sqrt r`.
pub fn triebel_blocks(u0: &PacketField, params: &InitialDataParams, q: f64) -> Result<NormBracket, CliError> {
    let filter = LPFilter::default();
    let dec = construction::block_decomposition(u0, params, &filter).map_err(CliError::compute)?;
    triebel_upper_norm(&dec.representation(), q, &default_probes()).map_err(CliError::compute)
}

/// Same, for `e^{t Delta} u_0` with blocks `e^{t Delta} Q f_l / sqrt r`.
pub fn triebel_blocks_heat(u0: &PacketField, params: &InitialDataParams, q: f64, t: f64) -> Result<NormBracket, CliError> {
    let filter = LPFilter::default();
    let dec = construction::block_decomposition(u0, params, &filter).map_err(CliError::compute)?;
    let heat = packets::MultiplierSpec::Heat { t };
    let mut rep = Vec::new();
    for (l, f) in dec.representation() {
        rep.push((l, packets::apply_multiplier(&f, &heat).map_err(CliError::compute)?));
    }
    triebel_upper_norm(&rep, q, &default_probes()).map_err(CliError::compute)
}

pub fn heat(f: &PacketField, t: f64) -> Result<PacketField, CliError> {
    packets::apply_multiplier(f, &packets::MultiplierSpec::Heat { t }).map_err(CliError::compute)
}

pub fn build_u0(params: &InitialDataParams) -> Result<PacketField, CliError> {
    construction::build_initial_data(params).map_err(CliError::compute)
}

pub fn build_data(cfg: &ExperimentConfig) -> Result<RunSummary, CliError> {
    let dir = &cfg.output_dir;
    let mut sum = RunSummary::default();
    let sched = construction::frequency_schedule(&cfg.params).map_err(CliError::compute)?;
    let mut t = Table::new(&["s", "j_s", "k_s_y", "note"]);
    for e in &sched {
        let note = if e.s == 0 { "k_0: time-division scale only, not in the datum" } else { "" };
        t.push(vec![e.s.to_string(), e.j.to_string(), e.k.ky.to_string(), note.into()]);
    }
    sum.files.push(t.write(&dir.join("schedule.csv"))?);

    let u0 = build_u0(&cfg.params)?;
    let mut p = Table::new(&["center_x", "center_y", "center_z", "samples", "l1_mass"]);
    for pk in u0.packets() {
        let c = pk.center.as_array();
        p.push(vec![
            c[0].to_string(),
            c[1].to_string(),
            c[2].to_string(),
            pk.envelope.num_points().to_string(),
            num(pk.mass()),
        ]);
    }
    sum.files.push(p.write(&dir.join("packets.csv"))?);
    sum.files.push(write_text(&dir.join("u0.json"), &packets::to_json(&u0))?);

    let div = u0.divergence_defect_above(DIVERGENCE_FLOOR);
    if div > DIVERGENCE_TOL {
        sum.failures.push(format!("u0 divergence defect {div:e} > {DIVERGENCE_TOL:e}"));
    }
    if !u0.is_real_valued() {
        sum.failures.push("u0 is not real valued".into());
    }
    if cfg.params.q > 0.0 {
        construction::block_decomposition(&u0, &cfg.params, &LPFilter::default()).map_err(CliError::compute)?;
    }
    Ok(sum)
}

pub fn norms(cfg: &ExperimentConfig) -> Result<RunSummary, CliError> {
    let dir = &cfg.output_dir;
    let mut sum = RunSummary::default();
    let probes = default_probes();
    let balls = ball_grid(cfg);
    let mut t = Table::new(&["amplitude", "norm", "index", "lower", "upper", "note"]);
    let mut curve = Table::new(&["amplitude", "t", "sqrt_t_sup_lower", "sqrt_t_sup_upper", "triebel_upper"]);
    let mut series = Vec::new();
    let times: Vec<f64> = (0..cfg.grid.norm_times)
        .map(|i| cfg.horizon * 2f64.powf(-((cfg.grid.norm_times - 1 - i) as f64) * 16.0 / (cfg.grid.norm_times - 1) as f64))
        .collect();
    for &q in &cfg.amplitudes {
        let params = cfg.params_for(q);
        let u0 = build_u0(&params)?;
        let mut push = |name: &str, idx: String, b: &NormBracket| {
            t.push(vec![num(q), name.into(), idx, num(b.lower), num(b.upper), b.note.clone()]);
        };
        for &qi in &cfg.q_indices {
            push("triebel_canonical", num(qi), &triebel_canonical(&u0, qi)?);
            if q > 0.0 {
                push("triebel_blocks", num(qi), &triebel_blocks(&u0, &params, qi)?);
            }
        }
        let bes = besov_norm(&u0, &besov_grid(&u0), &probes).map_err(CliError::compute)?;
        push("besov", String::new(), &bes);
        let bmo = bmo_carleson_norm(&u0, &balls).map_err(CliError::compute)?;
        push("bmo_carleson", String::new(), &bmo);
        let traj = TimeSampledField::heat_flow(u0.clone(), cfg.horizon);
        let st = sqrt_t_sup(&traj, cfg.horizon, &probes).map_err(CliError::compute)?;
        push("sqrt_t_sup_heat", String::new(), &st);
        let xt = analysis::xt_norm(&traj, cfg.horizon, &balls).map_err(CliError::compute)?;
        push("xt_heat", String::new(), &xt);

        let mut pts = Vec::new();
        for &s in &times {
            let f = heat(&u0, s)?;
            let b = packets::sup_norm(&f, &probes);
            let tri = triebel_canonical(&f, cfg.q_index)?;
            curve.push(vec![num(q), num(s), num(s.sqrt() * b.lower), num(s.sqrt() * b.upper), num(tri.upper)]);
            pts.push((s, tri.upper));
        }
        series.push(Series { name: format!("Q = {q}"), points: pts });

        if let Some(qc) = &cfg.quadrature {
            let closed = duhamel::heat_pair_duhamel(&u0, &u0, cfg.horizon).map_err(CliError::compute)?;
            let quad = duhamel::bilinear_b(
                &traj,
                &traj,
                cfg.horizon,
                &QuadratureSpec::GradedGauss { levels: qc.levels, nodes: qc.nodes },
            )
            .map_err(CliError::compute)?;
            let rel = duhamel::relative_difference(&quad, &closed).map_err(CliError::compute)?;
            let b = NormBracket::new(0.0, rel, "graded Gauss vs closed form B(u1, u1)(T), relative sample difference");
            push("quadrature_check", String::new(), &b);
        }
    }
    sum.files.push(t.write(&dir.join("norms.csv"))?);
    sum.files.push(curve.write(&dir.join("norm_vs_t.csv"))?);
    if cfg.svg {
        let chart = Chart {
            title: format!("Triebel q = {} upper bound of e^(t Delta) u0", cfg.q_index),
            x_label: "t".into(),
            y_label: "norm".into(),
            log_x: true,
            log_y: false,
            series,
        };
        sum.files.push(write_text(&dir.join("norm_vs_t.svg"), &chart.render())?);
    }
    Ok(sum)
}

/// Radius of the smallest origin-centered ball holding the Fourier support.
pub fn support_radius(f: &PacketField) -> f64 {
    f.packets().iter().map(|p| p.center.norm() + p.envelope.occupied_radius()).fold(0.0, f64::max)
}

/// `u_200(T)` against `(Q^2 / 4r) sum_s Gamma_s` at one time.
#[derive(Clone, Debug)]
pub struct U200Check {
    pub t: f64,
    pub linf_lower: f64,
    pub gamma_scaled: f64,
    pub support_radius: f64,
}

pub fn u200_check(params: &InitialDataParams, t: f64, gamma_sum: f64) -> Result<U200Check, CliError> {
    let s20 = duhamel::split_u20(params, t).map_err(CliError::compute)?;
    let lo = low_freq_linfty_lower(&s20.u200, &default_probes()).map_err(CliError::compute)?;
    let scale = params.q * params.q / (4.0 * params.r as f64);
    Ok(U200Check { t, linf_lower: lo.lower, gamma_scaled: scale * gamma_sum, support_radius: support_radius(&s20.u200) })
}

pub fn gamma(cfg: &ExperimentConfig) -> Result<RunSummary, CliError> {
    let dir = &cfg.output_dir;
    let mut sum = RunSummary::default();
    let times = if cfg.grid.gamma_times.is_empty() { vec![cfg.horizon] } else { cfg.grid.gamma_times.clone() };
    let rep = duhamel::compute_gamma(&cfg.params, &times).map_err(CliError::compute)?;
    let mut t = Table::new(&["s", "t", "gamma", "a_term", "b_term", "d_term", "oracle_gamma", "rel_err"]);
    for r in &rep.rows {
        t.push(vec![
            r.s.to_string(),
            num(r.t),
            num(r.gamma),
            num(r.a_term),
            num(r.b_term),
            num(r.d_term),
            num(r.oracle_gamma),
            num(r.rel_err),
        ]);
    }
    sum.files.push(t.write(&dir.join("gamma.csv"))?);

    let mut c = Table::new(&["t", "sum_gamma", "u200_linf_lower", "scaled_gamma_sum", "ratio", "support_radius", "window"]);
    for &(tt, g) in &rep.assembled {
        let chk = u200_check(&cfg.params, tt, g)?;
        let in_window = rep.rows.iter().filter(|r| r.t == tt).all(|r| !r.flagged);
        c.push(vec![
            num(tt),
            num(g),
            num(chk.linf_lower),
            num(chk.gamma_scaled),
            num(if chk.gamma_scaled != 0.0 { chk.linf_lower / chk.gamma_scaled } else { f64::NAN }),
            num(chk.support_radius),
            if in_window { "inside".into() } else { "outside".into() },
        ]);
        if chk.support_radius > 9.0 {
            sum.failures.push(format!("u200 support radius {} exceeds 9 at t = {tt:e}", chk.support_radius));
        }
    }
    sum.files.push(c.write(&dir.join("u200_check.csv"))?);

    if cfg.svg {
        let mut series = Vec::new();
        for &tt in &times {
            let pts = rep.rows.iter().filter(|r| r.t == tt).map(|r| (r.s as f64, r.gamma)).collect();
            series.push(Series { name: format!("t = {tt:.3e}"), points: pts });
        }
        let chart = Chart {
            title: "Gamma_s".into(),
            x_label: "s".into(),
            y_label: "Gamma_s".into(),
            log_x: false,
            log_y: false,
            series,
        };
        sum.files.push(write_text(&dir.join("gamma.svg"), &chart.render())?);
    }
    Ok(sum)
}

/// Heat flow `u_1`, second iterate `u_2` on the Picard grid, and the grid.
pub struct Iterates {
    pub u0: PacketField,
    pub u1: TimeSampledField,
    pub u2: TimeSampledField,
    pub times: Vec<f64>,
}

pub fn iterates(params: &InitialDataParams, horizon: f64, ratio: f64) -> Result<Iterates, CliError> {
    let u0 = build_u0(params)?;
    let times = remainder::picard_grid(horizon, MassSpectrum::of(&u0).max_rate(), ratio);
    let u1 = TimeSampledField::heat_flow(u0.clone(), horizon);
    let u2 = duhamel::duhamel_trajectory_with(&u1, &u1, &times, false).map_err(CliError::compute)?;
    Ok(Iterates { u0, u1, u2, times })
}

pub fn picard_config(cfg: &ExperimentConfig) -> PicardConfig {
    PicardConfig { max_iter: cfg.max_iter, ..PicardConfig::with_tol(cfg.tol) }
}

fn trajectory_divergence(u: &TimeSampledField) -> f64 {
    match u {
        TimeSampledField::Sampled { fields, .. } => {
            fields.iter().map(|f| f.divergence_defect_above(DIVERGENCE_FLOOR)).fold(0.0, f64::max)
        }
        TimeSampledField::HeatFlow { data, .. } => data.divergence_defect_above(DIVERGENCE_FLOOR),
    }
}

/// Remainder solve with its consistency diagnostics.
pub struct PicardOutcome {
    pub state: PicardState,
    pub max_divergence: f64,
    pub fixed_point_residual: f64,
    pub mild_residual: f64,
    pub mild_at: Vec<(f64, f64)>,
    pub y_final_upper: f64,
    /// `(Q^2 / 4r) sum_s Gamma_s(T)`.
    pub u200_scale: f64,
}

impl PicardOutcome {
    pub fn max_ratio(&self) -> f64 {
        self.state.ratios().into_iter().fold(0.0, f64::max)
    }
}

/// Picard solve on the grid of `it`, with the largest divergence defect over `u_2` and every iterate.
pub fn solve_remainder(it: &Iterates, pc: &PicardConfig) -> Result<(PicardState, f64), CliError> {
    let mut div: f64 = trajectory_divergence(&it.u2);
    let state = remainder::picard_remainder_observed(&it.u1, &it.u2, &it.times, pc, |_, y| {
        div = div.max(trajectory_divergence(y));
    })
    .map_err(CliError::compute)?;
    Ok((state, div))
}

pub fn run_picard(cfg: &ExperimentConfig) -> Result<PicardOutcome, CliError> {
    let params = &cfg.params;
    let pc = picard_config(cfg);
    let it = iterates(params, cfg.horizon, cfg.grid.ratio)?;
    let (state, div) = solve_remainder(&it, &pc)?;
    let fp = remainder::fixed_point_residual(&it.u1, &it.u2, &state, &pc).map_err(CliError::compute)?;
    let h = cfg.horizon;
    let (mild, mild_at) =
        remainder::mild_residual(&it.u1, &it.u2, &state, &[h / 8.0, h / 2.0, h], &pc).map_err(CliError::compute)?;
    let division = remainder::time_step_schedule(params).map_err(CliError::compute)?;
    let rep = remainder::remainder_bound_report(&state, params, &division, cfg.q_index).map_err(CliError::compute)?;
    let g = duhamel::compute_gamma_with(params, &[h], false).map_err(CliError::compute)?;
    let scale = params.q * params.q / (4.0 * params.r as f64) * g.assembled[0].1;
    Ok(PicardOutcome {
        state,
        max_divergence: div,
        fixed_point_residual: fp,
        mild_residual: mild,
        mild_at,
        y_final_upper: rep.y_final_upper,
        u200_scale: scale,
    })
}

pub fn picard_log_table(log: &[PicardLogRow], amplitude: Option<f64>) -> Table {
    let mut head = vec!["n", "et_diff_upper", "packet_count", "dropped_mass", "contraction_ratio"];
    if amplitude.is_some() {
        head.insert(0, "amplitude");
    }
    let mut t = Table::new(&head);
    for r in log {
        let mut row = vec![
            r.n.to_string(),
            num(r.et_diff_upper),
            r.packet_count.to_string(),
            num(r.dropped_mass),
            num(r.contraction_ratio),
        ];
        if let Some(q) = amplitude {
            row.insert(0, num(q));
        }
        t.push(row);
    }
    t
}

pub fn picard(cfg: &ExperimentConfig) -> Result<RunSummary, CliError> {
    let dir = &cfg.output_dir;
    let mut sum = RunSummary::default();
    let out = run_picard(cfg)?;
    sum.files.push(picard_log_table(&out.state.log, None).write(&dir.join("picard_log.csv"))?);
    let mut t = Table::new(&["quantity", "value"]);
    let mut kv = |k: &str, v: String| t.push(vec![k.into(), v]);
    kv("converged", out.state.converged.to_string());
    kv("iterations", out.state.n.to_string());
    kv("grid_nodes", out.state.times.len().to_string());
    kv("max_contraction_ratio", num(out.max_ratio()));
    kv("max_divergence_defect", num(out.max_divergence));
    kv("fixed_point_residual", num(out.fixed_point_residual));
    kv("mild_residual", num(out.mild_residual));
    for (s, m) in &out.mild_at {
        kv(&format!("mild_residual_l1_at_{}", num(*s)), num(*m));
    }
    kv("y_final_triebel_upper", num(out.y_final_upper));
    kv("u200_scale", num(out.u200_scale));
    kv("y_over_u200_scale", num(out.y_final_upper / out.u200_scale));
    sum.files.push(t.write(&dir.join("picard_summary.csv"))?);
    if !out.state.converged {
        sum.failures.push(format!("Picard iteration did not reach tol {} in {} steps", cfg.tol, cfg.max_iter));
    }
    if out.max_divergence > DIVERGENCE_TOL {
        sum.failures.push(format!("Picard iterate divergence defect {:e}", out.max_divergence));
    }
    Ok(sum)
}
