//! Numerical verification of the kernel, heat-flow, hierarchy and bilinear estimates.
//!
//! Each check evaluates `ratio = lhs / rhs` on a seeded corpus, where `rhs` is the right-hand side
//! shape without its implicit constant. Calibration freezes `C = margin * max ratio` together with
//! a hash of the corpus; later runs pass when every ratio stays within the frozen `C`.

use std::collections::BTreeMap;
use std::path::Path;

use lacuna::analysis::{
    self, default_probes, et_upper, lp_block, maximal_function, sqrt_t_sup, xt_upper, LPFilter, MassSpectrum,
    TimeSampledField,
};
use lacuna::construction::{self, InitialDataParams, PSI_RADIUS};
use lacuna::duhamel;
use lacuna::packets::{self, evaluate, make_packet, vec_norm, Envelope, FrequencyCenter, MultiplierSpec, PacketField};
use lacuna::remainder;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::experiments::{build_u0, triebel_canonical, triebel_blocks, triebel_blocks_heat};
use crate::output::{num, Table};
use crate::{CliError, RunSummary};

/// Inputs of the verification corpus; every field enters the corpus hash of the checks using it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LemmaCorpus {
    /// Random samples per sampled check.
    pub samples: usize,
    /// Desk schedule `j_s = desk_start + desk_gap s`.
    pub desk_start: u32,
    pub desk_gap: u32,
    pub h: f64,
    /// Mode counts of the scaling checks.
    pub scaling_r: Vec<usize>,
    /// Triebel indices of the scaling check.
    pub scaling_q: Vec<f64>,
    /// Decay constant `c` of the kernel bounds.
    pub kernel_c: f64,
    /// Decay constant `c` of the lacunary sums.
    pub sum_c: f64,
    /// Datum of the time-step division check.
    pub division_q: f64,
    pub division_r: usize,
    /// `T = tail_factor |k_0|^-2` in the heat tail check.
    pub tail_factor: f64,
    pub hierarchy_m0: u32,
    pub hierarchy_r: usize,
    pub hierarchy_amplitudes: Vec<f64>,
    pub hierarchy_times: Vec<f64>,
    pub bilinear_horizon: f64,
    /// `C = margin * max ratio` at calibration.
    pub margin: f64,
}

impl Default for LemmaCorpus {
    fn default() -> Self {
        LemmaCorpus {
            samples: 20,
            desk_start: 4,
            desk_gap: 2,
            h: 0.125,
            scaling_r: vec![2, 4, 8, 16],
            scaling_q: vec![2.0, 3.0, 4.0],
            kernel_c: 0.25,
            sum_c: 1.0,
            division_q: 2.0,
            division_r: 8,
            tail_factor: 4.0,
            hierarchy_m0: 7,
            hierarchy_r: 8,
            hierarchy_amplitudes: vec![1.0, 2.0, 3.0],
            hierarchy_times: vec![2f64.powi(-66), 2f64.powi(-48), 2f64.powi(-28), 2f64.powi(-20)],
            bilinear_horizon: 2f64.powi(-4),
            margin: 2.0,
        }
    }
}

impl LemmaCorpus {
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(format!("lemmas: {m}")));
        if self.samples == 0 {
            return bad("samples must be positive");
        }
        if self.desk_gap < 2 {
            return bad("desk_gap must be at least 2");
        }
        if self.scaling_r.len() < 2 || self.scaling_r.iter().any(|r| *r == 0) {
            return bad("scaling_r needs at least two positive entries");
        }
        if self.scaling_q.iter().any(|q| !(*q > 1.0)) {
            return bad("scaling_q entries must exceed 1");
        }
        if !(self.kernel_c > 0.0 && self.sum_c > 0.0 && self.margin >= 1.0 && self.tail_factor > 1.0) {
            return bad("kernel_c, sum_c must be positive, margin >= 1, tail_factor > 1");
        }
        if !(self.bilinear_horizon > 0.0) || self.hierarchy_times.iter().any(|t| !(*t > 0.0)) {
            return bad("times must be positive");
        }
        if self.hierarchy_amplitudes.iter().any(|q| !(*q > 0.0)) || !(self.division_q > 0.0) {
            return bad("amplitudes must be positive");
        }
        Ok(())
    }

    pub fn desk(&self, q: f64, r: usize) -> InitialDataParams {
        let js = (0..=r as u32).map(|s| self.desk_start + self.desk_gap * s).collect();
        let mut p = InitialDataParams::explicit(q, js);
        p.h = self.h;
        p
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LemmaSample {
    pub lhs: f64,
    pub rhs: f64,
    pub detail: String,
}

impl LemmaSample {
    pub fn ratio(&self) -> f64 {
        if self.lhs == 0.0 {
            0.0
        } else {
            self.lhs / self.rhs
        }
    }
}

#[derive(Clone, Debug)]
pub struct LemmaCheck {
    pub id: &'static str,
    pub statement: &'static str,
    /// Decay constant used in the right-hand side, 0 when none enters.
    pub c: f64,
    pub corpus: Value,
    pub samples: Vec<LemmaSample>,
}

impl LemmaCheck {
    pub fn max_ratio(&self) -> f64 {
        self.samples.iter().map(|s| s.ratio()).fold(0.0, f64::max)
    }

    pub fn corpus_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.id.as_bytes());
        h.update(b"\n");
        h.update(serde_json::to_string(&self.corpus).expect("corpus serializes").as_bytes());
        format!("{:x}", h.finalize())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constant {
    #[serde(rename = "C")]
    pub big_c: f64,
    pub c: f64,
    pub corpus_hash: String,
}

pub type Constants = BTreeMap<String, Constant>;

pub fn load_constants(path: &Path) -> Result<Constants, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::Config(format!("constants file {} missing; run verify-lemmas with --calibrate", path.display()))
        } else {
            CliError::io(path, e)
        }
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn save_constants(path: &Path, c: &Constants) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(c).expect("constants serialize") + "\n";
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn uniform_point(r: &mut ChaCha8Rng, half: f64) -> [f64; 3] {
    [r.gen_range(-half..half), r.gen_range(-half..half), r.gen_range(-half..half)]
}

fn radii_for(j: i32) -> Vec<f64> {
    (-2..=j + 2).map(|m| 2f64.powi(-m)).collect()
}

fn comp(e: impl std::fmt::Display) -> CliError {
    CliError::compute(e)
}

/// `|d_1 e^{t Delta} Delta_j f(x)| <= C 2^j e^{-c t 4^j} Mf(x)` for `f = u_0` on the desk schedule.
pub fn kernel_block_bound(k: &LemmaCorpus, seed: u64) -> Result<LemmaCheck, CliError> {
    let params = k.desk(1.0, 4);
    let u0 = build_u0(&params)?;
    let js = construction::schedule_exponents(&params).map_err(comp)?;
    let filter = LPFilter::default();
    let mut r = rng(seed, 1);
    let mut samples = Vec::new();
    for _ in 0..k.samples {
        let j = js[r.gen_range(1..js.len())] as i32;
        let t = 4f64.powi(-j) * 4f64.powf(r.gen_range(-1.0..1.0));
        let x = uniform_point(&mut r, 2.0);
        let block = lp_block(&u0, j, &filter);
        let d = packets::apply_multiplier(&block, &MultiplierSpec::Derivative { axis: 0 }).map_err(comp)?;
        let g = packets::apply_multiplier(&d, &MultiplierSpec::Heat { t }).map_err(comp)?;
        let lhs = vec_norm(&evaluate(&g, x));
        let mf = maximal_function(&u0, x, &radii_for(j));
        let rhs = 2f64.powi(j) * (-k.kernel_c * t * 4f64.powi(j)).exp() * mf;
        samples.push(LemmaSample { lhs, rhs, detail: format!("j={j} t={} x={x:?}", num(t)) });
    }
    Ok(LemmaCheck {
        id: "kernel_block_bound",
        statement: "|d1 e^{t Lap} Delta_j f(x)| <= C 2^j e^{-c t 4^j} Mf(x)",
        c: k.kernel_c,
        corpus: json!({"seed": seed, "samples": k.samples, "datum": params, "c": k.kernel_c}),
        samples,
    })
}

/// `psi` as a scalar packet at the origin, or `cos(h.x) psi`, `sin(h.x) psi` as packets at `+-h`.
pub fn modulated_psi(h_grid: f64, h: FrequencyCenter, sine: bool) -> Result<PacketField, CliError> {
    let psi = construction::make_psi(h_grid).map_err(comp)?;
    if h.is_zero() {
        let p = make_packet(h, psi.envelope.clone()).map_err(comp)?;
        return PacketField::from_packets(1, vec![p]).map_err(comp);
    }
    // cos: (psi^(xi - h) + psi^(xi + h)) / 2; sin: (psi^(xi - h) - psi^(xi + h)) / 2i.
    let (a, b) = if sine { (C64::new(0.0, -0.5), C64::new(0.0, 0.5)) } else { (C64::new(0.5, 0.0), C64::new(0.5, 0.0)) };
    let p = make_packet(h, psi.envelope.scaled(a)).map_err(comp)?;
    let m = make_packet(-h, psi.envelope.scaled(b)).map_err(comp)?;
    PacketField::from_packets(1, vec![p, m]).map_err(comp)
}

/// `|d_2 e^{t Delta} psi_h(x)| <= C |h| e^{-c t |h|^2} M psi(x)` for `psi_h = cos(h.x) psi` or `sin(h.x) psi`.
pub fn kernel_modulated_bound(k: &LemmaCorpus, seed: u64) -> Result<LemmaCheck, CliError> {
    let psi = modulated_psi(k.h, FrequencyCenter::new(0, 0, 0), false)?;
    let mut r = rng(seed, 2);
    let mut samples = Vec::new();
    for _ in 0..k.samples {
        let j: i32 = r.gen_range(3..=10);
        let sine = r.gen_bool(0.5);
        let hn = 2f64.powi(j);
        let h = FrequencyCenter::new(0, 1i128 << j, 0);
        let t = hn.powi(-2) * 4f64.powf(r.gen_range(-1.0..1.0));
        let x = uniform_point(&mut r, 2.0);
        let f = modulated_psi(k.h, h, sine)?;
        let d = packets::apply_multiplier(&f, &MultiplierSpec::Derivative { axis: 1 }).map_err(comp)?;
        let g = packets::apply_multiplier(&d, &MultiplierSpec::Heat { t }).map_err(comp)?;
        let lhs = vec_norm(&evaluate(&g, x));
        let mpsi = maximal_function(&psi, x, &radii_for(2));
        let rhs = hn * (-k.kernel_c * t * hn * hn).exp() * mpsi;
        samples.push(LemmaSample {
            lhs,
            rhs,
            detail: format!("|h|=2^{j} {} t={} x={x:?}", if sine { "sin" } else { "cos" }, num(t)),
        });
    }
    Ok(LemmaCheck {
        id: "kernel_modulated_bound",
        statement: "|d2 e^{t Lap} psi_h(x)| <= C |h| e^{-c t |h|^2} M psi(x)",
        c: k.kernel_c,
        corpus: json!({"seed": seed, "samples": k.samples, "h": k.h, "c": k.kernel_c, "j": [3, 10]}),
        samples,
    })
}

/// `sum_s e^{-c t |k_s|^2} t^mu |k_s|^{2 mu} |k_{s-l}| <= C (sum_s e^{-c t |k_s|^2 / 2} |k_{s-l}|^2)^{1/2}`.
pub fn lacunary_sum(k: &LemmaCorpus, seed: u64, mu: f64, ell: usize) -> Result<LemmaCheck, CliError> {
    let r = 4usize;
    let ks: Vec<f64> = (0..=r as u32).map(|s| 2f64.powi((k.desk_start + k.desk_gap * s) as i32)).collect();
    let mut g = rng(seed, 3 + ell as u64);
    let c = k.sum_c;
    let mut samples = Vec::new();
    for _ in 0..k.samples {
        let t = 10f64.powf(g.gen_range(-9.0..0.0));
        let lhs: f64 = (1..=r).map(|s| (-c * t * ks[s] * ks[s]).exp() * (t * ks[s] * ks[s]).powf(mu) * ks[s - ell]).sum();
        let rhs: f64 = (1..=r).map(|s| (-0.5 * c * t * ks[s] * ks[s]).exp() * ks[s - ell] * ks[s - ell]).sum::<f64>().sqrt();
        samples.push(LemmaSample { lhs, rhs, detail: format!("t={}", num(t)) });
    }
    let (id, statement) = if ell == 0 {
        ("lacunary_sum_mu0_l0", "sum e^{-ct|k_s|^2} |k_s| <= C (sum e^{-ct|k_s|^2/2} |k_s|^2)^{1/2}")
    } else {
        (
            "lacunary_sum_mu_half_l1",
            "sum e^{-ct|k_s|^2} (t|k_s|^2)^{1/2} |k_{s-1}| <= C (sum e^{-ct|k_s|^2/2} |k_{s-1}|^2)^{1/2}",
        )
    };
    Ok(LemmaCheck {
        id,
        statement,
        c,
        corpus: json!({"seed": seed, "samples": k.samples, "k": ks, "mu": mu, "ell": ell, "c": c}),
        samples,
    })
}

/// `||u_0||_F + ||e^{t Delta} u_0||_F <= C Q r^{1/q - 1/2}` through the construction blocks, `t = |k_1|^-2`.
pub fn datum_triebel_scaling(k: &LemmaCorpus) -> Result<LemmaCheck, CliError> {
    let mut samples = Vec::new();
    for &r in &k.scaling_r {
        let params = k.desk(1.0, r);
        let u0 = build_u0(&params)?;
        let t = 4f64.powi(-((k.desk_start + k.desk_gap) as i32));
        for &q in &k.scaling_q {
            let lhs = triebel_blocks(&u0, &params, q)?.upper + triebel_blocks_heat(&u0, &params, q, t)?.upper;
            let rhs = (r as f64).powf(1.0 / q - 0.5);
            samples.push(LemmaSample { lhs, rhs, detail: format!("r={r} q={q}") });
        }
    }
    Ok(LemmaCheck {
        id: "datum_triebel_scaling",
        statement: "||u0||_F + ||e^{t Lap} u0||_F <= C Q r^{1/q-1/2}",
        c: 0.0,
        corpus: json!({"r": k.scaling_r, "q": k.scaling_q, "desk": [k.desk_start, k.desk_gap], "h": k.h}),
        samples,
    })
}

/// `sup_t sqrt(t) ||e^{t Delta} u_0||_inf <= C Q r^{-1/2}`.
pub fn heat_besov_bound(k: &LemmaCorpus) -> Result<LemmaCheck, CliError> {
    let mut samples = Vec::new();
    let horizon = 1.0 / 16.0;
    for &r in &k.scaling_r {
        for q in [1.0, 2.0] {
            let u0 = build_u0(&k.desk(q, r))?;
            let traj = TimeSampledField::heat_flow(u0, horizon);
            let lhs = sqrt_t_sup(&traj, horizon, &default_probes()).map_err(comp)?.upper;
            samples.push(LemmaSample { lhs, rhs: q / (r as f64).sqrt(), detail: format!("r={r} Q={q}") });
        }
    }
    Ok(LemmaCheck {
        id: "heat_besov_bound",
        statement: "sup_{t<T} sqrt(t) ||e^{t Lap} u0||_inf <= C Q r^{-1/2}",
        c: 0.0,
        corpus: json!({"r": k.scaling_r, "Q": [1.0, 2.0], "T": horizon, "desk": [k.desk_start, k.desk_gap], "h": k.h}),
        samples,
    })
}

/// `||e^{t Delta} u_0||_{X_T} <= C (Q / sqrt r)(T^{1/2} |k_{r - N0}| + sqrt N0)` for every `N0`.
pub fn heat_xt_split(k: &LemmaCorpus) -> Result<LemmaCheck, CliError> {
    let mut samples = Vec::new();
    let times = [2f64.powi(-8), 2f64.powi(-4)];
    let rs: Vec<usize> = k.scaling_r.iter().cloned().filter(|r| *r >= 4).collect();
    for &r in &rs {
        let params = k.desk(1.0, r);
        let u0 = build_u0(&params)?;
        let js = construction::schedule_exponents(&params).map_err(comp)?;
        for &t in &times {
            let traj = TimeSampledField::heat_flow(u0.clone(), t);
            let lhs = xt_upper(&traj, t);
            for n0 in [0, 1, r] {
                let kk = 2f64.powi(js[r - n0] as i32);
                let rhs = (t.sqrt() * kk + (n0 as f64).sqrt()) / (r as f64).sqrt();
                samples.push(LemmaSample { lhs, rhs, detail: format!("r={r} T={} N0={n0}", num(t)) });
            }
        }
    }
    Ok(LemmaCheck {
        id: "heat_xt_split",
        statement: "||e^{t Lap} u0||_{X_T} <= C (Q/sqrt r)(T^{1/2}|k_{r-N0}| + sqrt N0)",
        c: 0.0,
        corpus: json!({"r": rs, "T": times, "N0": "0, 1, r", "desk": [k.desk_start, k.desk_gap], "h": k.h}),
        samples,
    })
}

/// `(int_a^b ||e^{t Delta} u_0^||_{L1}^2 dt)^{1/2}`, an upper bound for the restricted `X` norm.
pub fn restricted_l2_mass(spec: &MassSpectrum, a: f64, b: f64) -> f64 {
    if !(b > a) {
        return 0.0;
    }
    let mut edges = vec![a];
    let mut x = a;
    while x < b {
        x = (2.0 * x).min(b);
        edges.push(x);
    }
    let mut s = 0.0;
    for w in edges.windows(2) {
        for (t, wt) in analysis::gauss_on(w[0], w[1], 12) {
            let u = spec.at(t);
            s += wt * u * u;
        }
    }
    s.sqrt()
}

/// `||e^{t Delta} u_0 chi_{[T_a, T_{a+1}]}||_{X_{T_{a+1}}} <= C (Q / sqrt r)(1 + sqrt(r Q^-3))`.
pub fn heat_xt_interval(k: &LemmaCorpus) -> Result<LemmaCheck, CliError> {
    let params = k.desk(k.division_q, k.division_r);
    let u0 = build_u0(&params)?;
    let div = remainder::time_step_schedule(&params).map_err(comp)?;
    let spec = MassSpectrum::of(&u0);
    let (q, r) = (params.q, params.r as f64);
    let rhs = q / r.sqrt() * (1.0 + (r / q.powi(3)).sqrt());
    let mut samples = Vec::new();
    for (a, w) in div.breakpoints.windows(2).enumerate() {
        let lhs = restricted_l2_mass(&spec, w[0], w[1]);
        samples.push(LemmaSample { lhs, rhs, detail: format!("alpha={a} [{}, {}]", num(w[0]), num(w[1])) });
    }
    Ok(LemmaCheck {
        id: "heat_xt_interval",
        statement: "||e^{t Lap} u0 chi_[T_a,T_a+1]||_{X_{T_a+1}} <= C (Q/sqrt r)(1 + sqrt(r/Q^3))",
        c: 0.0,
        corpus: json!({"datum": params}),
        samples,
    })
}

/// `||u_1 chi_{[T_beta, T]}||_{X_T} <= C Q r^{-1/2}` for `T = tail_factor T_beta`.
pub fn heat_xt_tail(k: &LemmaCorpus) -> Result<LemmaCheck, CliError> {
    let mut samples = Vec::new();
    for &r in k.scaling_r.iter().filter(|r| **r >= 4) {
        for q in [1.0, 2.0] {
            let params = k.desk(q, r);
            let u0 = build_u0(&params)?;
            let k0 = 2f64.powi(k.desk_start as i32);
            let tb = 1.0 / (k0 * k0);
            let lhs = restricted_l2_mass(&MassSpectrum::of(&u0), tb, k.tail_factor * tb);
            samples.push(LemmaSample { lhs, rhs: q / (r as f64).sqrt(), detail: format!("r={r} Q={q}") });
        }
    }
    Ok(LemmaCheck {
        id: "heat_xt_tail",
        statement: "||u1 chi_[T_beta,T]||_{X_T} <= C Q r^{-1/2}",
        c: 0.0,
        corpus: json!({"r": k.scaling_r, "Q": [1.0, 2.0], "factor": k.tail_factor, "desk": [k.desk_start, k.desk_gap], "h": k.h}),
        samples,
    })
}

/// Second-iterate hierarchy on the lacunary schedule: `u_201`, `u_202`, `u_21`, `u_22` and both `u_200` bounds.
pub fn hierarchy(k: &LemmaCorpus, q_index: f64) -> Result<Vec<LemmaCheck>, CliError> {
    let mut s201 = Vec::new();
    let mut s202 = Vec::new();
    let mut s21 = Vec::new();
    let mut s22 = Vec::new();
    let mut lo200 = Vec::new();
    let mut up200 = Vec::new();
    let r = k.hierarchy_r as f64;
    let m0 = k.hierarchy_m0;
    for &q in &k.hierarchy_amplitudes {
        let params = InitialDataParams::lacunary(q, k.hierarchy_r, m0);
        let u0 = build_u0(&params)?;
        for &t in &k.hierarchy_times {
            let d = format!("Q={q} T={}", num(t));
            let s20 = duhamel::split_u20(&params, t).map_err(comp)?;
            let s2 = duhamel::split_u2(&u0, &params, t).map_err(comp)?;
            let b200 = triebel_canonical(&s20.u200, q_index)?;
            let q2 = q * q;
            s201.push(LemmaSample {
                lhs: triebel_canonical(&s20.u201, q_index)?.upper,
                rhs: q2 / r.sqrt(),
                detail: d.clone(),
            });
            s202.push(LemmaSample {
                lhs: triebel_canonical(&s20.u202, q_index)?.upper / b200.lower,
                rhs: 2f64.powi(-(m0 as i32)),
                detail: d.clone(),
            });
            s21.push(LemmaSample { lhs: triebel_canonical(&s2.u21, q_index)?.upper, rhs: q2 / r, detail: d.clone() });
            s22.push(LemmaSample { lhs: triebel_canonical(&s2.u22, q_index)?.upper, rhs: q2 / r, detail: d.clone() });
            lo200.push(LemmaSample { lhs: q2, rhs: b200.lower, detail: d.clone() });
            // sup over a dyadic sample of (0, T] of the L1 mass bounds both the sup and the X_T parts.
            let mut mmax: f64 = 0.0;
            for i in 0..8 {
                let s = t * 2f64.powi(-i);
                mmax = mmax.max(duhamel::split_u20(&params, s).map_err(comp)?.u200.mass());
            }
            up200.push(LemmaSample { lhs: 2.0 * t.sqrt() * mmax, rhs: t.sqrt() * q2, detail: d });
        }
    }
    let corpus = json!({
        "m0": m0, "r": k.hierarchy_r, "Q": k.hierarchy_amplitudes, "T": k.hierarchy_times, "q_index": q_index
    });
    let mk = |id, statement, samples| LemmaCheck { id, statement, c: 0.0, corpus: corpus.clone(), samples };
    Ok(vec![
        mk("u201_bound", "||u201(T)||_F <= C Q^2 / sqrt r", s201),
        mk("u202_relative", "||u202(T)||_F / ||u200(T)||_F <= C 2^{-m0}", s202),
        mk("u21_bound", "||u21(T)||_F <= C Q^2 / r", s21),
        mk("u22_bound", "||u22(T)||_F <= C Q^2 / r", s22),
        mk("u200_lower", "Q^2 <= C ||u200(T)||_F", lo200),
        mk("u200_upper", "sqrt(T) sup_t ||u200||_inf + ||u200||_{X_T} <= C T^{1/2} Q^2", up200),
    ])
}

/// A real divergence-free field with profile `i (xi x e) psi` around `+-c`.
pub fn solenoidal_pair(c: FrequencyCenter, e: [f64; 3], amp: f64, h: f64) -> Result<PacketField, CliError> {
    let psi = construction::make_psi(h).map_err(comp)?;
    let mk = |center: FrequencyCenter| {
        let k = center.to_f64();
        let env = Envelope::from_fn(h, PSI_RADIUS, 3, |eta, o| {
            let xi = [k[0] + eta[0], k[1] + eta[1], k[2] + eta[2]];
            let v = amp * psi.value(eta);
            let cr = [xi[1] * e[2] - xi[2] * e[1], xi[2] * e[0] - xi[0] * e[2], xi[0] * e[1] - xi[1] * e[0]];
            for i in 0..3 {
                o[i] = C64::new(0.0, cr[i] * v);
            }
        });
        make_packet(center, env)
    };
    let a = mk(c).map_err(comp)?;
    let b = mk(-c).map_err(comp)?;
    PacketField::from_packets(3, vec![a, b]).map_err(comp)?.mark_real(1e-12).map_err(comp)
}

fn random_solenoidal(r: &mut ChaCha8Rng, h: f64) -> Result<(PacketField, String), CliError> {
    let c = loop {
        let c = FrequencyCenter::new(r.gen_range(-4..=4), r.gen_range(-4..=4), r.gen_range(-4..=4));
        if c.norm() >= 2.0 {
            break c;
        }
    };
    let e = loop {
        let v = uniform_point(r, 1.0);
        let n = packets::norm3(v);
        if n > 0.1 && n <= 1.0 {
            break [v[0] / n, v[1] / n, v[2] / n];
        }
    };
    let amp = r.gen_range(0.5..2.0);
    Ok((solenoidal_pair(c, e, amp, h)?, format!("c={c} amp={amp:.3}")))
}

/// `||B(u, v)||_{E_T} <= C ||u||_{E_T} ||v||_{E_T}` for heat flows of random solenoidal packet pairs.
pub fn bilinear_et(k: &LemmaCorpus, seed: u64) -> Result<LemmaCheck, CliError> {
    let t = k.bilinear_horizon;
    let mut r = rng(seed, 9);
    let mut samples = Vec::new();
    for _ in 0..k.samples {
        let (a, da) = random_solenoidal(&mut r, k.h)?;
        let (b, db) = random_solenoidal(&mut r, k.h)?;
        let u = TimeSampledField::heat_flow(a.clone(), t);
        let v = TimeSampledField::heat_flow(b.clone(), t);
        let rate = MassSpectrum::of(&a).max_rate().max(MassSpectrum::of(&b).max_rate());
        let grid = remainder::picard_grid(t, rate, 2.0);
        let buv = duhamel::duhamel_trajectory(&u, &v, &grid).map_err(comp)?;
        let lhs = et_upper(&buv, t);
        let rhs = et_upper(&u, t) * et_upper(&v, t);
        samples.push(LemmaSample { lhs, rhs, detail: format!("u: {da}; v: {db}") });
    }
    Ok(LemmaCheck {
        id: "bilinear_et",
        statement: "||B(u,v)||_{E_T} <= C ||u||_{E_T} ||v||_{E_T}",
        c: 0.0,
        corpus: json!({"seed": seed, "samples": k.samples, "T": t, "h": k.h}),
        samples,
    })
}

/// Every check of the corpus, in table order.
pub fn evaluate_corpus(cfg: &ExperimentConfig) -> Result<Vec<LemmaCheck>, CliError> {
    let k = &cfg.lemmas;
    let seed = cfg.seed;
    let mut v = vec![
        kernel_block_bound(k, seed)?,
        kernel_modulated_bound(k, seed)?,
        lacunary_sum(k, seed, 0.0, 0)?,
        lacunary_sum(k, seed, 0.5, 1)?,
        datum_triebel_scaling(k)?,
        heat_besov_bound(k)?,
        heat_xt_split(k)?,
        heat_xt_interval(k)?,
        heat_xt_tail(k)?,
    ];
    v.extend(hierarchy(k, cfg.q_index)?);
    v.push(bilinear_et(k, seed)?);
    Ok(v)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LemmaRow {
    pub id: String,
    pub statement: String,
    pub samples: usize,
    pub max_ratio: f64,
    pub constant: f64,
    pub c: f64,
    pub pass: bool,
    pub corpus_hash: String,
}

#[derive(Clone, Debug, Default)]
pub struct LemmaTable {
    pub calibrated: bool,
    pub rows: Vec<LemmaRow>,
    /// `(id, sample)` for every evaluated sample.
    pub details: Vec<(String, LemmaSample)>,
}

impl LemmaTable {
    pub fn row(&self, id: &str) -> Option<&LemmaRow> {
        self.rows.iter().find(|r| r.id == id)
    }
}

/// Compares each check with its frozen constant, or freezes new constants when `calibrate` is set.
pub fn judge(checks: &[LemmaCheck], constants: Option<&Constants>, margin: f64) -> Result<(LemmaTable, Constants), CliError> {
    let mut table = LemmaTable { calibrated: constants.is_none(), ..Default::default() };
    let mut fresh = Constants::new();
    for ch in checks {
        let hash = ch.corpus_hash();
        let m = ch.max_ratio();
        let big_c = match constants {
            None => margin * m,
            Some(cs) => {
                let Some(k) = cs.get(ch.id) else {
                    return Err(CliError::Config(format!("no frozen constant for {}; run with --calibrate", ch.id)));
                };
                if k.corpus_hash != hash {
                    return Err(CliError::Config(format!(
                        "{}: corpus hash {} differs from the frozen {}; recalibrate explicitly",
                        ch.id, hash, k.corpus_hash
                    )));
                }
                k.big_c
            }
        };
        fresh.insert(ch.id.to_string(), Constant { big_c, c: ch.c, corpus_hash: hash.clone() });
        table.rows.push(LemmaRow {
            id: ch.id.into(),
            statement: ch.statement.into(),
            samples: ch.samples.len(),
            max_ratio: m,
            constant: big_c,
            c: ch.c,
            pass: m.is_finite() && m <= big_c,
            corpus_hash: hash,
        });
        for s in &ch.samples {
            table.details.push((ch.id.into(), s.clone()));
        }
    }
    Ok((table, fresh))
}

pub fn verify_lemmas(cfg: &ExperimentConfig, calibrate: bool) -> Result<LemmaTable, CliError> {
    // Frozen mode fails before any work when the constants are unusable.
    let frozen = if calibrate { None } else { Some(load_constants(&cfg.constants)?) };
    let checks = evaluate_corpus(cfg)?;
    let (table, fresh) = judge(&checks, frozen.as_ref(), cfg.lemmas.margin)?;
    if calibrate {
        save_constants(&cfg.constants, &fresh)?;
    }
    Ok(table)
}

pub fn emit_outputs(table: &LemmaTable, cfg: &ExperimentConfig) -> Result<RunSummary, CliError> {
    let dir = &cfg.output_dir;
    let mut sum = RunSummary::default();
    let mut t = Table::new(&["lemma_id", "statement", "samples", "max_ratio", "constant", "c", "pass", "corpus_hash"]);
    for r in &table.rows {
        t.push(vec![
            r.id.clone(),
            r.statement.clone(),
            r.samples.to_string(),
            num(r.max_ratio),
            num(r.constant),
            num(r.c),
            r.pass.to_string(),
            r.corpus_hash.clone(),
        ]);
        if !r.pass {
            sum.failures.push(format!("{}: max ratio {} exceeds C = {}", r.id, num(r.max_ratio), num(r.constant)));
        }
    }
    sum.files.push(t.write(&dir.join("lemmas.csv"))?);
    let mut d = Table::new(&["lemma_id", "lhs", "rhs", "ratio", "detail"]);
    for (id, s) in &table.details {
        d.push(vec![id.clone(), num(s.lhs), num(s.rhs), num(s.ratio()), s.detail.clone()]);
    }
    sum.files.push(d.write(&dir.join("lemma_samples.csv"))?);
    Ok(sum)
}
