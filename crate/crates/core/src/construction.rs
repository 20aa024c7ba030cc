//! The bump profile, frequency schedule, lacunary initial datum and its block decomposition.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{lp_block, LPFilter};
use crate::packets::{self, evaluate, make_packet, vec_norm, Envelope, FrequencyCenter, PacketError, PacketField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstructionError {
    #[error("grid spacing {0} is coarser than 1/8")]
    GridTooCoarse(f64),
    #[error("schedule exponent {j} at s = {s} exceeds the overflow guard 126")]
    ScheduleOverflow { s: usize, j: u32 },
    #[error("explicit schedule must list r + 1 = {expected} exponents, got {got}")]
    ScheduleLength { expected: usize, got: usize },
    #[error("explicit schedule needs j_(s+1) >= j_s + 2; violated at s = {0}")]
    ScheduleTooDense(usize),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("block decomposition does not reproduce the datum (relative defect {0:e})")]
    Reproduction(f64),
    #[error(transparent)]
    Packet(#[from] PacketError),
}

/// Support radius of the bump's Fourier transform.
pub const PSI_RADIUS: f64 = 0.25;

/// Unnormalized radial profile `exp(-1 / (1 - (4 rho)^2))` on `rho < 1/4`.
pub fn bump(rho: f64) -> f64 {
    let s = 4.0 * rho;
    if s >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - s * s)).exp()
    }
}

/// `psi^` sampled on the lattice and normalized to unit quadrature mass.
#[derive(Clone, Debug)]
pub struct PsiProfile {
    pub h: f64,
    pub c: f64,
    pub envelope: Envelope,
}

impl PsiProfile {
    pub fn value(&self, eta: [f64; 3]) -> f64 {
        self.c * bump(packets::norm3(eta))
    }

    /// Quadrature of `||xi psi^||_{L1}`.
    pub fn first_moment(&self) -> f64 {
        let e = &self.envelope;
        (0..e.num_points()).map(|i| packets::norm3(e.offset(i)) * e.sample(i)[0].re).sum::<f64>() * self.h.powi(3)
    }
}

pub fn make_psi(h: f64) -> Result<PsiProfile, ConstructionError> {
    if !(h > 0.0 && h <= 1.0 / 8.0) {
        return Err(ConstructionError::GridTooCoarse(h));
    }
    let raw = Envelope::from_fn(h, PSI_RADIUS, 1, |eta, out| out[0] = C64::new(bump(packets::norm3(eta)), 0.0));
    let total: f64 = raw.data().iter().map(|c| c.re).sum::<f64>() * h.powi(3);
    let c = 1.0 / total;
    Ok(PsiProfile { h, c, envelope: raw.scaled(C64::new(c, 0.0)) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    /// `j_s = (s + 1)(s + 2 m0) / 2`.
    Lacunary,
    /// Exponents `j_0, ..., j_r`.
    Explicit(Vec<u32>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialDataParams {
    /// Amplitude `Q`.
    pub q: f64,
    /// Number of modes.
    pub r: usize,
    pub m0: u32,
    pub schedule: Schedule,
    /// Envelope grid spacing.
    #[serde(default = "default_h")]
    pub h: f64,
}

fn default_h() -> f64 {
    1.0 / 16.0
}

impl InitialDataParams {
    pub fn lacunary(q: f64, r: usize, m0: u32) -> Self {
        InitialDataParams { q, r, m0, schedule: Schedule::Lacunary, h: default_h() }
    }

    pub fn explicit(q: f64, js: Vec<u32>) -> Self {
        let r = js.len().saturating_sub(1);
        InitialDataParams { q, r, m0: 0, schedule: Schedule::Explicit(js), h: default_h() }
    }

    pub fn with_q(&self, q: f64) -> Self {
        InitialDataParams { q, ..self.clone() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleEntry {
    pub s: usize,
    pub j: u32,
    /// `k_s = (0, 2^j, 0)`.
    pub k: FrequencyCenter,
    /// `k_s' = (8, -2^j, 0)`.
    pub k_prime: FrequencyCenter,
}

impl ScheduleEntry {
    /// `|k_s| = 2^j`, exact in floating point.
    pub fn k_norm(&self) -> f64 {
        2f64.powi(self.j as i32)
    }
}

/// `nu = k_s + k_s'`, the same for every `s`.
pub const NU: FrequencyCenter = FrequencyCenter { kx: 8, ky: 0, kz: 0 };

/// Exponents `j_0, ..., j_r` after validation, without the center overflow guard.
pub fn schedule_exponents(params: &InitialDataParams) -> Result<Vec<u32>, ConstructionError> {
    if params.r == 0 {
        return Err(ConstructionError::InvalidParams("r must be at least 1".into()));
    }
    if !(params.q >= 0.0) || !params.q.is_finite() {
        return Err(ConstructionError::InvalidParams(format!("amplitude Q = {}", params.q)));
    }
    let js: Vec<u32> = match &params.schedule {
        Schedule::Lacunary => {
            if params.m0 == 0 {
                return Err(ConstructionError::InvalidParams("m0 must be at least 1".into()));
            }
            (0..=params.r as u64)
                .map(|s| ((s + 1) * (s + 2 * params.m0 as u64) / 2).min(u32::MAX as u64) as u32)
                .collect()
        }
        Schedule::Explicit(v) => {
            if v.len() != params.r + 1 {
                return Err(ConstructionError::ScheduleLength { expected: params.r + 1, got: v.len() });
            }
            for s in 0..params.r {
                if v[s + 1] < v[s] + 2 {
                    return Err(ConstructionError::ScheduleTooDense(s));
                }
            }
            v.clone()
        }
    };
    Ok(js)
}

pub fn frequency_schedule(params: &InitialDataParams) -> Result<Vec<ScheduleEntry>, ConstructionError> {
    let js = schedule_exponents(params)?;
    js.iter()
        .enumerate()
        .map(|(s, &j)| {
            if j > 126 {
                return Err(ConstructionError::ScheduleOverflow { s, j });
            }
            let p = 1i128 << j;
            Ok(ScheduleEntry { s, j, k: FrequencyCenter::new(0, p, 0), k_prime: FrequencyCenter::new(8, -p, 0) })
        })
        .collect()
}

/// Which part of the `s`-th summand to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    /// `cos(k x) Psi1 - |k| sin(k x) Psi2 + cos(k' x) Psi3 + |k| sin(k' x) Psi4`.
    Full,
    /// `cos(k x) Psi1 + cos(k' x) Psi3`.
    Cosine,
    /// `sin(k' x) Psi4 - sin(k x) Psi2`.
    Sine,
    /// `e^{i k' x} Psi4 + e^{-i k x} Psi2`.
    PlusPair,
    /// `e^{-i k' x} Psi4 + e^{i k x} Psi2`.
    MinusPair,
}

/// Vector profiles at offset `eta`, with derivatives acting as `i eta`.
fn profiles(eta: [f64; 3], psi: f64, k_norm: f64) -> [[C64; 3]; 4] {
    let z = C64::new(0.0, 0.0);
    let r = |v: f64| C64::new(v, 0.0);
    let im = |v: f64| C64::new(0.0, v);
    [
        [z, im(-eta[2] * psi), im(eta[1] * psi)],
        [z, z, r(psi)],
        [im(eta[1] * psi), im(-eta[0] * psi), z],
        [r(psi), r(8.0 * psi / k_norm), z],
    ]
}

/// Packets of one summand; coefficients per center for the profiles `Psi1..Psi4`.
pub fn summand(entry: &ScheduleEntry, psi: &PsiProfile, part: Part) -> Result<PacketField, ConstructionError> {
    let kn = entry.k_norm();
    let half = C64::new(0.5, 0.0);
    let z = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    let ik2 = C64::new(0.0, 0.5 * kn);
    let i2 = C64::new(0.0, 0.5);
    // (center, [c1, c2, c3, c4]) so the envelope is sum_m c_m Psi_m^.
    let table: Vec<(FrequencyCenter, [C64; 4])> = match part {
        Part::Full => vec![
            (entry.k, [half, ik2, z, z]),
            (-entry.k, [half, -ik2, z, z]),
            (entry.k_prime, [z, z, half, -ik2]),
            (-entry.k_prime, [z, z, half, ik2]),
        ],
        Part::Cosine => vec![
            (entry.k, [half, z, z, z]),
            (-entry.k, [half, z, z, z]),
            (entry.k_prime, [z, z, half, z]),
            (-entry.k_prime, [z, z, half, z]),
        ],
        Part::Sine => vec![
            (entry.k, [z, i2, z, z]),
            (-entry.k, [z, -i2, z, z]),
            (entry.k_prime, [z, z, z, -i2]),
            (-entry.k_prime, [z, z, z, i2]),
        ],
        Part::PlusPair => vec![(entry.k_prime, [z, z, z, one]), (-entry.k, [z, one, z, z])],
        Part::MinusPair => vec![(-entry.k_prime, [z, z, z, one]), (entry.k, [z, one, z, z])],
    };
    let mut out = Vec::with_capacity(table.len());
    for (center, coef) in table {
        let env = Envelope::from_fn(psi.h, PSI_RADIUS, 3, |eta, o| {
            let p = profiles(eta, psi.value(eta), kn);
            for c in 0..3 {
                o[c] = coef[0] * p[0][c] + coef[1] * p[1][c] + coef[2] * p[2][c] + coef[3] * p[3][c];
            }
        });
        out.push(make_packet(center, env)?);
    }
    let f = PacketField::from_packets(3, out)?;
    Ok(match part {
        Part::PlusPair | Part::MinusPair => f,
        _ => f.mark_real(1e-14)?,
    })
}

/// `u0 = (Q / sqrt r) sum_{s=1..r}` of the four modulated profile terms.
pub fn build_initial_data(params: &InitialDataParams) -> Result<PacketField, ConstructionError> {
    let sched = frequency_schedule(params)?;
    let psi = make_psi(params.h)?;
    let mut parts = Vec::with_capacity(params.r);
    for e in &sched[1..] {
        parts.push(summand(e, &psi, Part::Full)?);
    }
    let sum = packets::sum_all(3, parts.iter())?;
    let u0 = sum.scaled(params.q / (params.r as f64).sqrt());
    Ok(u0.mark_real(1e-14)?.with_provenance(format!("u0 Q={} r={} schedule={:?}", params.q, params.r, params.schedule)))
}

/// Levels `j_s` carrying the unscaled summands `f_{j_s}`.
#[derive(Clone, Debug)]
pub struct BlockDecomposition {
    pub levels: Vec<(i32, PacketField)>,
    pub scale: f64,
}

impl BlockDecomposition {
    /// Blocks multiplied by `Q / sqrt r`, a representation of `u0` itself.
    pub fn representation(&self) -> Vec<(i32, PacketField)> {
        self.levels.iter().map(|(l, f)| (*l, f.scaled(self.scale))).collect()
    }
}

/// Points where block reproduction is checked.
pub fn reproduction_probes() -> Vec<[f64; 3]> {
    vec![
        [0.0, 0.0, 0.0],
        [0.3, -0.7, 0.2],
        [1.1, 0.4, -0.9],
        [-2.3, 1.7, 0.6],
        [0.05, 0.013, -0.021],
        [std::f64::consts::PI / 16.0, 0.0, 0.0],
    ]
}

pub fn block_decomposition(
    u0: &PacketField,
    params: &InitialDataParams,
    filter: &LPFilter,
) -> Result<BlockDecomposition, ConstructionError> {
    let sched = frequency_schedule(params)?;
    let psi = make_psi(params.h)?;
    let scale = params.q / (params.r as f64).sqrt();
    let mut levels = Vec::new();
    for e in &sched[1..] {
        let f = summand(e, &psi, Part::Full)?;
        // Blocks must be disjoint: each summand's support annulus lies inside the plateau of its own level only.
        let blocked = lp_block(&f, e.j as i32, filter);
        let defect = packets::sub(&blocked, &f)?.mass() / f.mass();
        if defect > 1e-12 {
            return Err(ConstructionError::InvalidParams(format!(
                "summand s = {} is not reproduced by its own block (defect {defect:e}); schedule too dense",
                e.s
            )));
        }
        levels.push((e.j as i32, f));
    }
    // Reproduction of u0 sqrt(r)/Q by sum_l Delta_l f_l at probe points.
    if scale > 0.0 {
        let target = u0.scaled(1.0 / scale);
        let mut recon = PacketField::zero(3);
        for (l, f) in &levels {
            recon = packets::add(&recon, &lp_block(f, *l, filter))?;
        }
        let mut worst: f64 = 0.0;
        for x in reproduction_probes() {
            let a = evaluate(&recon, x);
            let b = evaluate(&target, x);
            let diff: Vec<C64> = a.iter().zip(&b).map(|(p, q)| p - q).collect();
            worst = worst.max(vec_norm(&diff) / target.mass());
        }
        if worst > 1e-10 {
            return Err(ConstructionError::Reproduction(worst));
        }
    }
    Ok(BlockDecomposition { levels, scale })
}
