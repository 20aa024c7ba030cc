//! Vector fields as finite sums of modulated, compactly supported Fourier envelopes.
//!
//! A packet at integer frequency `kappa` with envelope samples `e(eta)` on the
//! lattice `h Z^3` represents
//!
//! ```text
//! x -> exp(i kappa . x) * h^3 * sum_eta e(eta) exp(i eta . x)
//! ```
//!
//! with the Fourier convention `f(x) = int f^(xi) exp(i x . xi) d xi`, so the
//! sup norm of a field never exceeds the L1 mass of its samples.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Neg, Sub};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conv;
use crate::numeric::{CompensatedSum, NormBracket};
use crate::phase::{phase_turns, unit_phase};

/// Maximum number of packets a product may create before the caller must prune.
pub const DEFAULT_PACKET_CAP: usize = 200_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PacketError {
    #[error("non-finite envelope sample at center {center}, offset {offset:?}")]
    NonFinite { center: FrequencyCenter, offset: [f64; 3] },
    #[error("grid spacing mismatch at shared center {center}")]
    GridMismatch { center: FrequencyCenter },
    #[error("component count mismatch: {left} vs {right}")]
    ComponentMismatch { left: usize, right: usize },
    #[error("Leray projection requested on packet at {center} whose support contains the origin")]
    LerayOrigin { center: FrequencyCenter },
    #[error("product would create {count} packets (cap {cap}); prune the inputs first")]
    PacketCap { count: usize, cap: usize },
    #[error("frequency center overflow while adding {a} and {b}")]
    CenterOverflow { a: FrequencyCenter, b: FrequencyCenter },
    #[error("negative heat time {0}")]
    NegativeTime(f64),
    #[error("envelope sample outside declared support radius {radius} at center {center}")]
    SupportViolation { center: FrequencyCenter, radius: f64 },
    #[error("real-valuedness check failed at center {center}: mismatch {mismatch:e}")]
    NotReal { center: FrequencyCenter, mismatch: f64 },
    #[error("invalid JSON field: {0}")]
    Json(String),
}

/// Exact integer frequency.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct FrequencyCenter {
    pub kx: i128,
    pub ky: i128,
    pub kz: i128,
}

impl FrequencyCenter {
    pub const ZERO: FrequencyCenter = FrequencyCenter { kx: 0, ky: 0, kz: 0 };

    pub fn new(kx: i128, ky: i128, kz: i128) -> Self {
        FrequencyCenter { kx, ky, kz }
    }

    pub fn as_array(&self) -> [i128; 3] {
        [self.kx, self.ky, self.kz]
    }

    pub fn to_f64(&self) -> [f64; 3] {
        [self.kx as f64, self.ky as f64, self.kz as f64]
    }

    /// `|kappa|^2` in floating point; may be `+inf` for enormous centers.
    pub fn norm_sq(&self) -> f64 {
        let v = self.to_f64();
        v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
    }

    pub fn norm(&self) -> f64 {
        let v = self.to_f64();
        let m = v[0].abs().max(v[1].abs()).max(v[2].abs());
        if m == 0.0 {
            return 0.0;
        }
        let s = [v[0] / m, v[1] / m, v[2] / m];
        m * (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        let v = self.to_f64();
        v[0].abs().max(v[1].abs()).max(v[2].abs())
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::ZERO
    }

    pub fn checked_add(&self, o: &FrequencyCenter) -> Option<FrequencyCenter> {
        Some(FrequencyCenter {
            kx: self.kx.checked_add(o.kx)?,
            ky: self.ky.checked_add(o.ky)?,
            kz: self.kz.checked_add(o.kz)?,
        })
    }
}

impl Add for FrequencyCenter {
    type Output = FrequencyCenter;
    fn add(self, o: Self) -> Self {
        self.checked_add(&o).expect("frequency center overflow")
    }
}

impl Sub for FrequencyCenter {
    type Output = FrequencyCenter;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl Neg for FrequencyCenter {
    type Output = FrequencyCenter;
    fn neg(self) -> Self {
        FrequencyCenter { kx: -self.kx, ky: -self.ky, kz: -self.kz }
    }
}

impl fmt::Display for FrequencyCenter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.kx, self.ky, self.kz)
    }
}

/// Samples on the cube `{eta in h Z^3 : |eta|_inf <= n h}`.
///
/// `radius` is a certified Euclidean bound: every sample with `|eta| > radius`
/// is exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Envelope {
    h: f64,
    n: usize,
    comps: usize,
    radius: f64,
    data: Vec<C64>,
}

impl Envelope {
    pub fn zeros(h: f64, n: usize, comps: usize, radius: f64) -> Self {
        let w = 2 * n + 1;
        Envelope { h, n, comps, radius, data: vec![C64::new(0.0, 0.0); w * w * w * comps] }
    }

    /// Builds an envelope by evaluating `f` at every lattice offset inside `radius`.
    pub fn from_fn(h: f64, radius: f64, comps: usize, mut f: impl FnMut([f64; 3], &mut [C64])) -> Self {
        let n = (radius / h + 1e-9).floor() as usize;
        let mut env = Envelope::zeros(h, n, comps, radius);
        let w = 2 * n + 1;
        for idx in 0..w * w * w {
            let eta = env.offset(idx);
            if norm3(eta) > radius {
                continue;
            }
            f(eta, &mut env.data[idx * comps..(idx + 1) * comps]);
        }
        env
    }

    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn half_width(&self) -> usize {
        self.n
    }
    pub fn width(&self) -> usize {
        2 * self.n + 1
    }
    pub fn comps(&self) -> usize {
        self.comps
    }
    pub fn radius(&self) -> f64 {
        self.radius
    }
    pub fn num_points(&self) -> usize {
        let w = self.width();
        w * w * w
    }
    pub fn data(&self) -> &[C64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn lattice(&self, idx: usize) -> [i64; 3] {
        let w = self.width();
        let n = self.n as i64;
        [(idx / (w * w)) as i64 - n, ((idx / w) % w) as i64 - n, (idx % w) as i64 - n]
    }

    pub fn offset(&self, idx: usize) -> [f64; 3] {
        let l = self.lattice(idx);
        [l[0] as f64 * self.h, l[1] as f64 * self.h, l[2] as f64 * self.h]
    }

    pub fn index_of(&self, l: [i64; 3]) -> Option<usize> {
        let n = self.n as i64;
        if l.iter().any(|&v| v < -n || v > n) {
            return None;
        }
        let w = self.width();
        Some(((l[0] + n) as usize * w + (l[1] + n) as usize) * w + (l[2] + n) as usize)
    }

    pub fn sample(&self, idx: usize) -> &[C64] {
        &self.data[idx * self.comps..(idx + 1) * self.comps]
    }

    pub fn sample_norm(&self, idx: usize) -> f64 {
        self.sample(idx).iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|c| c.re == 0.0 && c.im == 0.0)
    }

    /// Quadrature L1 mass `h^3 sum |e(eta)|` with the Euclidean norm over components.
    pub fn mass(&self) -> f64 {
        let mut acc = CompensatedSum::default();
        for idx in 0..self.num_points() {
            acc.add(self.sample_norm(idx));
        }
        acc.value() * self.h.powi(3)
    }

    pub fn max_abs(&self) -> f64 {
        (0..self.num_points()).map(|i| self.sample_norm(i)).fold(0.0, f64::max)
    }

    /// Radius of the smallest centered ball containing all nonzero samples.
    pub fn occupied_radius(&self) -> f64 {
        (0..self.num_points())
            .filter(|&i| self.sample(i).iter().any(|c| c.re != 0.0 || c.im != 0.0))
            .map(|i| norm3(self.offset(i)))
            .fold(0.0, f64::max)
    }

    /// Re-embeds the samples in a larger cube without resampling.
    pub fn padded(&self, n: usize) -> Envelope {
        if n <= self.n {
            return self.clone();
        }
        let mut out = Envelope::zeros(self.h, n, self.comps, self.radius);
        for idx in 0..self.num_points() {
            let j = out.index_of(self.lattice(idx)).unwrap();
            out.data[j * self.comps..(j + 1) * self.comps].copy_from_slice(self.sample(idx));
        }
        out
    }

    /// Shrinks the cube to the occupied region and tightens the certified radius.
    pub fn cropped(&self) -> Envelope {
        let mut m = 0i64;
        for idx in 0..self.num_points() {
            if self.sample(idx).iter().any(|c| c.re != 0.0 || c.im != 0.0) {
                let l = self.lattice(idx);
                m = m.max(l[0].abs()).max(l[1].abs()).max(l[2].abs());
            }
        }
        let radius = self.occupied_radius().min(self.radius);
        let mut out = Envelope::zeros(self.h, m as usize, self.comps, radius);
        for idx in 0..self.num_points() {
            if let Some(j) = out.index_of(self.lattice(idx)) {
                out.data[j * self.comps..(j + 1) * self.comps].copy_from_slice(self.sample(idx));
            }
        }
        out
    }

    pub fn scaled(&self, s: C64) -> Envelope {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|c| *c *= s);
        out
    }

    /// Component `c` of a multi-component envelope as a new envelope with `comps = 1`.
    pub fn component(&self, c: usize) -> Envelope {
        let mut out = Envelope::zeros(self.h, self.n, 1, self.radius);
        for idx in 0..self.num_points() {
            out.data[idx] = self.data[idx * self.comps + c];
        }
        out
    }

    /// Multiplies every sample by the scalar `f(eta)`.
    pub fn map_scalar(&mut self, mut f: impl FnMut([f64; 3]) -> C64) {
        for idx in 0..self.num_points() {
            let s = f(self.offset(idx));
            let c = self.comps;
            self.data[idx * c..(idx + 1) * c].iter_mut().for_each(|v| *v *= s);
        }
    }

    fn check(&self, center: FrequencyCenter) -> Result<(), PacketError> {
        for idx in 0..self.num_points() {
            let s = self.sample(idx);
            if s.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
                return Err(PacketError::NonFinite { center, offset: self.offset(idx) });
            }
            if s.iter().any(|c| c.re != 0.0 || c.im != 0.0) && norm3(self.offset(idx)) > self.radius * (1.0 + 1e-12) {
                return Err(PacketError::SupportViolation { center, radius: self.radius });
            }
        }
        Ok(())
    }

    fn add_assign(&mut self, o: &Envelope) {
        let n = self.n.max(o.n);
        if n > self.n {
            *self = self.padded(n);
        }
        self.radius = self.radius.max(o.radius);
        if o.n == self.n {
            self.data.iter_mut().zip(&o.data).for_each(|(a, b)| *a += b);
        } else {
            for idx in 0..o.num_points() {
                let j = self.index_of(o.lattice(idx)).unwrap();
                for c in 0..self.comps {
                    self.data[j * self.comps + c] += o.data[idx * self.comps + c];
                }
            }
        }
    }
}

pub fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct WavePacket {
    pub center: FrequencyCenter,
    pub envelope: Envelope,
}

/// Validates the envelope and stores it verbatim.
pub fn make_packet(center: FrequencyCenter, envelope: Envelope) -> Result<WavePacket, PacketError> {
    envelope.check(center)?;
    Ok(WavePacket { center, envelope })
}

impl WavePacket {
    /// Absolute frequency `kappa + eta` of sample `idx`.
    pub fn xi(&self, idx: usize) -> [f64; 3] {
        let k = self.center.to_f64();
        let e = self.envelope.offset(idx);
        [k[0] + e[0], k[1] + e[1], k[2] + e[2]]
    }

    pub fn mass(&self) -> f64 {
        self.envelope.mass()
    }

    /// True when the certified support ball excludes the origin.
    pub fn avoids_origin(&self) -> bool {
        self.center.norm() > self.envelope.radius
    }
}

/// A field as a canonical list of packets (unique centers, sorted).
#[derive(Clone, Debug, PartialEq)]
pub struct PacketField {
    comps: usize,
    packets: Vec<WavePacket>,
    real_valued: bool,
    pub provenance: String,
    pub dropped_mass: f64,
}

impl PacketField {
    pub fn zero(comps: usize) -> Self {
        PacketField { comps, packets: Vec::new(), real_valued: true, provenance: String::new(), dropped_mass: 0.0 }
    }

    /// Canonicalizes the packets, merging equal centers.
    pub fn from_packets(comps: usize, packets: Vec<WavePacket>) -> Result<Self, PacketError> {
        let mut map: BTreeMap<FrequencyCenter, Envelope> = BTreeMap::new();
        for p in packets {
            if p.envelope.comps != comps {
                return Err(PacketError::ComponentMismatch { left: comps, right: p.envelope.comps });
            }
            p.envelope.check(p.center)?;
            merge_into(&mut map, p.center, p.envelope)?;
        }
        Ok(PacketField {
            comps,
            packets: map.into_iter().map(|(center, envelope)| WavePacket { center, envelope }).collect(),
            real_valued: false,
            provenance: String::new(),
            dropped_mass: 0.0,
        })
    }

    pub fn with_provenance(mut self, p: impl Into<String>) -> Self {
        self.provenance = p.into();
        self
    }

    pub fn comps(&self) -> usize {
        self.comps
    }
    pub fn packets(&self) -> &[WavePacket] {
        &self.packets
    }
    pub fn len(&self) -> usize {
        self.packets.len()
    }
    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }
    pub fn is_real_valued(&self) -> bool {
        self.real_valued
    }

    pub fn centers(&self) -> Vec<FrequencyCenter> {
        self.packets.iter().map(|p| p.center).collect()
    }

    pub fn get(&self, c: &FrequencyCenter) -> Option<&WavePacket> {
        self.packets.binary_search_by(|p| p.center.cmp(c)).ok().map(|i| &self.packets[i])
    }

    pub fn mass(&self) -> f64 {
        let mut acc = CompensatedSum::default();
        for p in &self.packets {
            acc.add(p.mass());
        }
        acc.value()
    }

    pub fn total_samples(&self) -> usize {
        self.packets.iter().map(|p| p.envelope.num_points()).sum()
    }

    /// Largest `|kappa| + radius` over packets: a certified bound on the Fourier support.
    pub fn support_bound(&self) -> f64 {
        self.packets.iter().map(|p| p.center.norm() + p.envelope.radius).fold(0.0, f64::max)
    }

    /// Checks that the packet at `-kappa` carries the conjugate reflection of the packet at `kappa`.
    pub fn check_real(&self, rel_tol: f64) -> Result<(), PacketError> {
        let scale = self.packets.iter().map(|p| p.envelope.max_abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        for p in &self.packets {
            let partner = self.get(&(-p.center));
            let e = &p.envelope;
            for idx in 0..e.num_points() {
                let l = e.lattice(idx);
                let v = e.sample(idx);
                let mirrored: Vec<C64> = match partner.and_then(|q| q.envelope.index_of([-l[0], -l[1], -l[2]]).map(|j| (q, j))) {
                    Some((q, j)) => q.envelope.sample(j).to_vec(),
                    None => vec![C64::new(0.0, 0.0); self.comps],
                };
                let mism = v.iter().zip(&mirrored).map(|(a, b)| (a - b.conj()).norm()).fold(0.0, f64::max);
                if mism > rel_tol * scale {
                    return Err(PacketError::NotReal { center: p.center, mismatch: mism / scale });
                }
            }
        }
        Ok(())
    }

    /// Sets the real-valuedness flag after verifying it.
    pub fn mark_real(mut self, rel_tol: f64) -> Result<Self, PacketError> {
        self.check_real(rel_tol)?;
        self.real_valued = true;
        Ok(self)
    }

    pub fn scaled(&self, s: f64) -> PacketField {
        let mut out = self.clone();
        for p in &mut out.packets {
            p.envelope = p.envelope.scaled(C64::new(s, 0.0));
        }
        out.dropped_mass *= s.abs();
        out
    }

    pub fn scaled_complex(&self, s: C64) -> PacketField {
        let mut out = self.clone();
        for p in &mut out.packets {
            p.envelope = p.envelope.scaled(s);
        }
        out.real_valued = self.real_valued && s.im == 0.0;
        out.dropped_mass *= s.norm();
        out
    }

    pub fn negate(&self) -> PacketField {
        self.scaled(-1.0)
    }

    /// Keeps only the packets selected by `keep`.
    pub fn filter(&self, mut keep: impl FnMut(&WavePacket) -> bool) -> PacketField {
        let mut out = self.clone();
        out.packets.retain(|p| keep(p));
        out.real_valued = false;
        out
    }

    /// Component `c` as a scalar field.
    pub fn component(&self, c: usize) -> PacketField {
        PacketField {
            comps: 1,
            packets: self
                .packets
                .iter()
                .map(|p| WavePacket { center: p.center, envelope: p.envelope.component(c) })
                .collect(),
            real_valued: self.real_valued,
            provenance: self.provenance.clone(),
            dropped_mass: self.dropped_mass,
        }
    }

    pub(crate) fn from_sorted_unchecked(comps: usize, packets: Vec<WavePacket>, real_valued: bool) -> Self {
        PacketField { comps, packets, real_valued, provenance: String::new(), dropped_mass: 0.0 }
    }

    /// Maximum of `|xi . u^(xi)| / (|xi| |u^(xi)|)` over all nonzero samples of a 3-vector field.
    pub fn divergence_defect(&self) -> f64 {
        self.divergence_defect_above(0.0)
    }

    /// As [`Self::divergence_defect`], skipping samples below `floor_rel` times the largest one.
    pub fn divergence_defect_above(&self, floor_rel: f64) -> f64 {
        assert_eq!(self.comps, 3);
        let floor = floor_rel * self.max_abs();
        let mut worst: f64 = 0.0;
        for p in &self.packets {
            for idx in 0..p.envelope.num_points() {
                let v = p.envelope.sample(idx);
                let vn = p.envelope.sample_norm(idx);
                if vn == 0.0 || vn <= floor {
                    continue;
                }
                let xi = p.xi(idx);
                let xn = norm3(xi);
                if xn == 0.0 {
                    continue;
                }
                let d = v[0] * xi[0] + v[1] * xi[1] + v[2] * xi[2];
                worst = worst.max(d.norm() / (xn * vn));
            }
        }
        worst
    }

    /// Largest sample magnitude across all packets.
    pub fn max_abs(&self) -> f64 {
        self.packets.iter().map(|p| p.envelope.max_abs()).fold(0.0, f64::max)
    }
}

fn merge_into(map: &mut BTreeMap<FrequencyCenter, Envelope>, c: FrequencyCenter, e: Envelope) -> Result<(), PacketError> {
    match map.get_mut(&c) {
        Some(existing) => {
            if existing.h != e.h {
                return Err(PacketError::GridMismatch { center: c });
            }
            if existing.comps != e.comps {
                return Err(PacketError::ComponentMismatch { left: existing.comps, right: e.comps });
            }
            existing.add_assign(&e);
        }
        None => {
            map.insert(c, e);
        }
    }
    Ok(())
}

/// Sum of two fields; envelopes at shared centers are added sample-wise.
pub fn add(a: &PacketField, b: &PacketField) -> Result<PacketField, PacketError> {
    if a.comps != b.comps {
        return Err(PacketError::ComponentMismatch { left: a.comps, right: b.comps });
    }
    let mut map: BTreeMap<FrequencyCenter, Envelope> = BTreeMap::new();
    for p in a.packets.iter().chain(b.packets.iter()) {
        merge_into(&mut map, p.center, p.envelope.clone())?;
    }
    Ok(PacketField {
        comps: a.comps,
        packets: map.into_iter().map(|(center, envelope)| WavePacket { center, envelope }).collect(),
        real_valued: a.real_valued && b.real_valued,
        provenance: String::new(),
        dropped_mass: a.dropped_mass + b.dropped_mass,
    })
}

/// `a - b`.
pub fn sub(a: &PacketField, b: &PacketField) -> Result<PacketField, PacketError> {
    add(a, &b.negate())
}

/// Sum of many fields in the given order.
pub fn sum_all<'a>(comps: usize, fields: impl IntoIterator<Item = &'a PacketField>) -> Result<PacketField, PacketError> {
    let mut map: BTreeMap<FrequencyCenter, Envelope> = BTreeMap::new();
    let mut real = true;
    let mut dropped = 0.0;
    for f in fields {
        if f.comps != comps {
            return Err(PacketError::ComponentMismatch { left: comps, right: f.comps });
        }
        real &= f.real_valued;
        dropped += f.dropped_mass;
        for p in &f.packets {
            merge_into(&mut map, p.center, p.envelope.clone())?;
        }
    }
    Ok(PacketField {
        comps,
        packets: map.into_iter().map(|(center, envelope)| WavePacket { center, envelope }).collect(),
        real_valued: real,
        provenance: String::new(),
        dropped_mass: dropped,
    })
}

/// Scalar symbols of non-negative homogeneity, evaluated at absolute frequency.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ScalarSymbol {
    /// `|xi|^m`.
    NormPower { m: f64 },
    /// `(i xi)^alpha`, the symbol of `partial^alpha`.
    Derivative { alpha: [u32; 3] },
}

impl ScalarSymbol {
    pub fn eval(&self, xi: [f64; 3]) -> C64 {
        match self {
            ScalarSymbol::NormPower { m } => {
                let r = norm3(xi);
                if *m == 0.0 {
                    C64::new(1.0, 0.0)
                } else {
                    C64::new(r.powf(*m), 0.0)
                }
            }
            ScalarSymbol::Derivative { alpha } => {
                let mut v = C64::new(1.0, 0.0);
                for a in 0..3 {
                    for _ in 0..alpha[a] {
                        v *= C64::new(0.0, xi[a]);
                    }
                }
                v
            }
        }
    }

    pub fn degree(&self) -> f64 {
        match self {
            ScalarSymbol::NormPower { m } => *m,
            ScalarSymbol::Derivative { alpha } => (alpha[0] + alpha[1] + alpha[2]) as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MultiplierSpec {
    Heat { t: f64 },
    Leray { origin_waiver: bool },
    /// `T_{lm} -> i xi_l T_{lm}`: divergence over the first index of a 3x3 tensor field.
    DivergenceContraction,
    /// `i xi_axis`.
    Derivative { axis: usize },
    Symbol(ScalarSymbol),
}

/// `e^{-t |xi|^2}` with `t = 0` the identity and overflowing `|xi|^2` mapped to zero.
pub fn heat_factor(t: f64, xi_sq: f64) -> f64 {
    if t == 0.0 {
        1.0
    } else if xi_sq.is_infinite() {
        0.0
    } else {
        (-t * xi_sq).exp()
    }
}

/// `(I - xi xi^T / |xi|^2) v`, with the removable value 0 at `xi = 0`.
pub fn leray_apply(xi: [f64; 3], v: [C64; 3]) -> [C64; 3] {
    let m = xi[0].abs().max(xi[1].abs()).max(xi[2].abs());
    if m == 0.0 {
        return [C64::new(0.0, 0.0); 3];
    }
    let u = [xi[0] / m, xi[1] / m, xi[2] / m];
    let uu = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
    let d = (v[0] * u[0] + v[1] * u[1] + v[2] * u[2]) / uu;
    [v[0] - d * u[0], v[1] - d * u[1], v[2] - d * u[2]]
}

/// Applies a Fourier multiplier sample-wise at `xi = kappa + eta`.
pub fn apply_multiplier(f: &PacketField, m: &MultiplierSpec) -> Result<PacketField, PacketError> {
    match m {
        MultiplierSpec::Heat { t } => {
            if *t < 0.0 || t.is_nan() {
                return Err(PacketError::NegativeTime(*t));
            }
            if *t == 0.0 {
                return Ok(f.clone());
            }
            let mut out = f.clone();
            for p in &mut out.packets {
                let k = p.center.to_f64();
                let near = (p.center.norm() - p.envelope.radius).max(0.0);
                if t * near * near > 800.0 {
                    p.envelope.data.iter_mut().for_each(|c| *c = C64::new(0.0, 0.0));
                    continue;
                }
                p.envelope.map_scalar(|e| {
                    let xi = [k[0] + e[0], k[1] + e[1], k[2] + e[2]];
                    C64::new(heat_factor(*t, xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]), 0.0)
                });
            }
            out.packets.retain(|p| !p.envelope.is_zero());
            Ok(out)
        }
        MultiplierSpec::Leray { origin_waiver } => {
            if f.comps != 3 {
                return Err(PacketError::ComponentMismatch { left: 3, right: f.comps });
            }
            let mut out = f.clone();
            for p in &mut out.packets {
                if !origin_waiver && !p.avoids_origin() {
                    return Err(PacketError::LerayOrigin { center: p.center });
                }
                let k = p.center.to_f64();
                for idx in 0..p.envelope.num_points() {
                    let e = p.envelope.offset(idx);
                    let xi = [k[0] + e[0], k[1] + e[1], k[2] + e[2]];
                    let s = &mut p.envelope.data[idx * 3..idx * 3 + 3];
                    let r = leray_apply(xi, [s[0], s[1], s[2]]);
                    s.copy_from_slice(&r);
                }
            }
            Ok(out)
        }
        MultiplierSpec::DivergenceContraction => {
            if f.comps != 9 {
                return Err(PacketError::ComponentMismatch { left: 9, right: f.comps });
            }
            let mut packets = Vec::with_capacity(f.packets.len());
            for p in &f.packets {
                let k = p.center.to_f64();
                let e = &p.envelope;
                let mut o = Envelope::zeros(e.h, e.n, 3, e.radius);
                for idx in 0..e.num_points() {
                    let eta = e.offset(idx);
                    let xi = [k[0] + eta[0], k[1] + eta[1], k[2] + eta[2]];
                    let t = e.sample(idx);
                    for mm in 0..3 {
                        let s = t[mm] * xi[0] + t[3 + mm] * xi[1] + t[6 + mm] * xi[2];
                        o.data[idx * 3 + mm] = s * C64::new(0.0, 1.0);
                    }
                }
                packets.push(WavePacket { center: p.center, envelope: o });
            }
            let mut out = PacketField::from_sorted_unchecked(3, packets, f.real_valued);
            out.provenance = f.provenance.clone();
            out.dropped_mass = f.dropped_mass;
            Ok(out)
        }
        MultiplierSpec::Derivative { axis } => {
            let axis = *axis;
            let mut out = f.clone();
            for p in &mut out.packets {
                let k = p.center.to_f64();
                p.envelope.map_scalar(|e| C64::new(0.0, k[axis] + e[axis]));
            }
            Ok(out)
        }
        MultiplierSpec::Symbol(s) => {
            let mut out = f.clone();
            for p in &mut out.packets {
                let k = p.center.to_f64();
                p.envelope.map_scalar(|e| s.eval([k[0] + e[0], k[1] + e[1], k[2] + e[2]]));
            }
            // Real symbols even in xi, and (i xi)^alpha, both satisfy s(-xi) = conj(s(xi)).
            out.real_valued = f.real_valued;
            Ok(out)
        }
    }
}

/// Multiplies every sample by an arbitrary scalar function of the absolute frequency.
pub fn apply_symbol_fn(f: &PacketField, mut s: impl FnMut([f64; 3]) -> f64) -> PacketField {
    let mut out = f.clone();
    for p in &mut out.packets {
        let k = p.center.to_f64();
        p.envelope.map_scalar(|e| C64::new(s([k[0] + e[0], k[1] + e[1], k[2] + e[2]]), 0.0));
    }
    out.packets.retain(|p| !p.envelope.is_zero());
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProductKind {
    /// `u_l v_m`, nine components in row-major order.
    Tensor,
    /// `sum_l u_l v_l`, one component.
    Dot,
}

/// Pointwise product of two fields: centers add, envelopes convolve (scaled by `h^3`).
pub fn multiply(a: &PacketField, b: &PacketField, kind: ProductKind) -> Result<PacketField, PacketError> {
    multiply_capped(a, b, kind, DEFAULT_PACKET_CAP)
}

pub fn multiply_capped(a: &PacketField, b: &PacketField, kind: ProductKind, cap: usize) -> Result<PacketField, PacketError> {
    if a.comps != b.comps {
        return Err(PacketError::ComponentMismatch { left: a.comps, right: b.comps });
    }
    let comps_out = match kind {
        ProductKind::Tensor => a.comps * b.comps,
        ProductKind::Dot => 1,
    };
    let mut groups: BTreeMap<FrequencyCenter, Vec<(usize, usize)>> = BTreeMap::new();
    for (i, pa) in a.packets.iter().enumerate() {
        for (j, pb) in b.packets.iter().enumerate() {
            if pa.envelope.h != pb.envelope.h {
                return Err(PacketError::GridMismatch { center: pa.center });
            }
            let c = pa
                .center
                .checked_add(&pb.center)
                .ok_or(PacketError::CenterOverflow { a: pa.center, b: pb.center })?;
            groups.entry(c).or_default().push((i, j));
        }
    }
    if groups.len() > cap {
        return Err(PacketError::PacketCap { count: groups.len(), cap });
    }
    let sa: Vec<conv::Sparse> = a.packets.iter().map(|p| conv::Sparse::new(p, None)).collect();
    let sb: Vec<conv::Sparse> = b.packets.iter().map(|p| conv::Sparse::new(p, None)).collect();
    let mut packets = Vec::with_capacity(groups.len());
    for (c, pairs) in groups {
        let mut env: Option<Envelope> = None;
        for (i, j) in pairs {
            let e = conv::product(&sa[i], &sb[j], kind);
            match &mut env {
                Some(acc) => acc.add_assign(&e),
                None => env = Some(e),
            }
        }
        let env = env.unwrap();
        debug_assert_eq!(env.comps, comps_out);
        packets.push(WavePacket { center: c, envelope: env });
    }
    let mut out = PacketField::from_sorted_unchecked(comps_out, packets, a.real_valued && b.real_valued);
    out.dropped_mass = 0.0;
    Ok(out)
}

/// Local factor `h^3 sum_eta e(eta) exp(i eta . x)` of one packet, with separable phases.
fn local_sum(e: &Envelope, x: [f64; 3], out: &mut [CompensatedC]) {
    let w = e.width();
    let n = e.n as i64;
    let axis_phase = |a: usize| -> Vec<C64> {
        (0..w).map(|i| C64::from_polar(1.0, (i as i64 - n) as f64 * e.h * x[a])).collect()
    };
    let (px, py, pz) = (axis_phase(0), axis_phase(1), axis_phase(2));
    let h3 = e.h.powi(3);
    for ix in 0..w {
        for iy in 0..w {
            let pxy = px[ix] * py[iy];
            for iz in 0..w {
                let idx = (ix * w + iy) * w + iz;
                let s = e.sample(idx);
                if s.iter().all(|c| c.re == 0.0 && c.im == 0.0) {
                    continue;
                }
                let ph = pxy * pz[iz] * h3;
                for (c, v) in s.iter().enumerate() {
                    out[c].add(v * ph);
                }
            }
        }
    }
}

#[derive(Clone, Copy, Default)]
struct CompensatedC {
    re: CompensatedSum,
    im: CompensatedSum,
}

impl CompensatedC {
    fn add(&mut self, v: C64) {
        self.re.add(v.re);
        self.im.add(v.im);
    }
    fn value(&self) -> C64 {
        C64::new(self.re.value(), self.im.value())
    }
}

/// Point evaluation in canonical packet order with compensated accumulation.
pub fn evaluate(f: &PacketField, x: [f64; 3]) -> Vec<C64> {
    let mut total = vec![CompensatedC::default(); f.comps];
    for p in &f.packets {
        let mut local = vec![CompensatedC::default(); f.comps];
        local_sum(&p.envelope, x, &mut local);
        let ph = unit_phase(phase_turns(p.center.as_array(), x));
        for c in 0..f.comps {
            total[c].add(local[c].value() * ph);
        }
    }
    total.iter().map(|c| c.value()).collect()
}

pub fn vec_norm(v: &[C64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// `[max over probes |f(x)|, sum of packet masses]`; an empty probe set gives lower 0.
pub fn sup_norm(f: &PacketField, probes: &[[f64; 3]]) -> NormBracket {
    let upper = f.mass();
    let lower = probes.iter().map(|&x| vec_norm(&evaluate(f, x))).fold(0.0, f64::max);
    NormBracket::new(lower.min(upper), upper, "sup: probe max / envelope L1 mass")
}

/// Drops packets lighter than `eps_rel` times the heaviest one; the dropped mass is recorded.
pub fn prune(f: &PacketField, eps_rel: f64) -> PacketField {
    if eps_rel <= 0.0 || f.packets.is_empty() {
        return f.clone();
    }
    let masses: Vec<f64> = f.packets.iter().map(|p| p.mass()).collect();
    let mmax = masses.iter().cloned().fold(0.0, f64::max);
    let mut out = f.clone();
    let mut dropped = 0.0;
    let mut kept = Vec::with_capacity(f.packets.len());
    for (p, m) in f.packets.iter().zip(&masses) {
        if *m < eps_rel * mmax {
            dropped += m;
        } else {
            kept.push(p.clone());
        }
    }
    // Dropping +kappa and -kappa together keeps the field real only if both drop;
    // equal masses make that automatic for genuinely real fields.
    out.packets = kept;
    out.dropped_mass += dropped;
    out
}

/// As [`prune`], but stops once the dropped L1 mass would exceed `budget`; lightest packets go first.
pub fn prune_within(f: &PacketField, eps_rel: f64, budget: f64) -> PacketField {
    if eps_rel <= 0.0 || budget <= 0.0 || f.packets.is_empty() {
        return f.clone();
    }
    let masses: Vec<f64> = f.packets.iter().map(|p| p.mass()).collect();
    let mmax = masses.iter().cloned().fold(0.0, f64::max);
    let mut order: Vec<usize> = (0..masses.len()).collect();
    order.sort_by(|&a, &b| masses[a].total_cmp(&masses[b]).then(a.cmp(&b)));
    let mut keep = vec![true; masses.len()];
    let mut dropped = 0.0;
    for i in order {
        if masses[i] >= eps_rel * mmax || dropped + masses[i] > budget {
            break;
        }
        dropped += masses[i];
        keep[i] = false;
    }
    let mut out = f.clone();
    out.packets = f.packets.iter().zip(&keep).filter(|(_, k)| **k).map(|(p, _)| p.clone()).collect();
    out.dropped_mass += dropped;
    out
}

/// Zeroes samples below `eps_abs` (in units of `h^3 |e|`) greedily from the smallest up,
/// keeping the total removed mass below `budget`, then crops envelopes.
pub fn prune_samples(f: &PacketField, budget: f64) -> PacketField {
    let mut all: Vec<(f64, usize, usize)> = Vec::new();
    for (pi, p) in f.packets.iter().enumerate() {
        let h3 = p.envelope.h.powi(3);
        for idx in 0..p.envelope.num_points() {
            let m = p.envelope.sample_norm(idx) * h3;
            if m > 0.0 {
                all.push((m, pi, idx));
            }
        }
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = f.clone();
    let mut used = 0.0;
    for (m, pi, idx) in all {
        if used + m > budget {
            break;
        }
        used += m;
        let c = out.comps;
        out.packets[pi].envelope.data[idx * c..(idx + 1) * c].iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
    }
    for p in &mut out.packets {
        p.envelope = p.envelope.cropped();
    }
    out.packets.retain(|p| !p.envelope.is_zero());
    out.dropped_mass += used;
    out
}

#[derive(Serialize, Deserialize)]
struct PacketJson {
    center: [String; 3],
    h: f64,
    radius: f64,
    /// `samples[ix][iy][iz][component] = [re, im]`.
    samples: Vec<Vec<Vec<Vec<[f64; 2]>>>>,
}

#[derive(Serialize, Deserialize)]
struct FieldJson {
    comps: usize,
    real_valued: bool,
    provenance: String,
    dropped_mass: f64,
    packets: Vec<PacketJson>,
}

/// Debug serialization; centers are decimal strings so no precision is lost.
pub fn to_json(f: &PacketField) -> String {
    let packets = f
        .packets
        .iter()
        .map(|p| {
            let e = &p.envelope;
            let w = e.width();
            let samples = (0..w)
                .map(|ix| {
                    (0..w)
                        .map(|iy| {
                            (0..w)
                                .map(|iz| e.sample((ix * w + iy) * w + iz).iter().map(|c| [c.re, c.im]).collect())
                                .collect()
                        })
                        .collect()
                })
                .collect();
            PacketJson {
                center: [p.center.kx.to_string(), p.center.ky.to_string(), p.center.kz.to_string()],
                h: e.h,
                radius: e.radius,
                samples,
            }
        })
        .collect();
    let doc = FieldJson {
        comps: f.comps,
        real_valued: f.real_valued,
        provenance: f.provenance.clone(),
        dropped_mass: f.dropped_mass,
        packets,
    };
    serde_json::to_string(&doc).expect("serializable")
}

pub fn from_json(s: &str) -> Result<PacketField, PacketError> {
    let doc: FieldJson = serde_json::from_str(s).map_err(|e| PacketError::Json(e.to_string()))?;
    let mut packets = Vec::new();
    for p in doc.packets {
        let parse = |v: &str| v.parse::<i128>().map_err(|e| PacketError::Json(e.to_string()));
        let center = FrequencyCenter::new(parse(&p.center[0])?, parse(&p.center[1])?, parse(&p.center[2])?);
        let w = p.samples.len();
        if w % 2 == 0 {
            return Err(PacketError::Json("even envelope width".into()));
        }
        let mut e = Envelope::zeros(p.h, w / 2, doc.comps, p.radius);
        for (ix, a) in p.samples.iter().enumerate() {
            for (iy, b) in a.iter().enumerate() {
                for (iz, c) in b.iter().enumerate() {
                    if c.len() != doc.comps {
                        return Err(PacketError::Json("component count".into()));
                    }
                    for (k, v) in c.iter().enumerate() {
                        e.data[((ix * w + iy) * w + iz) * doc.comps + k] = C64::new(v[0], v[1]);
                    }
                }
            }
        }
        packets.push(make_packet(center, e)?);
    }
    let mut f = PacketField::from_packets(doc.comps, packets)?;
    f.provenance = doc.provenance;
    f.dropped_mass = doc.dropped_mass;
    if doc.real_valued {
        f = f.mark_real(1e-12)?;
    }
    Ok(f)
}
