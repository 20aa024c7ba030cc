//! Small numerical helpers shared by the field modules.

use serde::{Deserialize, Serialize};

/// Neumaier compensated summation.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Certified interval for a sup-type norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormBracket {
    pub lower: f64,
    pub upper: f64,
    pub note: String,
}

impl NormBracket {
    /// Builds a bracket; a lower end above the upper end is a logic error.
    pub fn new(lower: f64, upper: f64, note: impl Into<String>) -> Self {
        assert!(!lower.is_nan() && !upper.is_nan(), "NaN in norm bracket");
        assert!(lower >= 0.0, "negative lower bound {lower}");
        assert!(
            lower <= upper * (1.0 + 1e-9) + 1e-300,
            "bracket inverted: lower {lower} > upper {upper}"
        );
        NormBracket { lower: lower.min(upper), upper, note: note.into() }
    }

    pub fn zero() -> Self {
        NormBracket::new(0.0, 0.0, "zero")
    }

    pub fn plus(&self, o: &NormBracket) -> NormBracket {
        NormBracket::new(self.lower + o.lower, self.upper + o.upper, format!("{} + {}", self.note, o.note))
    }

    pub fn scaled(&self, s: f64) -> NormBracket {
        NormBracket::new(self.lower * s.abs(), self.upper * s.abs(), self.note.clone())
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Points `t0 * ratio^k` for `k = 0..` up to and including the first point `>= t1`, clamped to `t1`.
pub fn geometric_grid(t0: f64, t1: f64, ratio: f64) -> Vec<f64> {
    assert!(t0 > 0.0 && t1 >= t0 && ratio > 1.0);
    let mut v = vec![t0];
    while *v.last().unwrap() < t1 {
        let next = v.last().unwrap() * ratio;
        v.push(if next >= t1 * (1.0 - 1e-12) { t1 } else { next });
    }
    v
}

/// Dyadic subintervals `(2^-k T, 2^{1-k} T]` of `(0, T]` down to `2^-levels T`, Gauss-Legendre in each,
/// plus one cell `(0, 2^-levels T]`.
pub fn graded_nodes(t: f64, levels: usize, per_cell: usize) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(per_cell);
    let mut out = Vec::new();
    let mut edges = vec![0.0];
    for k in (0..=levels).rev() {
        edges.push(t / 2f64.powi(k as i32));
    }
    for c in edges.windows(2) {
        let (a, b) = (c[0], c[1]);
        let half = 0.5 * (b - a);
        for i in 0..per_cell {
            out.push((a + half * (x[i] + 1.0), half * w[i]));
        }
    }
    out
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
