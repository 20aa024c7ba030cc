//! Lattice convolution kernels behind products and Duhamel integrals.

use num_complex::Complex64 as C64;

use crate::packets::{leray_apply, Envelope, FrequencyCenter, ProductKind, WavePacket};

/// Nonzero samples of one packet with their absolute frequencies.
pub(crate) struct Sparse {
    pub h: f64,
    pub n: usize,
    pub radius: f64,
    pub comps: usize,
    pub lat: Vec<[i64; 3]>,
    pub vals: Vec<C64>,
    pub rate: Vec<f64>,
}

impl Sparse {
    /// `heat_rate`: `None` leaves rates at zero, `Some(())` stores `|xi|^2`.
    pub fn new(p: &WavePacket, heat_rate: Option<()>) -> Self {
        let e = &p.envelope;
        let k = p.center.to_f64();
        let comps = e.comps();
        let mut lat = Vec::new();
        let mut vals = Vec::new();
        let mut rate = Vec::new();
        for idx in 0..e.num_points() {
            let s = e.sample(idx);
            if s.iter().all(|c| c.re == 0.0 && c.im == 0.0) {
                continue;
            }
            lat.push(e.lattice(idx));
            vals.extend_from_slice(s);
            if heat_rate.is_some() {
                let eta = e.offset(idx);
                let xi = [k[0] + eta[0], k[1] + eta[1], k[2] + eta[2]];
                rate.push(xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]);
            } else {
                rate.push(0.0);
            }
        }
        Sparse { h: e.h(), n: e.half_width(), radius: e.radius(), comps, lat, vals, rate }
    }

    pub fn len(&self) -> usize {
        self.lat.len()
    }
}

fn lin(l: [i64; 3], w: i64) -> i64 {
    (l[0] * w + l[1]) * w + l[2]
}

/// Plain lattice convolution `h^3 sum a(eta') (x) b(eta - eta')`.
pub(crate) fn product(a: &Sparse, b: &Sparse, kind: ProductKind) -> Envelope {
    let n = a.n + b.n;
    let comps = match kind {
        ProductKind::Tensor => a.comps * b.comps,
        ProductKind::Dot => 1,
    };
    let mut out = Envelope::zeros(a.h, n, comps, a.radius + b.radius);
    let w = (2 * n + 1) as i64;
    let base = lin([n as i64; 3], w);
    let h3 = a.h.powi(3);
    let bl: Vec<i64> = b.lat.iter().map(|&l| lin(l, w)).collect();
    let data = out.data_mut();
    for i in 0..a.len() {
        let oi = base + lin(a.lat[i], w);
        let av = &a.vals[i * a.comps..(i + 1) * a.comps];
        for j in 0..b.len() {
            let o = (oi + bl[j]) as usize;
            let bv = &b.vals[j * b.comps..(j + 1) * b.comps];
            match kind {
                ProductKind::Tensor => {
                    for (l, x) in av.iter().enumerate() {
                        let xs = x * h3;
                        for (m, y) in bv.iter().enumerate() {
                            data[o * comps + l * b.comps + m] += xs * y;
                        }
                    }
                }
                ProductKind::Dot => {
                    let mut s = C64::new(0.0, 0.0);
                    for (x, y) in av.iter().zip(bv) {
                        s += x * y;
                    }
                    data[o] += s * h3;
                }
            }
        }
    }
    out
}

/// Output accumulator for one center of a Duhamel product.
pub(crate) struct DuhamelOut {
    center: FrequencyCenter,
    h: f64,
    n: usize,
    radius: f64,
    dt: f64,
    xi: Vec<[f64; 3]>,
    a: Vec<f64>,
    ea: Vec<f64>,
    acc: Vec<[C64; 3]>,
}

impl DuhamelOut {
    pub fn new(center: FrequencyCenter, h: f64, n: usize, radius: f64, dt: f64) -> Self {
        let w = 2 * n + 1;
        let k = center.to_f64();
        let mut xi = Vec::with_capacity(w * w * w);
        let mut a = Vec::with_capacity(w * w * w);
        let mut ea = Vec::with_capacity(w * w * w);
        for ix in 0..w {
            for iy in 0..w {
                for iz in 0..w {
                    let v = [
                        k[0] + (ix as f64 - n as f64) * h,
                        k[1] + (iy as f64 - n as f64) * h,
                        k[2] + (iz as f64 - n as f64) * h,
                    ];
                    let s = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
                    xi.push(v);
                    a.push(s);
                    ea.push((-s * dt).exp());
                }
            }
        }
        DuhamelOut { center, h, n, radius, dt, xi, a, ea, acc: vec![[C64::new(0.0, 0.0); 3]; w * w * w] }
    }

    /// Accumulates `int e^{-(dt-s)A} e^{-s(ra+rb)} ds * (xi . a) b` over all sample pairs
    /// (and the mirrored `(xi . b) a` when `sym`).
    pub fn add_pair(&mut self, a: &Sparse, b: &Sparse, weight: f64, sym: bool) {
        debug_assert!(a.n + b.n <= self.n);
        let w = (2 * self.n + 1) as i64;
        let base = lin([self.n as i64; 3], w);
        let h3 = self.h.powi(3) * weight;
        let dt = self.dt;
        let bl: Vec<i64> = b.lat.iter().map(|&l| lin(l, w)).collect();
        let eb: Vec<f64> = b.rate.iter().map(|r| (-r * dt).exp()).collect();
        let bv: Vec<[C64; 3]> = b.vals.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        for i in 0..a.len() {
            let oi = base + lin(a.lat[i], w);
            let ra = a.rate[i];
            let ea = (-ra * dt).exp();
            let av = [a.vals[3 * i], a.vals[3 * i + 1], a.vals[3 * i + 2]];
            for j in 0..bl.len() {
                let o = (oi + bl[j]) as usize;
                let d = ra + b.rate[j] - self.a[o];
                let x = d * dt;
                let k = if x.abs() > 1e-3 {
                    (self.ea[o] - ea * eb[j]) / d
                } else {
                    dt * self.ea[o] * (1.0 - x * (0.5 - x * (1.0 / 6.0 - x / 24.0)))
                };
                let kh = k * h3;
                let xo = self.xi[o];
                let bj = bv[j];
                let s = (av[0] * xo[0] + av[1] * xo[1] + av[2] * xo[2]) * kh;
                let acc = &mut self.acc[o];
                acc[0] += s * bj[0];
                acc[1] += s * bj[1];
                acc[2] += s * bj[2];
                if sym {
                    let s2 = (bj[0] * xo[0] + bj[1] * xo[1] + bj[2] * xo[2]) * kh;
                    acc[0] += s2 * av[0];
                    acc[1] += s2 * av[1];
                    acc[2] += s2 * av[2];
                }
            }
        }
    }

    /// Applies `i` and the Leray projection; returns the finished packet.
    pub fn finish(self) -> WavePacket {
        let mut env = Envelope::zeros(self.h, self.n, 3, self.radius);
        let data = env.data_mut();
        for (o, v) in self.acc.iter().enumerate() {
            let iv = [v[0] * C64::i(), v[1] * C64::i(), v[2] * C64::i()];
            let p = leray_apply(self.xi[o], iv);
            data[3 * o..3 * o + 3].copy_from_slice(&p);
        }
        WavePacket { center: self.center, envelope: env }
    }
}

/// Closed form of `int_0^dt exp(-(dt - s) A - s B) ds`.
pub fn tau_factor(a: f64, b: f64, dt: f64) -> f64 {
    if dt == 0.0 {
        return 0.0;
    }
    let d = b - a;
    let x = d * dt;
    if x.abs() < 1e-6 {
        dt * (-a * dt).exp() * (1.0 - x / 2.0)
    } else {
        let m = a.min(b);
        (-m * dt).exp() * (-(-(d.abs()) * dt).exp_m1()) / d.abs()
    }
}
