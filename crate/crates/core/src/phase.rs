//! Exact reduction of `kappa . x` modulo one turn for integer frequencies of any size.

use num_bigint::BigInt;
use std::sync::OnceLock;

/// Bits of the fixed-point representation of 1/(2 pi).
const INV_2PI_BITS: i64 = 1280;

/// floor(2^1280 / (2 pi)) in hexadecimal.
const INV_2PI_HEX: &str = concat!(
    "28be60db9391054a7f09d5f47d4d377036d8a5664f10e4107f9458eaf7aef158",
    "6dc91b8e909374b801924bba827464873f877ac72c4a69cfba208d7d4baed121",
    "3a671c09ad17df904e64758e60d4ce7d272117e2ef7e4a0ec7fe25fff7816603",
    "fbcbc462d6829b47db4d9fb3c9f2c26dd3d18fd9a797fa8b5d49eeb1faf97c5e",
    "cf41ce7de294a4ba9afed7ec47e357421580cc11bf1edaeafc33ef0826bd0d87",
);

fn inv_2pi() -> &'static BigInt {
    static CELL: OnceLock<BigInt> = OnceLock::new();
    CELL.get_or_init(|| BigInt::parse_bytes(INV_2PI_HEX.as_bytes(), 16).expect("valid hex constant"))
}

/// Splits a finite double into `(mantissa, exponent)` with `v = mantissa * 2^exponent`.
fn decode(v: f64) -> (i64, i64) {
    let bits = v.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & 0x000f_ffff_ffff_ffff;
    let mant = if exp == 0 { frac << 1 } else { frac | 0x0010_0000_0000_0000 };
    let m = if bits >> 63 == 1 { -(mant as i64) } else { mant as i64 };
    (m, exp - 1075)
}

/// Fractional part of `kappa . x / (2 pi)` in `[0, 1)`.
///
/// The product is formed exactly in big-integer arithmetic, so the result is
/// accurate even when `|kappa|` is far beyond the range where `f64` can hold
/// `kappa . x` to better than one turn.
pub fn phase_turns(kappa: [i128; 3], x: [f64; 3]) -> f64 {
    let mut terms: Vec<(BigInt, i64)> = Vec::with_capacity(3);
    for axis in 0..3 {
        if kappa[axis] == 0 || x[axis] == 0.0 {
            continue;
        }
        assert!(x[axis].is_finite(), "non-finite evaluation point");
        let (m, e) = decode(x[axis]);
        terms.push((BigInt::from(kappa[axis]) * BigInt::from(m), e));
    }
    if terms.is_empty() {
        return 0.0;
    }
    let emin = terms.iter().map(|t| t.1).min().unwrap();
    let mut s = BigInt::from(0);
    for (v, e) in terms {
        s += v << ((e - emin) as usize);
    }
    if s == BigInt::from(0) {
        return 0.0;
    }
    let shift = (INV_2PI_BITS - emin) as usize;
    debug_assert!(shift >= 128);
    let prod = s * inv_2pi();
    let mask = (BigInt::from(1) << shift) - 1;
    let rem: BigInt = prod & mask;
    let top: BigInt = rem >> (shift - 64);
    let (_, digits) = top.to_u64_digits();
    let word = digits.first().copied().unwrap_or(0);
    word as f64 / 18446744073709551616.0
}

/// `exp(2 pi i turns)` with the argument first reduced to `[-1/2, 1/2]`.
pub fn unit_phase(turns: f64) -> num_complex::Complex64 {
    let t = turns - turns.round();
    let a = std::f64::consts::TAU * t;
    num_complex::Complex64::new(a.cos(), a.sin())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_products_match_direct_evaluation() {
        let k = [3i128, -5, 7];
        let x = [0.125, 0.3, -1.7];
        let direct = (3.0 * 0.125 - 5.0 * 0.3 - 7.0 * 1.7) / std::f64::consts::TAU;
        let expect = direct - direct.floor();
        assert!((phase_turns(k, x) - expect).abs() < 1e-14);
    }

    #[test]
    fn power_of_two_frequency_at_dyadic_point_is_whole_turns() {
        // 2^99 * 2^-3 = 2^96 radians is not whole turns, but 2^99 * 0 is.
        assert_eq!(phase_turns([0, 1i128 << 99, 0], [0.3, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn large_frequency_reduction_is_consistent_with_doubling() {
        // frac(2 a) = frac(2 frac(a)).
        let x = [0.0, 0.3711, 0.0];
        let a = phase_turns([0, 1i128 << 90, 0], x);
        let b = phase_turns([0, 1i128 << 91, 0], x);
        let twice = (2.0 * a) - (2.0 * a).floor();
        assert!((b - twice).abs() < 1e-12);
    }

    #[test]
    fn negative_products_wrap_into_unit_interval() {
        let t = phase_turns([-1, 0, 0], [1.0, 0.0, 0.0]);
        let expect = 1.0 - 1.0 / std::f64::consts::TAU;
        assert!((t - expect).abs() < 1e-15);
    }
}
