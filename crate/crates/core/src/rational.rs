//! Exact rational helpers shared by the LP layer and the analyzers.

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Arbitrary-precision rational; always normalized (denominator > 0, lowest terms).
pub type Rational = BigRational;

pub fn int(v: i64) -> Rational {
    Rational::from_integer(BigInt::from(v))
}

pub fn frac(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

pub fn to_f64(r: &Rational) -> f64 {
    // Ratio::to_f64 loses range for huge parts; our values are small.
    r.to_f64().unwrap_or(f64::NAN)
}

/// `num/den` (or just `num` for integers).
pub fn render(r: &Rational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// `num/den (decimal)` as used in reports.
pub fn render_with_decimal(r: &Rational) -> String {
    format!("{} ({:.6})", render(r), to_f64(r))
}

/// Best rational approximation of `x` with denominator at most `max_den`
/// (continued fractions, then the best semiconvergent).
pub fn approximate(x: f64, max_den: u64) -> Rational {
    assert!(x.is_finite(), "cannot approximate {x}");
    let negative = x < 0.0;
    let mut rem = x.abs();
    let (mut p0, mut q0, mut p1, mut q1) = (0u128, 1u128, 1u128, 0u128);
    let max_den = max_den as u128;
    for _ in 0..64 {
        let a = rem.floor();
        if a > 1e18 {
            break;
        }
        let a = a as u128;
        let p2 = a * p1 + p0;
        let q2 = a * q1 + q0;
        if q2 > max_den {
            // best semiconvergent within the bound
            let k = (max_den - q0) / q1;
            let (ps, qs) = (k * p1 + p0, k * q1 + q0);
            let err_s = (ps as f64 / qs as f64 - x.abs()).abs();
            let err_c = (p1 as f64 / q1 as f64 - x.abs()).abs();
            if k > 0 && err_s < err_c {
                p1 = ps;
                q1 = qs;
            }
            break;
        }
        p0 = p1;
        q0 = q1;
        p1 = p2;
        q1 = q2;
        let f = rem - a as f64;
        if f < 1e-15 {
            break;
        }
        rem = 1.0 / f;
    }
    let r = Rational::new(BigInt::from(p1), BigInt::from(q1));
    if negative {
        -r
    } else {
        r
    }
}

/// Largest integer `c` with `c^den <= base^num`, i.e. `floor(base^(num/den))`
/// for a non-negative exponent. Exact.
pub fn floor_pow(base: u64, exponent: &Rational) -> u64 {
    assert!(!exponent.is_negative(), "negative exponent");
    if base <= 1 || exponent.is_zero() {
        return 1;
    }
    let small = |x: &BigInt| x.to_u32().filter(|&v| v <= 64);
    let (Some(num), Some(den)) = (small(exponent.numer()), small(exponent.denom())) else {
        // approximated exponents: exact powers would be enormous
        let v = (base as f64).powf(to_f64(exponent));
        return (v + 1e-9).floor().clamp(1.0, u64::MAX as f64) as u64;
    };
    let target = BigUint::from(base).pow(num);
    let approx = (base as f64).powf(num as f64 / den as f64);
    let mut c = if approx.is_finite() && approx < 1.8e19 { approx.round() as u64 } else { u64::MAX };
    let fits = |c: u64| BigUint::from(c).pow(den) <= target;
    while c > 1 && !fits(c) {
        c -= 1;
    }
    while c < u64::MAX && fits(c + 1) {
        c += 1;
    }
    c.max(1)
}

/// Exact `log_base(value)` when both are integer powers of a common base,
/// e.g. `log_64(4096) = 2` or `log_8(4) = 2/3`.
pub fn exact_log(value: u64, base: u64) -> Option<Rational> {
    if base < 2 || value == 0 {
        return None;
    }
    if value == 1 {
        return Some(Rational::zero());
    }
    // base = g^s, value = g^t for the primitive root g of base
    let (g, s) = primitive_root(base);
    let mut v = value;
    let mut t = 0i64;
    while v.is_multiple_of(g) {
        v /= g;
        t += 1;
    }
    (v == 1).then(|| frac(t, s))
}

fn primitive_root(n: u64) -> (u64, i64) {
    for s in (2..=63i64).rev() {
        let r = (n as f64).powf(1.0 / s as f64).round() as u64;
        for c in r.saturating_sub(1).max(2)..=r + 1 {
            if c.checked_pow(s as u32) == Some(n) {
                let (g, s2) = primitive_root(c);
                return (g, s * s2);
            }
        }
    }
    (n, 1)
}

/// `log_base(value)`: exact when possible, otherwise the best rational
/// approximation with denominator `<= 10^6`. The flag reports approximation.
pub fn log_ratio(value: u64, base: u64) -> (Rational, bool) {
    assert!(base >= 2, "log base must be >= 2");
    assert!(value >= 1, "log of zero");
    match exact_log(value, base) {
        Some(r) => (r, false),
        None => (approximate((value as f64).ln() / (base as f64).ln(), 1_000_000), true),
    }
}

pub fn ceil_div(a: &Rational) -> BigInt {
    a.numer().div_ceil(a.denom())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floor_pow_is_exact_at_perfect_powers() {
        assert_eq!(floor_pow(64, &frac(1, 3)), 4);
        assert_eq!(floor_pow(64, &frac(2, 3)), 16);
        assert_eq!(floor_pow(27, &frac(1, 3)), 3);
        assert_eq!(floor_pow(63, &frac(1, 3)), 3);
        assert_eq!(floor_pow(1024, &frac(1, 2)), 32);
        assert_eq!(floor_pow(10, &int(0)), 1);
        assert_eq!(floor_pow(100_000, &frac(1, 2)), 316);
    }

    #[test]
    fn exact_logs() {
        assert_eq!(exact_log(4096, 64), Some(int(2)));
        assert_eq!(exact_log(4, 8), Some(frac(2, 3)));
        assert_eq!(exact_log(1, 8), Some(int(0)));
        assert_eq!(exact_log(10, 8), None);
        assert_eq!(log_ratio(1000, 10), (int(3), false));
        let (r, approx) = log_ratio(1000, 64);
        assert!(approx);
        assert!(r.denom() <= &BigInt::from(1_000_000));
        assert!((to_f64(&r) - 1000f64.ln() / 64f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn approximation_recovers_simple_fractions() {
        assert_eq!(approximate(0.5, 100), frac(1, 2));
        assert_eq!(approximate(2.0 / 3.0, 1000), frac(2, 3));
        assert_eq!(approximate(-1.25, 10), frac(-5, 4));
        assert_eq!(approximate(std::f64::consts::PI, 7), frac(22, 7));
    }

    #[test]
    fn rendering() {
        assert_eq!(render(&frac(3, 2)), "3/2");
        assert_eq!(render(&int(2)), "2");
        assert_eq!(render_with_decimal(&frac(1, 2)), "1/2 (0.500000)");
    }
}
