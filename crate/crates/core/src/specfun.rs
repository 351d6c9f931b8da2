//! Special functions: modified Bessel `I_nu` of complex argument, Gamma,
//! and the Kummer confluent hypergeometric function `M(a; b; x)`.
//!
//! Large arguments are handled in split form `mantissa * exp(exponent)` so
//! callers can merge exponentials before evaluating them.

use num_complex::Complex64 as C64;
use std::f64::consts::PI;

/// Radius beyond which `I_nu` switches from the power series to the
/// large-argument expansion.
pub const BESSEL_SWITCH_RADIUS: f64 = 17.0;

/// Radius beyond which the scaled Kummer function uses its asymptotic form.
pub const KUMMER_SWITCH_RADIUS: f64 = 60.0;

/// Below this radius the Kummer power series is used in every direction.
const KUMMER_SERIES_RADIUS: f64 = 12.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpecfunError {
    #[error("Bessel order {0} must be greater than -1")]
    InvalidOrder(f64),
    #[error("I_nu(z) overflows for Re z = {0}; use the scaled form")]
    Overflow(f64),
    #[error("Kummer series failed for a = {a}, b = {b}, |x| = {x_abs}")]
    SeriesDivergence { a: f64, b: f64, x_abs: f64 },
    #[error("Kummer M is undefined for non-positive integer b = {0}")]
    PoleInB(f64),
}

/// Gamma function for real argument (positive argument is the supported domain).
pub fn gamma_fn(x: f64) -> f64 {
    statrs::function::gamma::gamma(x)
}

/// `ln Gamma(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// `1 / Gamma(x)`, exactly zero at the poles `x = 0, -1, -2, ...`.
pub fn rgamma(x: f64) -> f64 {
    if x <= 0.0 && x == x.floor() {
        return 0.0;
    }
    if x >= 0.5 {
        1.0 / gamma_fn(x)
    } else {
        (PI * x).sin() * gamma_fn(1.0 - x) / PI
    }
}

/// `I_nu(z) = mantissa * exp(exponent)`.
#[derive(Debug, Clone, Copy)]
pub struct SplitValue {
    pub mantissa: C64,
    pub exponent: C64,
}

impl SplitValue {
    pub fn value(&self) -> C64 {
        self.mantissa * self.exponent.exp()
    }

    pub fn ln(&self) -> C64 {
        self.mantissa.ln() + self.exponent
    }
}

fn check_order(nu: f64) -> Result<(), SpecfunError> {
    if nu > -1.0 && nu.is_finite() {
        Ok(())
    } else {
        Err(SpecfunError::InvalidOrder(nu))
    }
}

fn bessel_series(nu: f64, z: C64) -> C64 {
    if z.norm() == 0.0 {
        return if nu == 0.0 { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
    }
    let half = z * 0.5;
    let q = half * half;
    let mut term = (half.ln() * nu - ln_gamma(nu + 1.0)).exp();
    let mut sum = term;
    let mut k = 0.0;
    loop {
        k += 1.0;
        term *= q / (k * (k + nu));
        sum += term;
        if term.norm() <= 1e-17 * sum.norm() && k > 2.0 {
            break;
        }
        if k > 500.0 {
            break;
        }
    }
    sum
}

/// Hankel expansion for `Re z >= 0`: returns `e^{-z} I_nu(z)`.
fn bessel_asymptotic_scaled(nu: f64, z: C64) -> C64 {
    let mu = 4.0 * nu * nu;
    let mut t_minus = C64::new(1.0, 0.0);
    let mut t_plus = C64::new(1.0, 0.0);
    let mut s_minus = t_minus;
    let mut s_plus = t_plus;
    let mut last = f64::INFINITY;
    for k in 1..200 {
        let kf = k as f64;
        let num = mu - (2.0 * kf - 1.0) * (2.0 * kf - 1.0);
        let next_plus = t_plus * num / (8.0 * kf * z);
        let next_minus = -t_minus * num / (8.0 * kf * z);
        let mag = next_plus.norm();
        if mag > last {
            break;
        }
        t_plus = next_plus;
        t_minus = next_minus;
        s_plus += t_plus;
        s_minus += t_minus;
        last = mag;
        if mag < 1e-17 * s_minus.norm() {
            break;
        }
    }
    let pref = (z * (2.0 * PI)).sqrt().inv();
    let mut out = s_minus;
    // The recessive term only matters away from the positive real axis.
    if z.re < 20.0 && z.im != 0.0 {
        let s = z.im.signum();
        let coef = C64::new(0.0, s) * C64::from_polar(1.0, s * nu * PI);
        out += coef * (-2.0 * z).exp() * s_plus;
    }
    pref * out
}

/// `I_nu(z)` in split form, valid on the whole cut plane.
pub fn bessel_i_split(nu: f64, z: C64) -> Result<SplitValue, SpecfunError> {
    check_order(nu)?;
    if z.norm() <= BESSEL_SWITCH_RADIUS {
        return Ok(SplitValue { mantissa: bessel_series(nu, z), exponent: C64::new(0.0, 0.0) });
    }
    if z.re >= 0.0 {
        return Ok(SplitValue { mantissa: bessel_asymptotic_scaled(nu, z), exponent: z });
    }
    // Reflect into the right half plane: I_nu(w e^{+-i pi}) = e^{+-i nu pi} I_nu(w).
    let w = -z;
    let s = if z.im >= 0.0 { 1.0 } else { -1.0 };
    Ok(SplitValue {
        mantissa: C64::from_polar(1.0, s * nu * PI) * bessel_asymptotic_scaled(nu, w),
        exponent: w,
    })
}

/// Modified Bessel function of the first kind, principal branch.
pub fn bessel_i(nu: f64, z: C64) -> Result<C64, SpecfunError> {
    if z.re.abs() > 700.0 {
        return Err(SpecfunError::Overflow(z.re));
    }
    Ok(bessel_i_split(nu, z)?.value())
}

/// Exponentially scaled `e^{-|Re z|} I_nu(z)`.
pub fn bessel_i_scaled(nu: f64, z: C64) -> Result<C64, SpecfunError> {
    let s = bessel_i_split(nu, z)?;
    Ok(s.mantissa * (s.exponent - z.re.abs()).exp())
}

/// Power series of `M(a; b; x)` with no transformation.
fn kummer_direct(a: f64, b: f64, x: C64) -> Result<C64, SpecfunError> {
    let mut term = C64::new(1.0, 0.0);
    let mut sum = term;
    for k in 0..2000 {
        let kf = k as f64;
        term *= x * ((a + kf) / ((b + kf) * (kf + 1.0)));
        sum += term;
        if term.norm() <= 1e-17 * sum.norm() && kf + 1.0 > x.norm() {
            return Ok(sum);
        }
        if term.norm() == 0.0 {
            return Ok(sum);
        }
    }
    Err(SpecfunError::SeriesDivergence { a, b, x_abs: x.norm() })
}

fn check_b(b: f64) -> Result<(), SpecfunError> {
    if b <= 0.0 && b == b.floor() {
        Err(SpecfunError::PoleInB(b))
    } else {
        Ok(())
    }
}

/// Kummer `M(a; b; x)` by power series, with the Kummer transformation
/// `M(a; b; x) = e^x M(b - a; b; -x)` for `Re x < 0`. Supported for `|x| <= 50`.
pub fn kummer_m_series(a: f64, b: f64, x: C64) -> Result<C64, SpecfunError> {
    check_b(b)?;
    if x.norm() > 50.0 {
        return Err(SpecfunError::SeriesDivergence { a, b, x_abs: x.norm() });
    }
    if x.re >= 0.0 {
        kummer_direct(a, b, x)
    } else {
        Ok(x.exp() * kummer_direct(b - a, b, -x)?)
    }
}

/// Large-`|x|` expansion of `e^{shift} M(a; b; x)`. The shift is folded into
/// the exponents so neither scaled nor plain values overflow early.
fn kummer_asymptotic(a: f64, b: f64, x: C64, shift: C64) -> C64 {
    fn tail(p: f64, q: f64, w: C64) -> C64 {
        // sum_s (p)_s (q)_s / (s! w^s), truncated at the smallest term
        let mut term = C64::new(1.0, 0.0);
        let mut sum = term;
        let mut last = f64::INFINITY;
        for s in 0..400 {
            let sf = s as f64;
            let next = term * ((p + sf) * (q + sf) / (sf + 1.0)) / w;
            let mag = next.norm();
            if mag > last || mag == 0.0 {
                break;
            }
            term = next;
            sum += term;
            last = mag;
            if mag < 1e-17 * sum.norm() {
                break;
            }
        }
        sum
    }
    let lnx = x.ln();
    let first = if rgamma(a) == 0.0 {
        C64::new(0.0, 0.0)
    } else {
        ((a - b) * lnx + (x + shift)).exp() * rgamma(a) * tail(1.0 - a, b - a, x)
    };
    let second = if rgamma(b - a) == 0.0 {
        C64::new(0.0, 0.0)
    } else {
        let s = if x.im >= 0.0 { 1.0 } else { -1.0 };
        C64::from_polar(1.0, s * PI * a) * (shift - a * lnx).exp() * rgamma(b - a) * tail(a, a - b + 1.0, -x)
    };
    gamma_fn(b) * (first + second)
}

/// Continues `M(a; b; .)` along the ray through `x` (with `Re x >= 0`) by
/// Taylor steps of the Kummer ODE `x y'' + (b - x) y' - a y = 0`, starting
/// from the series at radius 10. Used where the power series suffers from
/// cancellation; stable because `M` is the dominant solution in this half plane.
fn kummer_taylor(a: f64, b: f64, x: C64) -> Result<C64, SpecfunError> {
    let dir = x / x.norm();
    let mut x0 = dir * 10.0;
    let mut y = kummer_direct(a, b, x0)?;
    let mut dy = kummer_direct(a + 1.0, b + 1.0, x0)? * (a / b);
    while x0.norm() < x.norm() * (1.0 - 1e-15) {
        let step = (0.5 * x0.norm()).min(x.norm() - x0.norm());
        let h = dir * step;
        // e_n = d_n h^n for the Taylor coefficients d_n at x0
        let mut e0 = y;
        let mut e1 = dy * h;
        let mut sum = e0 + e1;
        let mut dsum = e1;
        let mut n = 0.0;
        loop {
            let e2 = ((n + a) * e0 * h * h - (n + 1.0) * (n + b - x0) * e1 * h) / (x0 * ((n + 2.0) * (n + 1.0)));
            sum += e2;
            dsum += e2 * (n + 2.0);
            n += 1.0;
            if n > 5.0 && e2.norm() < 1e-17 * sum.norm() && e1.norm() < 1e-16 * sum.norm() {
                break;
            }
            if n > 300.0 {
                return Err(SpecfunError::SeriesDivergence { a, b, x_abs: x.norm() });
            }
            e0 = e1;
            e1 = e2;
        }
        y = sum;
        dy = dsum / h;
        x0 += h;
    }
    Ok(y)
}

/// `M(a; b; w)` for `Re w >= 0` and `|w| <= KUMMER_SWITCH_RADIUS`.
fn kummer_right_half(a: f64, b: f64, w: C64) -> Result<C64, SpecfunError> {
    let r = w.norm();
    let polynomial = a <= 0.0 && a == a.floor();
    if polynomial || r <= KUMMER_SERIES_RADIUS || w.re >= 0.85 * r {
        kummer_direct(a, b, w)
    } else {
        kummer_taylor(a, b, w)
    }
}

/// Exponentially scaled Kummer function `e^{-x} M(a; b; x)` for any complex `x`.
pub fn kummer_m_scaled(a: f64, b: f64, x: C64) -> Result<C64, SpecfunError> {
    check_b(b)?;
    if x.norm() > KUMMER_SWITCH_RADIUS {
        Ok(kummer_asymptotic(a, b, x, -x))
    } else if x.re >= 0.0 {
        Ok((-x).exp() * kummer_right_half(a, b, x)?)
    } else {
        kummer_right_half(b - a, b, -x)
    }
}

/// Plain `M(a; b; x)`. Prefer this over the scaled form far out on the
/// negative real axis, where `e^{-x} M` overflows but `M` is small.
pub fn kummer_m(a: f64, b: f64, x: C64) -> Result<C64, SpecfunError> {
    check_b(b)?;
    if x.norm() > KUMMER_SWITCH_RADIUS {
        Ok(kummer_asymptotic(a, b, x, C64::new(0.0, 0.0)))
    } else if x.re >= 0.0 {
        kummer_right_half(a, b, x)
    } else {
        Ok(x.exp() * kummer_right_half(b - a, b, -x)?)
    }
}

/// `ln M(a; b; x)` (any branch of the logarithm).
pub fn kummer_m_ln(a: f64, b: f64, x: C64) -> Result<C64, SpecfunError> {
    Ok(kummer_m_scaled(a, b, x)?.ln() + x)
}

/// The closed form `M(b + 3/2; b + 1/2; x) = (1 + 2x / (1 + 2b)) e^x`.
pub fn kummer_m_approx(b: f64, x: C64) -> C64 {
    (1.0 + 2.0 * x / (1.0 + 2.0 * b)) * x.exp()
}
