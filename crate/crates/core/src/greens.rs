//! Green's function of the Bessel process `dX = dW + (b / X) dt` on the
//! half-line and the raw Volterra kernel built from it.
//!
//! This is the reference path. The production assembly in [`crate::lmvf`]
//! integrates the variance variable in closed form instead.

use crate::oscquad::{integrate_gk_panels, integrate_gk_vec, QuadConfig, QuadError};
use crate::specfun::{bessel_i_split, SpecfunError};
use crate::transform::{build_cache, SqrtP, TransformCache, TransformError};
use crate::model::{log_barrier, BarrierContract, HestonModel};
use num_complex::Complex64 as C64;
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GreensError {
    #[error("drift constant b = {0} < 1/2 is not supported")]
    InvalidDrift(f64),
    #[error("|tau| = {0:e} is on the diagonal; use the delta-function limit")]
    DiagonalDegeneracy(f64),
    #[error("kernel evaluated on the diagonal s = t")]
    Diagonal,
    #[error(transparent)]
    Specfun(#[from] SpecfunError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Quad(#[from] QuadError),
}

/// `ln G` from the logarithms of `tau`, `z`, `zeta`.
///
/// All exponentials of `G` are merged before evaluation:
/// `-(z^2 + zeta^2)/(2 tau)` is combined with the growth of `I_{b-1/2}(z zeta / tau)`.
pub fn green_log(ln_tau: C64, ln_z: C64, ln_zeta: C64, b: f64) -> Result<C64, GreensError> {
    if b < 0.5 {
        return Err(GreensError::InvalidDrift(b));
    }
    let u1 = (ln_z - 0.5 * ln_tau).exp();
    let u2 = (ln_zeta - 0.5 * ln_tau).exp();
    let w = u1 * u2;
    let bes = bessel_i_split(b - 0.5, w)?;
    let gauss = if bes.exponent == w {
        -0.5 * (u1 - u2) * (u1 - u2)
    } else if bes.exponent == -w {
        -0.5 * (u1 + u2) * (u1 + u2)
    } else {
        -0.5 * (u1 * u1 + u2 * u2) + bes.exponent
    };
    Ok(0.5 * (ln_z + ln_zeta) - ln_tau + b * (ln_zeta - ln_z) + gauss + bes.mantissa.ln())
}

/// `G(tau, z, zeta) = sqrt(z zeta)/tau (zeta/z)^b exp(-(z^2 + zeta^2)/(2 tau)) I_{b-1/2}(z zeta/tau)`
/// with principal logarithms.
pub fn green(tau: C64, z: C64, zeta: C64, b: f64) -> Result<C64, GreensError> {
    if b < 0.5 {
        return Err(GreensError::InvalidDrift(b));
    }
    if tau.norm() < 1e-14 {
        return Err(GreensError::DiagonalDegeneracy(tau.norm()));
    }
    if zeta.norm() == 0.0 {
        return Ok(C64::new(0.0, 0.0));
    }
    Ok(green_log(tau.ln(), z.ln(), zeta.ln(), b)?.exp())
}

/// Logarithm of the kernel `K(s, v', t, v; sqrt p)` for grid indices
/// `i_t < i_s` of `cache`:
///
/// `K = sqrt(v') g(s) G(tau(t) - tau(s), g(t) sqrt v, g(s) sqrt v')
///      exp(-y(s) sqrt p + alpha(t) v + beta(t) - beta(s) - alpha(s) v')`.
pub fn kernel_frak_log(cache: &TransformCache, i_t: usize, i_s: usize, v: f64, v_prime: f64, y_s: f64, b: f64) -> Result<C64, GreensError> {
    if i_s <= i_t {
        return Err(GreensError::Diagonal);
    }
    let lg_t = cache.log_g(i_t);
    let lg_s = cache.log_g(i_s);
    let ln_tau = 2.0 * lg_s + cache.q_scaled(i_t, i_s).ln();
    let ln_z = lg_t + 0.5 * v.ln();
    let ln_zeta = lg_s + 0.5 * v_prime.ln();
    let sp = cache.sqrtp.value();
    let expo = -y_s * sp + cache.alpha(i_t) * v + cache.beta(i_t) - cache.beta(i_s) - cache.alpha(i_s) * v_prime;
    Ok(0.5 * v_prime.ln() + lg_s + green_log(ln_tau, ln_z, ln_zeta, b)? + expo)
}

/// The kernel `K` itself; see [`kernel_frak_log`].
pub fn kernel_frak(cache: &TransformCache, i_t: usize, i_s: usize, v: f64, v_prime: f64, y_s: f64, b: f64) -> Result<C64, GreensError> {
    if v_prime == 0.0 {
        return Ok(C64::new(0.0, 0.0));
    }
    Ok(kernel_frak_log(cache, i_t, i_s, v, v_prime, y_s, b)?.exp())
}

/// Panel breaks on `[0, nu_max]`, graded towards `peak`; for short `s - t`
/// the kernel is a narrow spike around `nu = sqrt(v)`.
fn nu_breaks(peak: f64, nu_max: f64) -> Vec<f64> {
    let mut b: Vec<f64> = (0..=8).map(|i| nu_max * i as f64 / 8.0).collect();
    for d in [1e-3, 3e-3, 1e-2, 3e-2, 0.1, 0.3] {
        b.extend([peak * (1.0 - d), peak * (1.0 + d)]);
    }
    b.retain(|x| (0.0..=nu_max).contains(x));
    b.sort_by(f64::total_cmp);
    b.dedup();
    b
}

/// `(1/2) int_0^nu_max^2 w(v') K(s, v', t, v) dv'` by adaptive quadrature in `nu = sqrt(v')`.
pub fn kernel_frak_v_integral(
    cache: &TransformCache,
    i_t: usize,
    i_s: usize,
    v: f64,
    y_s: f64,
    b: f64,
    weight: &dyn Fn(f64) -> f64,
    nu_max: f64,
    cfg: &QuadConfig,
) -> Result<C64, GreensError> {
    let mut failure = None;
    let r = integrate_gk_panels(
        |nu, out: &mut [C64]| {
            out[0] = if nu == 0.0 {
                C64::new(0.0, 0.0)
            } else {
                match kernel_frak_log(cache, i_t, i_s, v, nu * nu, y_s, b) {
                    Ok(l) => nu * weight(nu * nu) * l.exp(),
                    Err(e) => {
                        failure = Some(e);
                        C64::new(0.0, 0.0)
                    }
                }
            }
        },
        1,
        &nu_breaks(v.sqrt(), nu_max),
        cfg,
        None,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(r?.value[0])
}

/// The real `xi`-integrated kernel
/// `Kc(s, v', t, v) = (1/pi) int_0^upsilon xi Im[K(-i xi) e^{-i xi y(t)}] / 2 dxi`,
/// normalised so that the boundary-gradient equation reads
/// `Phi(t, v) + int_t^T ds int_0^inf dv' Phi(s, v') Kc(s, v', t, v) = f(t, v)`.
///
/// Builds a transform cache for every quadrature node; used only as an oracle.
pub fn kernel_k_reference(
    model: &HestonModel,
    contract: &BarrierContract,
    s: f64,
    v_prime: f64,
    t: f64,
    v: f64,
    cfg: &QuadConfig,
) -> Result<f64, GreensError> {
    if !(t < s) {
        return Err(GreensError::Diagonal);
    }
    let grid = [t, s, contract.maturity];
    let y_t = log_barrier(contract, t);
    let y_s = log_barrier(contract, s);
    let b = model.b();
    let mut failure = None;
    let r = integrate_gk_vec(
        |xi, out: &mut [C64]| {
            let val = build_cache(model, SqrtP::minus(xi), &grid)
                .map_err(GreensError::from)
                .and_then(|c| kernel_frak(&c, 0, 1, v, v_prime, y_s, b));
            out[0] = match val {
                Ok(k) => C64::new(xi * (0.5 * k * C64::from_polar(1.0, -xi * y_t)).im / PI, 0.0),
                Err(e) => {
                    failure = Some(e);
                    C64::new(0.0, 0.0)
                }
            };
        },
        1,
        0.0,
        cfg.upsilon,
        16,
        cfg,
        None,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(r?.value[0].re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelParams};
    use crate::oscquad::integrate_gk;

    fn re(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    fn cfg() -> QuadConfig {
        QuadConfig { rel_tol: 1e-11, abs_tol: 1e-13, ..QuadConfig::default() }
    }

    #[test]
    fn normalization() {
        for &z in &[0.3, 1.0, 3.0] {
            for &tau in &[0.05f64, 0.5] {
                let hi = z + 12.0 * tau.sqrt() + 5.0;
                let (mass, _) = integrate_gk(|zeta| green(re(tau), re(z), re(zeta), 1.5).unwrap(), 0.0, hi, &cfg()).unwrap();
                assert!((mass.re - 1.0).abs() < 1e-6, "z={z} tau={tau}: {mass}");
            }
        }
    }

    #[test]
    fn first_moment_and_delta_limit() {
        let z = 1.0;
        for &tau in &[1e-2, 1e-3] {
            let (m1, _) = integrate_gk(|zeta| zeta * green(re(tau), re(z), re(zeta), 1.5).unwrap(), 0.0, 3.0, &cfg()).unwrap();
            // drift b / X pushes the mean up by about b tau / z
            assert!((m1.re - z).abs() < 3.0 * tau, "tau={tau}: {}", m1.re);
        }
        let f = |x: f64| (-(x - 0.8) * (x - 0.8)).exp();
        let (v, _) = integrate_gk(|zeta| f(zeta) * green(re(1e-3), re(1.0), re(zeta), 1.5).unwrap(), 0.0, 3.0, &cfg()).unwrap();
        assert!((v.re - f(1.0)).abs() < 1e-2);
    }

    #[test]
    fn zero_at_origin_and_reflection() {
        assert_eq!(green(re(0.3), re(1.0), re(0.0), 1.5).unwrap(), re(0.0));
        let (tau, z, zeta) = (C64::new(0.2, 0.05), C64::new(1.1, 0.3), C64::new(0.7, -0.2));
        let a = green(tau.conj(), z.conj(), zeta.conj(), 1.5).unwrap();
        let b = green(tau, z, zeta, 1.5).unwrap().conj();
        assert!((a - b).norm() < 1e-13 * b.norm());
        assert!(matches!(green(re(0.0), re(1.0), re(1.0), 1.5), Err(GreensError::DiagonalDegeneracy(_))));
        assert!(matches!(green(re(0.1), re(1.0), re(1.0), 0.2), Err(GreensError::InvalidDrift(_))));
    }

    #[test]
    fn green_matches_direct_formula() {
        // small arguments where the textbook expression is safe to evaluate directly
        let (tau, z, zeta, b) = (C64::new(0.3, 0.1), C64::new(0.9, 0.2), C64::new(1.2, -0.1), 1.5f64);
        let direct = (z * zeta).sqrt() / tau
            * (zeta / z).powf(b)
            * (-(z * z + zeta * zeta) / (2.0 * tau)).exp()
            * crate::specfun::bessel_i(b - 0.5, z * zeta / tau).unwrap();
        let got = green(tau, z, zeta, b).unwrap();
        assert!((got - direct).norm() < 1e-12 * direct.norm());
    }

    #[test]
    fn kernel_recomposition() {
        let model = build_model(&ModelParams::reference(), 0.25, 10).unwrap();
        let grid = [0.0, 0.125, 0.25];
        let cache = build_cache(&model, SqrtP::minus(1.0), &grid).unwrap();
        let y = (40.0f64 / 60.0).ln();
        let got = kernel_frak(&cache, 0, 1, 0.5, 0.5, y, 1.5).unwrap();
        // step-by-step recomposition from the cache's plain quantities
        let (g_t, g_s) = (cache.g(0), cache.g(1));
        let dtau = cache.tau(0) - cache.tau(1);
        let gr = green(dtau, g_t * 0.5f64.sqrt(), g_s * 0.5f64.sqrt(), 1.5).unwrap();
        let sp = C64::new(0.0, -1.0);
        let expo = -y * sp + cache.alpha(0) * 0.5 + cache.beta(0) - cache.beta(1) - cache.alpha(1) * 0.5;
        let direct = 0.5f64.sqrt() * g_s * gr * expo.exp();
        assert!((got - direct).norm() < 1e-10 * direct.norm(), "{got} vs {direct}");
        assert!(matches!(kernel_frak(&cache, 1, 1, 0.5, 0.5, y, 1.5), Err(GreensError::Diagonal)));
        // xi = 0: every image quantity is real
        let cache0 = build_cache(&model, SqrtP::minus(0.0), &grid).unwrap();
        let k0 = kernel_frak(&cache0, 0, 1, 0.5, 0.4, y, 1.5).unwrap();
        assert!(k0.im.abs() < 1e-14 * k0.re.abs());
        assert_eq!(kernel_frak(&cache, 0, 1, 0.5, 0.0, y, 1.5).unwrap(), re(0.0));
    }
}
