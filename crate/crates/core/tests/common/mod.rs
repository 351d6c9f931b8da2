//! Oracles shared by the integration tests. They avoid the library's own
//! quadrature and ODE code so that agreement means something.
#![allow(dead_code)]

use heston_git::model::HestonModel;
use heston_git::specfun::bessel_i;
use heston_git::transform::SqrtP;
use num_complex::Complex64 as C64;
use rand::rngs::StdRng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

fn simpson_step<F: FnMut(f64) -> C64>(f: &mut F, a: f64, fa: C64, b: f64, fb: C64, whole: C64, tol: f64, depth: u32) -> C64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (fm, flm, frm) = (f(m), f(lm), f(rm));
    let h = b - a;
    let left = h / 12.0 * (fa + 4.0 * flm + fm);
    let right = h / 12.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.norm() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, fa, m, fm, left, 0.5 * tol, depth - 1) + simpson_step(f, m, fm, b, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson on `[a, b]` split into `panels` equal pieces.
pub fn adaptive_simpson<F: FnMut(f64) -> C64>(mut f: F, a: f64, b: f64, panels: usize, tol: f64) -> C64 {
    let h = (b - a) / panels as f64;
    let mut sum = C64::new(0.0, 0.0);
    for i in 0..panels {
        let (lo, hi) = (a + i as f64 * h, a + (i + 1) as f64 * h);
        let (flo, fhi, fmid) = (f(lo), f(hi), f(0.5 * (lo + hi)));
        let whole = h / 6.0 * (flo + 4.0 * fmid + fhi);
        sum += simpson_step(&mut f, lo, flo, hi, fhi, whole, tol / panels as f64, 40);
    }
    sum
}

/// `alpha(0)` of `-d alpha/dt = c - kbar alpha + sigma^2 alpha^2 / 2`, `alpha(T) = 0`,
/// by classical RK4 with `steps` per model segment (coefficients are constant per segment).
pub fn rk4_alpha(model: &HestonModel, sp: SqrtP, maturity: f64, steps: usize) -> C64 {
    let mut bp: Vec<f64> = model.breakpoints().iter().copied().filter(|&t| t < maturity).collect();
    bp.push(maturity);
    let root = sp.value();
    let p = sp.p();
    let mut a = C64::new(0.0, 0.0);
    for w in bp.windows(2).rev() {
        let (lo, hi) = (w[0], w[1]);
        let s = model.params_at(0.5 * (lo + hi));
        let c = 0.5 * (p - root);
        let kbar = s.kappa - s.rho * s.sigma * root;
        let s2 = s.sigma * s.sigma;
        let f = |x: C64| c - kbar * x + 0.5 * s2 * x * x;
        let h = (hi - lo) / steps as f64;
        for _ in 0..steps {
            let k1 = f(a);
            let k2 = f(a + 0.5 * h * k1);
            let k3 = f(a + 0.5 * h * k2);
            let k4 = f(a + h * k3);
            a += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
    }
    a
}

/// `a0 int_0^inf nu^a1 exp(-a2 nu^2) I_{b-1/2}(a3 nu) d nu` by adaptive Simpson.
pub fn j_quadrature(a0: C64, a1: f64, a2: C64, a3: C64, b: f64) -> C64 {
    let peak = (a3.re.abs() / (2.0 * a2.re)).max((a1 / (2.0 * a2.re)).sqrt());
    let upper = peak + (90.0 / a2.re).sqrt() + 1.0;
    let f = |nu: f64| {
        if nu == 0.0 {
            return C64::new(0.0, 0.0);
        }
        nu.powf(a1) * (-a2 * nu * nu).exp() * bessel_i(b - 0.5, a3 * nu).unwrap()
    };
    let scale = adaptive_simpson(|nu| C64::new(f(nu).norm(), 0.0), 0.0, upper, 64, 1e-6).re;
    a0 * adaptive_simpson(f, 0.0, upper, 64, 1e-13 * scale)
}
