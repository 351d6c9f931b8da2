//! Image-space functions `alpha`, `beta`, `g`, `tau` on the rays `sqrt(p) = -+ i xi`.
//!
//! In backward time `h = T - t` the Riccati equation reads
//! `d alpha / dh = c - kbar alpha + sigma^2 alpha^2 / 2`, `alpha(T) = 0`.
//! With piecewise-constant coefficients every quantity has a closed form per
//! segment. `g` grows like `exp(sigma xi t / 2)`, so it is stored as
//! `ln g` and the `tau` increments are kept relative to the current `g^2`.

use crate::model::HestonModel;
use num_complex::Complex64 as C64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransformError {
    #[error("kappa_bar = {0} is too close to zero (branch point)")]
    DegenerateKappaBar(C64),
    #[error("Riccati step hits a pole (dt = {dt})")]
    NumericalOverflow { dt: f64 },
    #[error("correlation |rho| = 1 has no finite branch points")]
    DegenerateCorrelation,
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    /// `sqrt(p) = -i xi`
    MinusIXi,
    /// `sqrt(p) = +i xi`
    PlusIXi,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqrtP {
    pub branch: Branch,
    pub xi: f64,
}

impl SqrtP {
    pub fn minus(xi: f64) -> Self {
        Self { branch: Branch::MinusIXi, xi }
    }

    pub fn plus(xi: f64) -> Self {
        Self { branch: Branch::PlusIXi, xi }
    }

    pub fn value(&self) -> C64 {
        match self.branch {
            Branch::MinusIXi => C64::new(0.0, -self.xi),
            Branch::PlusIXi => C64::new(0.0, self.xi),
        }
    }

    pub fn p(&self) -> C64 {
        C64::new(-self.xi * self.xi, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxCoeffs {
    pub a: C64,
    pub c: C64,
    pub kappa_bar: C64,
    pub theta_bar: C64,
}

/// `a = r(sqrt p - 1) - q sqrt p`, `c = (p - sqrt p)/2`, `kbar = kappa - rho sigma sqrt p`,
/// `theta_bar = theta kappa / kbar`.
pub fn aux_coeffs(model: &HestonModel, sqrtp: SqrtP, t: f64) -> Result<AuxCoeffs, TransformError> {
    let s = model.params_at(t);
    let sp = sqrtp.value();
    let a = s.r * (sp - 1.0) - s.q * sp;
    let c = 0.5 * (sqrtp.p() - sp);
    let kappa_bar = s.kappa - s.rho * s.sigma * sp;
    if kappa_bar.norm() < 1e-14 {
        return Err(TransformError::DegenerateKappaBar(kappa_bar));
    }
    Ok(AuxCoeffs { a, c, kappa_bar, theta_bar: s.theta * s.kappa / kappa_bar })
}

/// Roots in `sqrt(p)` of `2 c sigma^2 = kbar^2` at time `t`, returned as `(plus, minus)`.
pub fn branch_points(model: &HestonModel, t: f64) -> Result<(f64, f64), TransformError> {
    let s = model.params_at(t);
    let one_m = 1.0 - s.rho * s.rho;
    if one_m <= 0.0 {
        return Err(TransformError::DegenerateCorrelation);
    }
    let qa = s.sigma * s.sigma * one_m;
    let qb = 2.0 * s.kappa * s.rho * s.sigma - s.sigma * s.sigma;
    let qc = -s.kappa * s.kappa;
    let disc = (qb * qb - 4.0 * qa * qc).sqrt();
    Ok(((-qb + disc) / (2.0 * qa), (-qb - disc) / (2.0 * qa)))
}

/// `e^z - 1` without cancellation for small `|z|`.
pub(crate) fn expm1(z: C64) -> C64 {
    if z.norm() < 1e-3 {
        z * (1.0 + z * (0.5 + z * (1.0 / 6.0 + z * (1.0 / 24.0 + z / 120.0))))
    } else {
        z.exp() - 1.0
    }
}

/// `ln(1 + w)` without cancellation for small `|w|`.
pub(crate) fn ln1p(w: C64) -> C64 {
    if w.norm() < 1e-4 {
        w * (1.0 - w * (0.5 - w * (1.0 / 3.0 - w * 0.25)))
    } else {
        (1.0 + w).ln()
    }
}

/// `tanh(z)` for `Re z >= 0`, or `None` at a pole.
fn tanh_stable(z: C64) -> Option<C64> {
    let (z, sign) = if z.re >= 0.0 { (z, 1.0) } else { (-z, -1.0) };
    let e = (-2.0 * z).exp();
    let den = 1.0 + e;
    if den.norm() < 1e-12 {
        return None;
    }
    Some(sign * (1.0 - e) / den)
}

/// Closed-form constant-coefficient Riccati step: returns `alpha` at the start
/// of a segment of length `dt` given its value `alpha_end` at the end.
pub fn riccati_segment(alpha_end: C64, kappa_bar: C64, sigma: f64, c: C64, dt: f64) -> Result<C64, TransformError> {
    if dt == 0.0 {
        return Ok(alpha_end);
    }
    let s2 = sigma * sigma;
    let d = (kappa_bar * kappa_bar - 2.0 * c * s2).sqrt();
    match tanh_stable(d * (0.5 * dt)) {
        Some(tn) => {
            let num = d * alpha_end + (2.0 * c - kappa_bar * alpha_end) * tn;
            let den = d + (kappa_bar - alpha_end * s2) * tn;
            if den.norm() == 0.0 || !num.is_finite() {
                return Err(TransformError::NumericalOverflow { dt });
            }
            if d.norm() < 1e-300 {
                // tn / d -> dt / 2
                let num = alpha_end + (2.0 * c - kappa_bar * alpha_end) * (0.5 * dt);
                let den = 1.0 + (kappa_bar - alpha_end * s2) * (0.5 * dt);
                return Ok(num / den);
            }
            Ok(num / den)
        }
        None => {
            if dt < 1e-12 {
                return Err(TransformError::NumericalOverflow { dt });
            }
            let mid = riccati_segment(alpha_end, kappa_bar, sigma, c, 0.5 * dt)?;
            riccati_segment(mid, kappa_bar, sigma, c, 0.5 * dt)
        }
    }
}

/// `alpha` at every grid time by backward recursion from `alpha(T) = 0`,
/// where `T` is the last grid time. Model breakpoints inside the grid are honoured.
pub fn riccati_path(model: &HestonModel, sqrtp: SqrtP, time_grid: &[f64]) -> Result<Vec<C64>, TransformError> {
    let nodes = InternalGrid::new(model, time_grid, false)?;
    let n = nodes.t.len();
    let mut alpha = vec![C64::new(0.0, 0.0); n];
    for k in (0..n - 1).rev() {
        let (t1, t2) = (nodes.t[k], nodes.t[k + 1]);
        let aux = aux_coeffs(model, sqrtp, 0.5 * (t1 + t2))?;
        let sigma = model.sigma().eval(0.5 * (t1 + t2));
        alpha[k] = riccati_segment(alpha[k + 1], aux.kappa_bar, sigma, aux.c, t2 - t1)?;
    }
    Ok(nodes.requested.iter().map(|&i| alpha[i]).collect())
}

/// Sorted union of requested times, model breakpoints and (optionally) zero.
struct InternalGrid {
    t: Vec<f64>,
    requested: Vec<usize>,
}

impl InternalGrid {
    fn new(model: &HestonModel, time_grid: &[f64], with_origin: bool) -> Result<Self, TransformError> {
        if time_grid.is_empty() {
            return Err(TransformError::InvalidGrid("empty grid".into()));
        }
        if time_grid.windows(2).any(|w| w[1] < w[0]) || time_grid[0] < 0.0 {
            return Err(TransformError::InvalidGrid("times must be non-negative and sorted".into()));
        }
        let horizon = *time_grid.last().unwrap();
        let start = if with_origin { 0.0 } else { time_grid[0] };
        let mut t: Vec<f64> = time_grid.to_vec();
        t.extend(model.breakpoints().iter().copied().filter(|&b| b > start && b < horizon));
        if with_origin {
            t.push(0.0);
        }
        t.sort_by(f64::total_cmp);
        let tol = 1e-13 * horizon.max(1.0);
        t.dedup_by(|b, a| (*b - *a).abs() <= tol);
        let requested = time_grid
            .iter()
            .map(|&x| {
                let i = t.partition_point(|&y| y < x - tol);
                i.min(t.len() - 1)
            })
            .collect();
        Ok(Self { t, requested })
    }
}

/// Closed-form results for one backward step on a constant-coefficient piece.
#[derive(Debug, Clone, Copy)]
struct Step {
    /// `alpha` at the start of the step
    alpha: C64,
    /// `int alpha du` over the step
    int_alpha: C64,
    /// `ln g(end) - ln g(start)`
    dlog_g: C64,
    /// `(1/4) int (g(u) / g(end))^2 sigma^2 du` over the step
    tau_inc: C64,
}

fn step(alpha_end: C64, kappa_bar: C64, sigma: f64, c: C64, h: f64) -> Step {
    let s2 = sigma * sigma;
    let d = (kappa_bar * kappa_bar - 2.0 * c * s2).sqrt();
    let alpha_minus = (kappa_bar - d) / s2;
    let w_end = alpha_end - alpha_minus;
    let b = w_end * s2 / (2.0 * d);
    // |B| |D| h < 1/2 keeps 1 + B (E - 1) inside a disc around 1 along the whole
    // step, so the principal logarithm below never crosses its cut.
    if (b.norm() * d.norm() * h >= 0.5) && h > 1e-14 {
        let late = step(alpha_end, kappa_bar, sigma, c, 0.5 * h);
        let early = step(late.alpha, kappa_bar, sigma, c, 0.5 * h);
        return Step {
            alpha: early.alpha,
            int_alpha: early.int_alpha + late.int_alpha,
            dlog_g: early.dlog_g + late.dlog_g,
            tau_inc: late.tau_inc + (-2.0 * late.dlog_g).exp() * early.tau_inc,
        };
    }
    let em1 = expm1(-d * h); // E - 1
    let den = 1.0 + b * em1; // A + B E
    let e = 1.0 + em1;
    let alpha = alpha_minus + w_end * e / den;
    let log_den = ln1p(b * em1);
    let int_alpha = alpha_minus * h - 2.0 / s2 * log_den;
    let dlog_g = 0.5 * d * h + log_den;
    // (1 - E) / D with its small-argument limit
    let one_minus_e_over_d = if (d * h).norm() < 1e-8 { C64::new(h, 0.0) } else { -em1 / d };
    let tau_inc = 0.25 * s2 * one_minus_e_over_d / den;
    Step { alpha, int_alpha, dlog_g, tau_inc }
}

/// Image-space state on a time grid for one value of `sqrt(p)`.
///
/// `ln g` is relative to `g(0) = 1`. The `tau` data are stored as
/// `S_i = (1/4) int_{t_first}^{t_i} g^2 sigma^2 du / g(t_i)^2`, which stays bounded
/// for every `xi`.
#[derive(Debug, Clone)]
pub struct TransformCache {
    pub sqrtp: SqrtP,
    times: Vec<f64>,
    alpha: Vec<C64>,
    beta: Vec<C64>,
    log_g: Vec<C64>,
    tau_scaled: Vec<C64>,
}

impl TransformCache {
    pub fn xi(&self) -> f64 {
        self.sqrtp.xi
    }
    pub fn times(&self) -> &[f64] {
        &self.times
    }
    pub fn len(&self) -> usize {
        self.times.len()
    }
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
    pub fn alpha(&self, i: usize) -> C64 {
        self.alpha[i]
    }
    pub fn beta(&self, i: usize) -> C64 {
        self.beta[i]
    }
    pub fn log_g(&self, i: usize) -> C64 {
        self.log_g[i]
    }
    pub fn g(&self, i: usize) -> C64 {
        self.log_g[i].exp()
    }

    /// `Q_ij = (tau(t_i) - tau(t_j)) / g(t_j)^2` for `i <= j`; bounded for all `xi`.
    pub fn q_scaled(&self, i: usize, j: usize) -> C64 {
        debug_assert!(i <= j);
        self.tau_scaled[j] - (2.0 * (self.log_g[i] - self.log_g[j])).exp() * self.tau_scaled[i]
    }

    /// `tau(t_i) = (1/4) int_{t_i}^T g^2 sigma^2 du`. Overflows for large `xi`;
    /// the kernels use [`TransformCache::q_scaled`] instead.
    pub fn tau(&self, i: usize) -> C64 {
        let n = self.times.len() - 1;
        (2.0 * self.log_g[n]).exp() * self.q_scaled(i, n)
    }
}

/// Builds the cache on `time_grid` (ascending; the last time is the maturity).
pub fn build_cache(model: &HestonModel, sqrtp: SqrtP, time_grid: &[f64]) -> Result<TransformCache, TransformError> {
    let nodes = InternalGrid::new(model, time_grid, true)?;
    let n = nodes.t.len();
    let zero = C64::new(0.0, 0.0);
    let mut alpha = vec![zero; n];
    let mut beta = vec![zero; n];
    let mut steps = Vec::with_capacity(n.saturating_sub(1));
    for k in (0..n - 1).rev() {
        let (t1, t2) = (nodes.t[k], nodes.t[k + 1]);
        let tm = 0.5 * (t1 + t2);
        let aux = aux_coeffs(model, sqrtp, tm)?;
        let seg = model.params_at(tm);
        let st = step(alpha[k + 1], aux.kappa_bar, seg.sigma, aux.c, t2 - t1);
        if !st.alpha.is_finite() || !st.dlog_g.is_finite() {
            return Err(TransformError::NumericalOverflow { dt: t2 - t1 });
        }
        alpha[k] = st.alpha;
        beta[k] = beta[k + 1] + aux.a * (t2 - t1) + seg.kappa * seg.theta * st.int_alpha;
        steps.push(st);
    }
    steps.reverse();
    let mut log_g = vec![zero; n];
    for k in 0..n - 1 {
        log_g[k + 1] = log_g[k] + steps[k].dlog_g;
    }
    let first = nodes.requested[0];
    let mut tau_scaled = vec![zero; n];
    for k in first..n - 1 {
        tau_scaled[k + 1] = (-2.0 * steps[k].dlog_g).exp() * tau_scaled[k] + steps[k].tau_inc;
    }
    let pick = |v: &Vec<C64>| nodes.requested.iter().map(|&i| v[i]).collect::<Vec<_>>();
    Ok(TransformCache {
        sqrtp,
        times: time_grid.to_vec(),
        alpha: pick(&alpha),
        beta: pick(&beta),
        log_g: pick(&log_g),
        tau_scaled: pick(&tau_scaled),
    })
}
