//! The boundary-gradient integral equation and its RBF collocation.
//!
//! The unknown `Phi(t, v)` (half the log-spot derivative of the price at the
//! barrier) solves
//!
//! `Phi(t, v) + int_t^T ds int_0^inf dv' Phi(s, v') Kc(s, v', t, v) = f(t, v)`
//!
//! and is expanded in the basis `Theta_kl(t, sqrt v)`. For this basis the `v'`
//! integral of the kernel has a closed form, so each matrix entry is a
//! Simpson sum in `s` inside a single `xi` integral.

use crate::model::{BarrierContract, HestonModel};
use crate::oscquad::{integrate_gk_vec, simpson_weights, QuadConfig, QuadError, QuadResult};
use crate::specfun::{kummer_m, kummer_m_scaled, ln_gamma, SpecfunError};
use crate::transform::{build_cache, SqrtP, TransformCache, TransformError};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_2, PI};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LmvfError {
    #[error("invalid collocation grid: {0}")]
    InvalidGrid(String),
    #[error("closed-form inner integral diverges: Re(a2) = {re_a2:e} at s = {s}, xi = {xi}")]
    NonConvergent { re_a2: f64, s: f64, xi: f64 },
    #[error("MINRES did not converge; last residual {:e}", .residuals.last().copied().unwrap_or(f64::NAN))]
    NoConvergence { residuals: Vec<f64> },
    #[error("matrix is singular")]
    Singular,
    #[error("reference kernel: {0}")]
    Reference(String),
    #[error("row {row}: {source}")]
    Entry { row: usize, source: Box<LmvfError> },
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Specfun(#[from] SpecfunError),
}

/// Which Kummer function the closed-form inner integral uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KummerPath {
    /// `M(a4; b + 1/2; x)` with the exact `a4 = b + 3/2 + eps v_l`
    #[default]
    Exact,
    /// the elementary `M(b + 3/2; b + 1/2; x)` times the correction `v^{eps v_l}`
    Approx,
}

/// Node placement for the time integral over `(t, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimeRule {
    /// composite Simpson in `s`
    Simpson,
    /// composite Simpson in `u` with `s = t + (T - t) u^2`; absorbs the
    /// `1/sqrt(s - t)` behaviour of the `xi`-integrated kernel
    #[default]
    SqrtSimpson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    #[default]
    Minres,
    Lu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmvfConfig {
    pub n_t: usize,
    pub n_v: usize,
    pub v_m: f64,
    pub kummer: KummerPath,
    pub time_rule: TimeRule,
    pub solver: SolverKind,
    pub minres_tol: f64,
}

impl Default for LmvfConfig {
    fn default() -> Self {
        Self {
            n_t: 10,
            n_v: 4,
            v_m: 0.1,
            kummer: KummerPath::Exact,
            time_rule: TimeRule::SqrtSimpson,
            solver: SolverKind::Minres,
            minres_tol: 1e-8,
        }
    }
}

/// Collocation nodes: `n_t` uniform times on `[t0, T]` and `n_v` uniform
/// variances on `[v0 - v_m, v0 + v_m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationGrid {
    pub t_nodes: Vec<f64>,
    pub v_nodes: Vec<f64>,
    pub epsilon: f64,
}

impl CollocationGrid {
    pub fn new(t0: f64, maturity: f64, n_t: usize, v0: f64, v_m: f64, n_v: usize, epsilon: f64) -> Result<Self, LmvfError> {
        if n_t < 2 || n_v < 1 {
            return Err(LmvfError::InvalidGrid(format!("need n_t >= 2 and n_v >= 1, got {n_t}, {n_v}")));
        }
        if !(maturity > t0) {
            return Err(LmvfError::InvalidGrid("maturity must exceed t0".into()));
        }
        if !(epsilon > 0.0) {
            return Err(LmvfError::InvalidGrid(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(v0 - v_m > 0.0) || v_m < 0.0 {
            return Err(LmvfError::InvalidGrid(format!("variance nodes must be positive (v0 = {v0}, v_m = {v_m})")));
        }
        if n_v == 1 && v_m != 0.0 {
            return Err(LmvfError::InvalidGrid("a single variance node needs v_m = 0".into()));
        }
        let t_nodes = (0..n_t).map(|k| t0 + (maturity - t0) * k as f64 / (n_t - 1) as f64).collect();
        let v_nodes = if n_v == 1 { vec![v0] } else { (0..n_v).map(|l| v0 - v_m + 2.0 * v_m * l as f64 / (n_v - 1) as f64).collect() };
        Ok(Self { t_nodes, v_nodes, epsilon })
    }

    pub fn from_config(cfg: &LmvfConfig, t0: f64, maturity: f64, v0: f64, epsilon: f64) -> Result<Self, LmvfError> {
        Self::new(t0, maturity, cfg.n_t, v0, cfg.v_m, cfg.n_v, epsilon)
    }

    /// Number of basis functions (and collocation points).
    pub fn dim(&self) -> usize {
        self.t_nodes.len() * self.v_nodes.len()
    }

    /// Flat index of `(k, l)`; time major.
    pub fn index(&self, k: usize, l: usize) -> usize {
        k * self.v_nodes.len() + l
    }

    pub fn center(&self, j: usize) -> (f64, f64) {
        let n_v = self.v_nodes.len();
        (self.t_nodes[j / n_v], self.v_nodes[j % n_v].sqrt())
    }

    pub fn maturity(&self) -> f64 {
        *self.t_nodes.last().unwrap()
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        Self { epsilon, ..self.clone() }
    }
}

/// The basis function `(nu/nu_l)^{2 eps nu_l^2} exp(-eps [nu^2 - nu_l^2 + (s - t_k)^2])`
/// centred at `(t_k, nu_l)`.
pub fn basis_theta(s: f64, nu: f64, center: (f64, f64), eps: f64) -> f64 {
    let (t_k, nu_l) = center;
    let dt = s - t_k;
    if nu_l == 0.0 {
        return (-eps * (nu * nu + dt * dt)).exp();
    }
    if nu == 0.0 {
        return 0.0;
    }
    let p = 2.0 * eps * nu_l * nu_l;
    (p * (nu / nu_l).ln() - eps * (nu * nu - nu_l * nu_l + dt * dt)).exp()
}

/// Coefficients of `J = a0 int_0^inf nu^{a1} exp(-a2 nu^2) I_{b-1/2}(a3 nu) d nu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerCoeffs {
    pub a0: C64,
    pub a1: f64,
    pub a2: C64,
    pub a3: C64,
}

impl InnerCoeffs {
    /// `a4 = (a1 + b + 1/2) / 2`
    pub fn a4(&self, b: f64) -> f64 {
        0.5 * (self.a1 + b + 0.5)
    }

    /// `a5 = a3^2 / (4 a2)`
    pub fn a5(&self) -> C64 {
        self.a3 * self.a3 / (4.0 * self.a2)
    }
}

/// Closed form of `J`:
/// `a0 2^{-b-1/2} a3^{b-1/2} a2^{-a4} Gamma(a4) / Gamma(b + 1/2) M(a4; b + 1/2; a5)`.
pub fn inner_j_closed(c: &InnerCoeffs, b: f64) -> Result<C64, LmvfError> {
    if !(c.a2.re > 0.0) {
        return Err(LmvfError::NonConvergent { re_a2: c.a2.re, s: f64::NAN, xi: f64::NAN });
    }
    let a4 = c.a4(b);
    let a5 = c.a5();
    let ln = -(b + 0.5) * LN_2 + (b - 0.5) * c.a3.ln() - a4 * c.a2.ln() + ln_gamma(a4) - ln_gamma(b + 0.5)
        + kummer_m_scaled(a4, b + 0.5, a5)?.ln()
        + a5;
    Ok(c.a0 * ln.exp())
}

/// `J` with `M(b + 3/2; b + 1/2; a5)` in place of `M(a4; b + 1/2; a5)` and the
/// power `nu^{a1}` taken as `nu^{b + 5/2}`, times the correction factor `c1`.
pub fn inner_j_approx(c: &InnerCoeffs, b: f64, c1: C64) -> C64 {
    let a5 = c.a5();
    let ln = -(b + 0.5) * LN_2 + (b - 0.5) * c.a3.ln() - (b + 1.5) * c.a2.ln() + ln_gamma(b + 1.5) - ln_gamma(b + 0.5);
    c.a0 * c1 * ln.exp() * (1.0 + 2.0 * a5 / (1.0 + 2.0 * b)) * a5.exp()
}

/// Nodes and weights of the time integral over `(t, T]`. Node 0 is `s = t`
/// and always carries weight 0: the kernel collapses to a real delta term
/// there, which has no imaginary part.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeNodes {
    pub s: Vec<f64>,
    pub w: Vec<f64>,
}

impl TimeNodes {
    pub fn new(t: f64, maturity: f64, n: usize, rule: TimeRule) -> Self {
        let len = maturity - t;
        let h = 1.0 / (n - 1) as f64;
        match rule {
            TimeRule::Simpson => {
                let s = (0..n).map(|i| if i == n - 1 { maturity } else { t + len * i as f64 * h }).collect();
                let mut w = simpson_weights(n, len);
                w[0] = 0.0;
                TimeNodes { s, w }
            }
            TimeRule::SqrtSimpson => {
                let s = (0..n).map(|i| if i == n - 1 { maturity } else { t + len * (i as f64 * h).powi(2) }).collect();
                let wu = simpson_weights(n, 1.0);
                let mut w: Vec<f64> = (0..n).map(|i| wu[i] * 2.0 * len * i as f64 * h).collect();
                // F(u) = 2 len u W(s(u)) at u = 0 from a polynomial through the next nodes
                let w0 = wu[0] * 2.0 * len;
                if n > 3 {
                    w[1] += w0 * 3.0 * h;
                    w[2] -= w0 * 3.0 * 2.0 * h;
                    w[3] += w0 * 3.0 * h;
                } else {
                    w[1] += w0 * 2.0 * h;
                    w[2] -= w0 * 2.0 * h;
                }
                w[0] = 0.0;
                TimeNodes { s, w }
            }
        }
    }
}

/// Shared inputs for evaluating the `s`-integrated inner integrals of one
/// evaluation time `t` against every basis function.
#[derive(Debug, Clone)]
pub struct RowPlan {
    pub t: f64,
    pub vs: Vec<f64>,
    pub nodes: TimeNodes,
    /// `ln(L(s) / L(t))` per node
    pub log_barrier_ratio: Vec<f64>,
    pub t_centers: Vec<f64>,
    pub nu_centers: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub kummer: KummerPath,
    pub b: f64,
}

impl RowPlan {
    pub fn new(
        t: f64,
        vs: Vec<f64>,
        grid: &CollocationGrid,
        epsilons: Vec<f64>,
        contract: &BarrierContract,
        b: f64,
        simpson_nodes: usize,
        rule: TimeRule,
        kummer: KummerPath,
    ) -> Self {
        let nodes = TimeNodes::new(t, contract.maturity, simpson_nodes, rule);
        let l_t = contract.barrier.eval(t);
        let log_barrier_ratio = nodes.s.iter().map(|&s| (contract.barrier.eval(s) / l_t).ln()).collect();
        RowPlan {
            t,
            vs,
            nodes,
            log_barrier_ratio,
            t_centers: grid.t_nodes.clone(),
            nu_centers: grid.v_nodes.iter().map(|v| v.sqrt()).collect(),
            epsilons,
            kummer,
            b,
        }
    }

    /// Output length of [`RowPlan::eval`]: `eps x v x k x l`.
    pub fn dim(&self) -> usize {
        self.epsilons.len() * self.vs.len() * self.t_centers.len() * self.nu_centers.len()
    }

    pub fn out_index(&self, e: usize, iv: usize, k: usize, l: usize) -> usize {
        ((e * self.vs.len() + iv) * self.t_centers.len() + k) * self.nu_centers.len() + l
    }

    /// `int_t^T ds I_kl(t, v, s; -i xi) e^{-i xi y(t)}` for every `(eps, v, k, l)`.
    pub fn eval(&self, model: &HestonModel, xi: f64, out: &mut [C64]) -> Result<(), LmvfError> {
        let cache = build_cache(model, SqrtP::minus(xi), &self.nodes.s)?;
        self.eval_with_cache(&cache, out)
    }

    pub fn eval_with_cache(&self, cache: &TransformCache, out: &mut [C64]) -> Result<(), LmvfError> {
        out.iter_mut().for_each(|o| *o = C64::new(0.0, 0.0));
        let b = self.b;
        let c = b + 0.5;
        let xi = cache.xi();
        let n_s = self.nodes.s.len();
        let (n_k, n_l) = (self.t_centers.len(), self.nu_centers.len());
        let lg_c = ln_gamma(c);
        let mut x = vec![C64::new(0.0, 0.0); n_s * n_l];
        for (e, &eps) in self.epsilons.iter().enumerate() {
            let a4: Vec<f64> = self.nu_centers.iter().map(|nu| b + 1.5 + eps * nu * nu).collect();
            let lg_a4: Vec<f64> = a4.iter().map(|&a| ln_gamma(a)).collect();
            let pre_l: Vec<f64> = self.nu_centers.iter().map(|nu| eps * nu * nu * (1.0 - (nu * nu).ln())).collect();
            for (iv, &v) in self.vs.iter().enumerate() {
                for j in 1..n_s {
                    let s = self.nodes.s[j];
                    let q = cache.q_scaled(0, j);
                    let ln_q = q.ln();
                    let dlg = cache.log_g(j) - cache.log_g(0);
                    let alpha_s = cache.alpha(j);
                    let a2 = eps + alpha_s + 0.5 / q;
                    if !(a2.re > 0.0) {
                        return Err(LmvfError::NonConvergent { re_a2: a2.re, s, xi });
                    }
                    let ln_a2 = a2.ln();
                    let ln_a3 = 0.5 * v.ln() - dlg - ln_q;
                    let a5 = (2.0 * ln_a3).exp() / (4.0 * a2);
                    let zeta_v = v * (-2.0 * dlg).exp() * 0.5 / q;
                    let base = C64::new(0.0, xi * self.log_barrier_ratio[j]) + cache.beta(0) - cache.beta(j)
                        + cache.alpha(0) * v
                        - (b + 0.5) * (ln_q + LN_2)
                        - lg_c
                        - zeta_v * (eps + alpha_s) / a2;
                    for l in 0..n_l {
                        let tail = match self.kummer {
                            KummerPath::Exact => -a4[l] * ln_a2 + lg_a4[l] + kummer_m_scaled(a4[l], c, a5)?.ln(),
                            KummerPath::Approx => {
                                let nu2 = self.nu_centers[l] * self.nu_centers[l];
                                -(b + 1.5) * ln_a2 + ln_gamma(b + 1.5) + (1.0 + 2.0 * a5 / (1.0 + 2.0 * b)).ln() + eps * nu2 * v.ln()
                            }
                        };
                        x[j * n_l + l] = (base + pre_l[l] + tail).exp();
                    }
                }
                // the s = t limit of the phased inner integral is Theta(t, sqrt v) v, real
                for l in 0..n_l {
                    let nu2 = self.nu_centers[l] * self.nu_centers[l];
                    x[l] = C64::new(v * (pre_l[l] + eps * nu2 * v.ln() - eps * v).exp(), 0.0);
                }
                for k in 0..n_k {
                    let t_k = self.t_centers[k];
                    for j in 0..n_s {
                        let w = self.nodes.w[j];
                        if w == 0.0 {
                            continue;
                        }
                        let d = self.nodes.s[j] - t_k;
                        let wt = w * (-eps * d * d).exp();
                        let o = self.out_index(e, iv, k, 0);
                        for l in 0..n_l {
                            out[o + l] += wt * x[j * n_l + l];
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Dense collocation system `A c = f` with one right-hand side per strike.
#[derive(Debug, Clone)]
pub struct LmvfSystem {
    pub grid: CollocationGrid,
    pub matrix: DMatrix<f64>,
    pub rhs: Vec<DVector<f64>>,
    pub stats: AssemblyStats,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssemblyStats {
    pub xi_evaluations: usize,
    pub max_err_est: f64,
    pub seconds: f64,
}

impl LmvfSystem {
    /// `max |A_ij - A_ji| / max |A_ij|`
    pub fn asymmetry(&self) -> f64 {
        let a = &self.matrix;
        let n = a.nrows();
        let mut d = 0.0f64;
        for i in 0..n {
            for j in 0..i {
                d = d.max((a[(i, j)] - a[(j, i)]).abs());
            }
        }
        d / a.amax()
    }
}

/// Matrices for several shape parameters on the same nodes; one `xi`
/// integration per row serves every `eps`.
pub fn assemble_matrices(
    grid: &CollocationGrid,
    epsilons: &[f64],
    model: &HestonModel,
    contract: &BarrierContract,
    quad: &QuadConfig,
    cfg: &LmvfConfig,
) -> Result<(Vec<DMatrix<f64>>, AssemblyStats), LmvfError> {
    let start = std::time::Instant::now();
    let n = grid.dim();
    let (n_t, n_v) = (grid.t_nodes.len(), grid.v_nodes.len());
    let b = model.b();
    let mut mats: Vec<DMatrix<f64>> = epsilons
        .iter()
        .map(|&eps| {
            let g = grid.with_epsilon(eps);
            DMatrix::from_fn(n, n, |i, j| {
                let (t_i, nu_i) = g.center(i);
                basis_theta(t_i, nu_i, g.center(j), eps)
            })
        })
        .collect();
    let mut stats = AssemblyStats::default();
    let rows: Vec<usize> = (0..n_t).filter(|&k| grid.t_nodes[k] < contract.maturity).collect();
    let results: Vec<Result<(usize, QuadResult, RowPlan), LmvfError>> = {
        use rayon::prelude::*;
        rows.par_iter()
            .map(|&kp| {
                let plan = RowPlan::new(
                    grid.t_nodes[kp],
                    grid.v_nodes.clone(),
                    grid,
                    epsilons.to_vec(),
                    contract,
                    b,
                    quad.simpson_nodes,
                    cfg.time_rule,
                    cfg.kummer,
                );
                let r = integrate_row_im(&plan, model, quad).map_err(|e| LmvfError::Entry { row: kp * n_v, source: Box::new(e) })?;
                Ok((kp, r, plan))
            })
            .collect()
    };
    for r in results {
        let (kp, q, plan) = r?;
        stats.xi_evaluations += q.evaluations;
        stats.max_err_est = stats.max_err_est.max(q.err_est);
        for (e, m) in mats.iter_mut().enumerate() {
            for lp in 0..n_v {
                let row = grid.index(kp, lp);
                for k in 0..n_t {
                    for l in 0..n_v {
                        m[(row, grid.index(k, l))] += q.value[plan.out_index(e, lp, k, l)].re;
                    }
                }
            }
        }
    }
    stats.seconds = start.elapsed().as_secs_f64();
    Ok((mats, stats))
}

/// `(1/pi) int_0^upsilon xi Im[row integrand] d xi` for every component of a row plan.
pub fn integrate_row_im(plan: &RowPlan, model: &HestonModel, quad: &QuadConfig) -> Result<QuadResult, LmvfError> {
    let dim = plan.dim();
    let mut buf = vec![C64::new(0.0, 0.0); dim];
    let mut failure = None;
    let r = integrate_gk_vec(
        |xi, out: &mut [C64]| {
            if xi == 0.0 || failure.is_some() {
                out.iter_mut().for_each(|o| *o = C64::new(0.0, 0.0));
                return;
            }
            match plan.eval(model, xi, &mut buf) {
                Ok(()) => {
                    for (o, v) in out.iter_mut().zip(&buf) {
                        *o = C64::new(xi * v.im / PI, 0.0);
                    }
                }
                Err(e) => failure = Some(e),
            }
        },
        dim,
        0.0,
        quad.upsilon,
        16,
        quad,
        None,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(r?)
}

/// One matrix entry two ways: through the closed-form inner integral, and by
/// adaptive quadrature of the Green's-function kernel against the basis
/// function in `v'`. Both share the `s` rule and the outer `xi` nodes.
/// Returns `(closed, brute)` without the diagonal basis term.
pub fn reference_entry(
    grid: &CollocationGrid,
    model: &HestonModel,
    contract: &BarrierContract,
    quad: &QuadConfig,
    cfg: &LmvfConfig,
    row: usize,
    col: usize,
) -> Result<(f64, f64), LmvfError> {
    let (t, nu) = grid.center(row);
    if t >= contract.maturity {
        return Ok((0.0, 0.0));
    }
    let v = nu * nu;
    let eps = grid.epsilon;
    let b = model.b();
    let plan = RowPlan::new(t, vec![v], grid, vec![eps], contract, b, quad.simpson_nodes, cfg.time_rule, cfg.kummer);
    let n_l = grid.v_nodes.len();
    let (k, l) = (col / n_l, col % n_l);
    let center = grid.center(col);
    let y_t = crate::model::log_barrier(contract, t);
    let inner = QuadConfig { rel_tol: 1e-9, abs_tol: 1e-15, ..*quad };
    let nu_max = (v + 40.0 / eps).sqrt().max(2.0);
    let mut buf = vec![C64::new(0.0, 0.0); plan.dim()];
    let mut failure = None;
    let r = integrate_gk_vec(
        |xi, out: &mut [C64]| {
            out[0] = C64::new(0.0, 0.0);
            out[1] = C64::new(0.0, 0.0);
            if xi == 0.0 || failure.is_some() {
                return;
            }
            let cache = match build_cache(model, SqrtP::minus(xi), &plan.nodes.s) {
                Ok(c) => c,
                Err(e) => {
                    failure = Some(LmvfError::from(e));
                    return;
                }
            };
            if let Err(e) = plan.eval_with_cache(&cache, &mut buf) {
                failure = Some(e);
                return;
            }
            let mut brute = C64::new(0.0, 0.0);
            for (j, (&s, &w)) in plan.nodes.s.iter().zip(&plan.nodes.w).enumerate() {
                if w == 0.0 {
                    continue;
                }
                let y_s = crate::model::log_barrier(contract, s);
                let basis = |vp: f64| basis_theta(s, vp.sqrt(), center, eps);
                match crate::greens::kernel_frak_v_integral(&cache, 0, j, v, y_s, b, &basis, nu_max, &inner) {
                    Ok(q) => brute += w * q,
                    Err(e) => {
                        failure = Some(LmvfError::Entry { row, source: Box::new(LmvfError::Reference(e.to_string())) });
                        return;
                    }
                }
            }
            brute *= C64::from_polar(1.0, -xi * y_t);
            out[0] = C64::new(xi * buf[plan.out_index(0, 0, k, l)].im / PI, 0.0);
            out[1] = C64::new(xi * brute.im / PI, 0.0);
        },
        2,
        0.0,
        quad.upsilon,
        16,
        quad,
        None,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let r = r?;
    Ok((r.value[0].re, r.value[1].re))
}

/// Right-hand sides `f(t_k', v_l') = (1/pi) int_0^upsilon xi Im[P1 e^{-i xi y(t)}] d xi` for each strike.
pub fn assemble_rhs(
    grid: &CollocationGrid,
    model: &HestonModel,
    contracts: &[BarrierContract],
    quad: &QuadConfig,
) -> Result<Vec<DVector<f64>>, LmvfError> {
    let n = grid.dim();
    let n_v = grid.v_nodes.len();
    let dim = n * contracts.len();
    let ys: Vec<(f64, Vec<f64>)> = contracts
        .iter()
        .map(|c| {
            let y_mat = crate::model::log_barrier(c, c.maturity);
            (y_mat, grid.t_nodes.iter().map(|&t| crate::model::log_barrier(c, t)).collect())
        })
        .collect();
    let mut failure = None;
    let r = integrate_gk_vec(
        |xi, out: &mut [C64]| {
            if xi == 0.0 || failure.is_some() {
                out.iter_mut().for_each(|o| *o = C64::new(0.0, 0.0));
                return;
            }
            let cache = match build_cache(model, SqrtP::minus(xi), &grid.t_nodes) {
                Ok(c) => c,
                Err(e) => {
                    failure = Some(LmvfError::from(e));
                    return;
                }
            };
            for (ic, c) in contracts.iter().enumerate() {
                let (y_mat, ref y_t) = ys[ic];
                for i in 0..n {
                    let k = i / n_v;
                    let v = grid.v_nodes[i % n_v];
                    let p = crate::pricer::p1(&cache, k, v, c.strike, y_mat) * C64::from_polar(1.0, -xi * y_t[k]);
                    out[ic * n + i] = C64::new(xi * p.im / PI, 0.0);
                }
            }
        },
        dim,
        0.0,
        quad.upsilon,
        16,
        quad,
        None,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let r = r?;
    Ok((0..contracts.len()).map(|ic| DVector::from_iterator(n, (0..n).map(|i| r.value[ic * n + i].re))).collect())
}

/// Solution of the collocation system for one strike.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryGradient {
    pub grid: CollocationGrid,
    pub coeffs: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub solver: SolverKind,
}

impl BoundaryGradient {
    pub fn zero(grid: CollocationGrid) -> Self {
        let n = grid.dim();
        Self { grid, coeffs: DVector::zeros(n), residual: 0.0, iterations: 0, solver: SolverKind::Lu }
    }

    /// `Phi(t, v) = sum c_kl Theta_kl(t, sqrt v)`
    pub fn eval(&self, t: f64, v: f64) -> f64 {
        let nu = v.max(0.0).sqrt();
        (0..self.grid.dim()).map(|j| self.coeffs[j] * basis_theta(t, nu, self.grid.center(j), self.grid.epsilon)).sum()
    }
}

/// MINRES for a symmetric operator; returns the iterate and the residual history.
pub fn minres(a: &DMatrix<f64>, rhs: &DVector<f64>, tol: f64, max_iter: usize) -> (DVector<f64>, Vec<f64>) {
    let n = rhs.len();
    let mut x = DVector::zeros(n);
    let bnorm = rhs.norm();
    let mut history = vec![1.0];
    if bnorm == 0.0 {
        return (x, history);
    }
    let mut v_old = DVector::zeros(n);
    let mut v = rhs / bnorm;
    let mut beta = bnorm;
    let mut w_old = DVector::<f64>::zeros(n);
    let mut w_older = DVector::<f64>::zeros(n);
    let (mut c_old, mut s_old, mut c, mut s) = (1.0, 0.0, 1.0, 0.0);
    let mut eta = bnorm;
    for _ in 0..max_iter {
        let av = a * &v;
        let alpha = v.dot(&av);
        let mut v_new = av - alpha * &v - beta * &v_old;
        let beta_new = v_new.norm();
        // apply the two previous rotations to the new column of T
        let delta = c * alpha - c_old * s * beta;
        let rho2 = s * alpha + c_old * c * beta;
        let rho3 = s_old * beta;
        let rho1 = (delta * delta + beta_new * beta_new).sqrt();
        if rho1 == 0.0 {
            break;
        }
        let (c_new, s_new) = (delta / rho1, beta_new / rho1);
        let w = (&v - rho3 * &w_older - rho2 * &w_old) / rho1;
        x += c_new * eta * &w;
        eta *= -s_new;
        history.push(eta.abs() / bnorm);
        w_older = w_old;
        w_old = w;
        c_old = c;
        s_old = s;
        c = c_new;
        s = s_new;
        if eta.abs() / bnorm <= tol || beta_new == 0.0 {
            break;
        }
        v_new /= beta_new;
        v_old = v;
        v = v_new;
        beta = beta_new;
    }
    (x, history)
}

fn relative_residual(a: &DMatrix<f64>, x: &DVector<f64>, rhs: &DVector<f64>) -> f64 {
    let nb = rhs.norm();
    if nb == 0.0 {
        return (a * x).norm();
    }
    (a * x - rhs).norm() / nb
}

/// LU with partial pivoting; adds a small ridge when the factorization is singular.
pub fn solve_lu(a: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>, LmvfError> {
    if let Some(x) = a.clone().lu().solve(rhs) {
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    let n = a.nrows();
    let ridge = 1e-12 * a.trace().abs() / n as f64;
    log::warn!("LU singular, retrying with ridge {ridge:e}");
    let shifted = a + DMatrix::identity(n, n) * ridge;
    shifted.lu().solve(rhs).ok_or(LmvfError::Singular)
}

/// Rows of the collocation system that enter the solve: every node with
/// `t_k < T`. At maturity the boundary gradient blows up like `(T - t)^{-1/2}`
/// and its right-hand side only measures the truncation bound of the
/// frequency integral.
pub fn active_rows(grid: &CollocationGrid) -> Vec<usize> {
    let tm = grid.maturity();
    (0..grid.dim()).filter(|&j| grid.center(j).0 < tm).collect()
}

/// Relative shift added to the normal matrix by [`SolverKind::Lu`].
pub const LU_RIDGE: f64 = 1e-10;

/// Least-squares solve of the active rows of `A c = f`.
///
/// Both solvers work on the normal equations `A_r^T A_r c = A_r^T f_r`.
/// MINRES stops at relative residual `tol`, which regularizes the nearly
/// rank deficient system; LU factors the normal matrix shifted by
/// [`LU_RIDGE`] times its mean diagonal.
pub fn solve(system: &LmvfSystem, rhs_index: usize, kind: SolverKind, tol: f64) -> Result<BoundaryGradient, LmvfError> {
    let rows = active_rows(&system.grid);
    let a = system.matrix.select_rows(&rows);
    let f = system.rhs[rhs_index].select_rows(&rows);
    let n = a.ncols();
    let normal = a.transpose() * &a;
    let g = a.transpose() * &f;
    let grid = system.grid.clone();
    let (x, iterations) = match kind {
        SolverKind::Minres => {
            let (x, hist) = minres(&normal, &g, tol, 10 * n);
            (x, hist.len() - 1)
        }
        SolverKind::Lu => {
            let ridge = LU_RIDGE * normal.trace() / n as f64;
            (solve_lu(&(normal + DMatrix::identity(n, n) * ridge), &g)?, 0)
        }
    };
    if x.iter().any(|v| !v.is_finite()) {
        return Err(LmvfError::Singular);
    }
    let residual = relative_residual(&a, &x, &f);
    Ok(BoundaryGradient { grid, coeffs: x, residual, iterations, solver: kind })
}

/// The positivity function of the basis' Fourier transform in `nu`:
///
/// `F(w) = 1/sqrt(2 pi) + A eps^{-1/2 - eps nu_l^2} Gamma(1/2 + eps nu_l^2) M(1/2 + eps nu_l^2; 1/2; -w^2/(4 eps))`,
/// `A = exp(-eps [dt^2 - nu_l^2]) nu_l^{-2 eps nu_l^2} / sqrt(2 pi)`, with `dt = t - t_k`.
pub fn positivity_f(omega: f64, nu_l: f64, eps: f64, dt: f64) -> Result<f64, LmvfError> {
    let p = eps * nu_l * nu_l;
    let ln_a = -eps * (dt * dt - nu_l * nu_l) - 2.0 * p * nu_l.ln() - 0.5 * (2.0 * PI).ln();
    let x = C64::new(-omega * omega / (4.0 * eps), 0.0);
    let m = kummer_m(0.5 + p, 0.5, x)?;
    let term = (ln_a - (0.5 + p) * eps.ln() + ln_gamma(0.5 + p)).exp() * m.re;
    Ok(1.0 / (2.0 * PI).sqrt() + term)
}

/// Evaluates [`positivity_f`] on the lattice `omega in [0, 20]`,
/// `nu_l in (0, 2]`, `eps in (0, 5]` (at `dt = w`) and returns the minimum.
pub fn positivity_lattice_min(w: f64) -> Result<f64, LmvfError> {
    let mut min = f64::INFINITY;
    for io in 0..=40 {
        let omega = 20.0 * io as f64 / 40.0;
        for inu in 1..=20 {
            let nu_l = 2.0 * inu as f64 / 20.0;
            for ie in 1..=20 {
                let eps = 5.0 * ie as f64 / 20.0;
                min = min.min(positivity_f(omega, nu_l, eps, w)?);
            }
        }
    }
    Ok(min)
}
