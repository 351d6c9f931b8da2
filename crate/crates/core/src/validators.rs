//! Independent references: a two-factor ADI finite-difference solver for the
//! barrier Put and a constant-parameter FFT pricer for the vanilla Put.

use crate::model::{BarrierContract, HestonModel, ModelParams};
use crate::pricer::{Method, PriceCell, PriceTable};
use num_complex::Complex64 as C64;
use rustfft::FftPlanner;
use serde::Serialize;
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FdError {
    #[error("grid must have at least 4 strictly increasing nodes per direction")]
    InvalidGrid,
    #[error("time-dependent barriers are not supported by the FD reference")]
    MovingBarrier,
    #[error("scheme unstable at step {step} of {steps}: max |U| = {max_abs:e}")]
    Unstable { step: usize, steps: usize, max_abs: f64 },
    #[error("point ({s}, {v}) outside the grid")]
    OutOfGrid { s: f64, v: f64 },
}

/// Constant-parameter Heston set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HestonConst {
    pub kappa: f64,
    pub theta: f64,
    pub sigma: f64,
    pub rho: f64,
    pub v0: f64,
    pub r: f64,
    pub q: f64,
}

impl HestonConst {
    /// Parameters frozen at `t = 0`.
    pub fn from_params(p: &ModelParams, v0: f64) -> Self {
        Self { kappa: p.kappa0(), theta: p.theta0, sigma: p.sigma0, rho: p.rho0, v0, r: p.r, q: p.q }
    }

    pub fn model(&self) -> HestonModel {
        let m = 2.0 * self.kappa * self.theta / (self.sigma * self.sigma);
        HestonModel::constant(m, self.theta, self.sigma, self.rho, self.r, self.q).expect("valid constant set")
    }
}

/// Characteristic function of `ln(S_T / S_0)`, in the rotation-count-free form
/// (`g = (b - d)/(b + d)` with `e^{-dT}`).
pub fn heston_cf(u: C64, p: &HestonConst, t: f64) -> C64 {
    let i = C64::i();
    let s2 = p.sigma * p.sigma;
    let bb = p.kappa - p.rho * p.sigma * i * u;
    let d = (bb * bb + s2 * (i * u + u * u)).sqrt();
    let g = (bb - d) / (bb + d);
    let e = (-d * t).exp();
    let c = (p.r - p.q) * i * u * t + p.kappa * p.theta / s2 * ((bb - d) * t - 2.0 * ((1.0 - g * e) / (1.0 - g)).ln());
    let dd = (bb - d) / s2 * (1.0 - e) / (1.0 - g * e);
    (c + dd * p.v0).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FftConfig {
    pub nodes: usize,
    /// spacing of the frequency grid
    pub eta: f64,
    /// damping exponent of the call
    pub alpha: f64,
}

impl Default for FftConfig {
    fn default() -> Self {
        Self { nodes: 8192, eta: 0.25, alpha: 1.5 }
    }
}

/// Damped-call FFT with Simpson weights; the log-strike grid is centred on
/// `ln K` so no interpolation is needed. The Put follows from parity.
pub fn fft_vanilla_put(p: &HestonConst, spot: f64, strike: f64, maturity: f64, cfg: &FftConfig) -> f64 {
    let call = fft_vanilla_call(p, spot, strike, maturity, cfg);
    call - spot * (-p.q * maturity).exp() + strike * (-p.r * maturity).exp()
}

pub fn fft_vanilla_call(p: &HestonConst, spot: f64, strike: f64, maturity: f64, cfg: &FftConfig) -> f64 {
    let n = cfg.nodes;
    let eta = cfg.eta;
    let a = cfg.alpha;
    let lambda = 2.0 * PI / (n as f64 * eta);
    let k0 = strike.ln() - lambda * (n / 2) as f64;
    let disc = (-p.r * maturity).exp();
    let i = C64::i();
    let mut buf: Vec<C64> = (0..n)
        .map(|j| {
            let v = eta * j as f64;
            let u = C64::new(v, -(a + 1.0));
            let cf = heston_cf(u, p, maturity) * (i * u * spot.ln()).exp();
            let psi = disc * cf / C64::new(a * a + a - v * v, (2.0 * a + 1.0) * v);
            let w = if j == 0 { 1.0 / 3.0 } else if j % 2 == 1 { 4.0 / 3.0 } else { 2.0 / 3.0 };
            (-i * v * k0).exp() * psi * eta * w
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let k = k0 + lambda * (n / 2) as f64;
    (-a * k).exp() / PI * buf[n / 2].re
}

/// Sizes and stretching of the FD grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FdConfig {
    pub n_s: usize,
    pub n_v: usize,
    pub v_max: f64,
    /// right spot edge as a multiple of `max(K, S0)`
    pub s_max_factor: f64,
    pub dt_max: f64,
    pub rannacher_steps: usize,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self { n_s: 76, n_v: 79, v_max: 5.0, s_max_factor: 8.0, dt_max: 0.01, rannacher_steps: 2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdGrid {
    pub s_nodes: Vec<f64>,
    pub v_nodes: Vec<f64>,
    pub dt: f64,
    pub steps: usize,
    pub rannacher_steps: usize,
}

/// `n` nodes on `[lo, hi]` clustered around `centre` with width `c`; `centre`
/// itself is a node when it lies inside.
pub fn sinh_nodes(lo: f64, hi: f64, centre: f64, c: f64, n: usize) -> Vec<f64> {
    let a = ((lo - centre) / c).asinh();
    let b = ((hi - centre) / c).asinh();
    let mut u: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let mut hit = None;
    // shift the uniform grid so that one node maps exactly onto the centre
    if lo < centre && centre < hi {
        let uc = -a / (b - a);
        let j = (uc * (n - 1) as f64).round().clamp(1.0, (n - 2) as f64);
        let shift = uc - j / (n - 1) as f64;
        hit = Some(j as usize);
        let h = 1.0 / (n - 1) as f64;
        for (i, x) in u.iter_mut().enumerate().skip(1).take(n - 2) {
            // the shift fades towards both ends so the edges stay put
            let fade = if (i as f64) < j { i as f64 / j } else { (n - 1 - i) as f64 / ((n - 1) as f64 - j) };
            *x = i as f64 * h + shift * fade;
        }
    }
    let mut s: Vec<f64> = u.iter().map(|&x| centre + c * (a + (b - a) * x).sinh()).collect();
    s[0] = lo;
    s[n - 1] = hi;
    if let Some(j) = hit {
        s[j] = centre;
    }
    s
}

impl FdGrid {
    /// Spot nodes on `[s_min, s_max]` clustered at the spot, variance nodes on
    /// `[0, v_max]` clustered at `v0`, and `dt = T / ceil(T / dt_max)`.
    pub fn build(cfg: &FdConfig, spot: f64, v0: f64, strike: f64, s_min: f64, maturity: f64) -> Result<Self, FdError> {
        if cfg.n_s < 4 || cfg.n_v < 4 || !(maturity > 0.0) || !(spot > s_min) {
            return Err(FdError::InvalidGrid);
        }
        let s_max = cfg.s_max_factor * strike.max(spot);
        let mut c = spot / 5.0;
        let mut s_nodes = sinh_nodes(s_min, s_max, spot, c, cfg.n_s);
        // at least ten nodes within 10% of the spot
        while s_nodes.iter().filter(|&&s| (s - spot).abs() <= 0.1 * spot).count() < 10 && c > 1e-3 * spot {
            c *= 0.8;
            s_nodes = sinh_nodes(s_min, s_max, spot, c, cfg.n_s);
        }
        let v_nodes = sinh_nodes(0.0, cfg.v_max, v0, cfg.v_max / 50.0, cfg.n_v);
        let steps = (maturity / cfg.dt_max - 1e-9).ceil().max(1.0) as usize;
        let grid = Self { s_nodes, v_nodes, dt: maturity / steps as f64, steps, rannacher_steps: cfg.rannacher_steps };
        if grid.s_nodes.windows(2).any(|w| w[1] <= w[0]) || grid.v_nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FdError::InvalidGrid);
        }
        Ok(grid)
    }
}

/// Value on the left spot edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeftEdge {
    /// knocked out: zero
    Barrier,
    /// `S = 0`: discounted strike
    Origin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdSolution {
    pub s_nodes: Vec<f64>,
    pub v_nodes: Vec<f64>,
    /// row-major in `v`: `values[j * n_s + i]`
    pub values: Vec<f64>,
    pub steps: usize,
}

fn lagrange4(nodes: &[f64], x: f64) -> (usize, [f64; 4]) {
    let n = nodes.len();
    let k = nodes.partition_point(|&s| s <= x).clamp(2, n - 2) - 2;
    let mut w = [1.0; 4];
    for a in 0..4 {
        for b in 0..4 {
            if a != b {
                w[a] *= (x - nodes[k + b]) / (nodes[k + a] - nodes[k + b]);
            }
        }
    }
    (k, w)
}

impl FdSolution {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.s_nodes.len() + i]
    }

    /// Tensor 4-point Lagrange interpolation.
    pub fn price_at(&self, s: f64, v: f64) -> Result<f64, FdError> {
        let (s0, s1) = (self.s_nodes[0], *self.s_nodes.last().unwrap());
        let (v0, v1) = (self.v_nodes[0], *self.v_nodes.last().unwrap());
        if !(s0..=s1).contains(&s) || !(v0..=v1).contains(&v) {
            return Err(FdError::OutOfGrid { s, v });
        }
        let (ks, ws) = lagrange4(&self.s_nodes, s);
        let (kv, wv) = lagrange4(&self.v_nodes, v);
        let mut p = 0.0;
        for (b, wvb) in wv.iter().enumerate() {
            for (a, wsa) in ws.iter().enumerate() {
                p += wvb * wsa * self.at(ks + a, kv + b);
            }
        }
        Ok(p)
    }
}

/// Three-point weights for the first and second derivative at interior node `i`.
fn stencil(x: &[f64], i: usize) -> ([f64; 3], [f64; 3]) {
    let h0 = x[i] - x[i - 1];
    let h1 = x[i + 1] - x[i];
    let d1 = [-h1 / (h0 * (h0 + h1)), (h1 - h0) / (h0 * h1), h0 / (h1 * (h0 + h1))];
    let d2 = [2.0 / (h0 * (h0 + h1)), -2.0 / (h0 * h1), 2.0 / (h1 * (h0 + h1))];
    (d1, d2)
}

/// One-directional operator stored as three diagonals per line, plus one
/// extra entry in the first and last rows for one-sided stencils.
#[derive(Debug, Clone)]
struct LineOp {
    lo: Vec<f64>,
    di: Vec<f64>,
    up: Vec<f64>,
    first_extra: f64,
    last_extra: f64,
}

impl LineOp {
    fn zeros(n: usize) -> Self {
        Self { lo: vec![0.0; n], di: vec![0.0; n], up: vec![0.0; n], first_extra: 0.0, last_extra: 0.0 }
    }

    fn apply(&self, u: &[f64], out: &mut [f64]) {
        let n = u.len();
        for i in 0..n {
            let mut y = self.di[i] * u[i];
            if i > 0 {
                y += self.lo[i] * u[i - 1];
            }
            if i + 1 < n {
                y += self.up[i] * u[i + 1];
            }
            out[i] = y;
        }
        out[0] += self.first_extra * u[2];
        out[n - 1] += self.last_extra * u[n - 3];
    }

    /// Solves `(I - k L) x = d` in place.
    fn solve_shifted(&self, k: f64, d: &mut [f64]) {
        let n = d.len();
        let mut a: Vec<f64> = self.lo.iter().map(|x| -k * x).collect();
        let mut b: Vec<f64> = self.di.iter().map(|x| 1.0 - k * x).collect();
        let mut c: Vec<f64> = self.up.iter().map(|x| -k * x).collect();
        // fold the one-sided entries into the tridiagonal part
        let e0 = -k * self.first_extra;
        if e0 != 0.0 {
            let f = e0 / c[1];
            b[0] -= f * a[1];
            c[0] -= f * b[1];
            d[0] -= f * d[1];
        }
        let en = -k * self.last_extra;
        if en != 0.0 {
            let f = en / a[n - 2];
            b[n - 1] -= f * c[n - 2];
            a[n - 1] -= f * b[n - 2];
            d[n - 1] -= f * d[n - 2];
        }
        for i in 1..n {
            let m = a[i] / b[i - 1];
            b[i] -= m * c[i - 1];
            d[i] -= m * d[i - 1];
        }
        d[n - 1] /= b[n - 1];
        for i in (0..n - 1).rev() {
            d[i] = (d[i] - c[i] * d[i + 1]) / b[i];
        }
    }
}

/// Split operators `A0` (mixed), `A1` (spot), `A2` (variance) with frozen coefficients.
struct Operators {
    ns: usize,
    nv: usize,
    /// per `v` row: spot operator on the interior spot nodes `1..ns-1`
    a1: Vec<LineOp>,
    /// per interior spot column: variance operator on all `v` nodes
    a2: Vec<LineOp>,
    /// mixed-derivative weights per interior node
    a0: Vec<[f64; 9]>,
    /// left-edge coupling of `A1` per `v` row (coefficient of `U[0]` at node 1)
    a1_left: Vec<f64>,
}

#[derive(Clone, Copy)]
struct Coeffs {
    kappa: f64,
    theta: f64,
    sigma: f64,
    rho: f64,
    r: f64,
    q: f64,
}

impl Operators {
    fn new(s: &[f64], v: &[f64], c: Coeffs) -> Self {
        let (ns, nv) = (s.len(), v.len());
        let mi = ns - 2;
        let mut a1 = Vec::with_capacity(nv);
        let mut a1_left = Vec::with_capacity(nv);
        for &vj in v {
            let mut op = LineOp::zeros(mi);
            let mut left = 0.0;
            for i in 1..ns - 1 {
                let (d1, d2) = stencil(s, i);
                let diff = 0.5 * vj * s[i] * s[i];
                let conv = (c.r - c.q) * s[i];
                let w: Vec<f64> = (0..3).map(|k| diff * d2[k] + conv * d1[k]).collect();
                let r = i - 1;
                if i > 1 {
                    op.lo[r] = w[0];
                } else {
                    left = w[0];
                }
                op.di[r] = w[1] - 0.5 * c.r;
                if i < ns - 2 {
                    op.up[r] = w[2];
                }
            }
            a1.push(op);
            a1_left.push(left);
        }
        let mut a2 = Vec::with_capacity(mi);
        let mut col = LineOp::zeros(nv);
        for j in 0..nv {
            let drift = c.kappa * (c.theta - v[j]);
            if j == 0 {
                // second-order forward difference; no diffusion at v = 0
                let (h1, h2) = (v[1] - v[0], v[2] - v[1]);
                col.di[0] = drift * -(2.0 * h1 + h2) / (h1 * (h1 + h2)) - 0.5 * c.r;
                col.up[0] = drift * (h1 + h2) / (h1 * h2);
                col.first_extra = drift * -h1 / (h2 * (h1 + h2));
            } else if j == nv - 1 {
                // outflow: drift points inward, backward difference, no diffusion
                let (h1, h2) = (v[j] - v[j - 1], v[j - 1] - v[j - 2]);
                col.di[j] = drift * (2.0 * h1 + h2) / (h1 * (h1 + h2)) - 0.5 * c.r;
                col.lo[j] = -drift * (h1 + h2) / (h1 * h2);
                col.last_extra = drift * h1 / (h2 * (h1 + h2));
            } else {
                let (d1, d2) = stencil(v, j);
                let diff = 0.5 * c.sigma * c.sigma * v[j];
                col.lo[j] = diff * d2[0] + drift * d1[0];
                col.di[j] = diff * d2[1] + drift * d1[1] - 0.5 * c.r;
                col.up[j] = diff * d2[2] + drift * d1[2];
            }
        }
        for _ in 0..mi {
            a2.push(col.clone());
        }
        let mut a0 = vec![[0.0; 9]; ns * nv];
        for j in 1..nv - 1 {
            let (dv, _) = stencil(v, j);
            for i in 1..ns - 1 {
                let (ds, _) = stencil(s, i);
                let m = c.rho * c.sigma * v[j] * s[i];
                let w = &mut a0[j * ns + i];
                for b in 0..3 {
                    for a in 0..3 {
                        w[b * 3 + a] = m * dv[b] * ds[a];
                    }
                }
            }
        }
        Self { ns, nv, a1, a2, a0, a1_left }
    }

    fn apply_a0(&self, u: &[f64], out: &mut [f64]) {
        let ns = self.ns;
        out.iter_mut().for_each(|o| *o = 0.0);
        for j in 1..self.nv - 1 {
            for i in 1..ns - 1 {
                let w = &self.a0[j * ns + i];
                let mut y = 0.0;
                for b in 0..3 {
                    for a in 0..3 {
                        y += w[b * 3 + a] * u[(j + b - 1) * ns + i + a - 1];
                    }
                }
                out[j * ns + i] = y;
            }
        }
    }

    fn apply_a1(&self, u: &[f64], out: &mut [f64]) {
        let ns = self.ns;
        out.iter_mut().for_each(|o| *o = 0.0);
        for j in 0..self.nv {
            let row = &u[j * ns..(j + 1) * ns];
            let o = &mut out[j * ns + 1..(j + 1) * ns - 1];
            self.a1[j].apply(&row[1..ns - 1], o);
            o[0] += self.a1_left[j] * row[0];
        }
    }

    fn apply_a2(&self, u: &[f64], out: &mut [f64]) {
        let (ns, nv) = (self.ns, self.nv);
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut line = vec![0.0; nv];
        let mut res = vec![0.0; nv];
        for i in 1..ns - 1 {
            for j in 0..nv {
                line[j] = u[j * ns + i];
            }
            self.a2[i - 1].apply(&line, &mut res);
            for j in 0..nv {
                out[j * ns + i] = res[j];
            }
        }
    }

    /// `(I - k A1) y = rhs` on the interior, with the edge values of `y` given.
    fn solve_a1(&self, k: f64, rhs: &mut [f64], left: f64) {
        let ns = self.ns;
        for j in 0..self.nv {
            let row = &mut rhs[j * ns..(j + 1) * ns];
            row[1] += k * self.a1_left[j] * left;
            self.a1[j].solve_shifted(k, &mut row[1..ns - 1]);
            row[0] = left;
            row[ns - 1] = 0.0;
        }
    }

    fn solve_a2(&self, k: f64, rhs: &mut [f64]) {
        let (ns, nv) = (self.ns, self.nv);
        let mut line = vec![0.0; nv];
        for i in 1..ns - 1 {
            for j in 0..nv {
                line[j] = rhs[j * ns + i];
            }
            self.a2[i - 1].solve_shifted(k, &mut line);
            for j in 0..nv {
                rhs[j * ns + i] = line[j];
            }
        }
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += a * x);
}

/// Backward induction of the Put PDE in `(S, v)` with the
/// Hundsdorfer-Verwer scheme (`theta = 1/2`). The first `rannacher_steps`
/// steps are each replaced by two half steps of the Douglas scheme with
/// `theta = 1`. Coefficients are frozen at the midpoint of every step.
pub fn fd_solve_with(
    model: &HestonModel,
    strike: f64,
    maturity: f64,
    left: LeftEdge,
    grid: &FdGrid,
) -> Result<FdSolution, FdError> {
    let (s, v) = (&grid.s_nodes, &grid.v_nodes);
    let (ns, nv) = (s.len(), v.len());
    if ns < 4 || nv < 4 {
        return Err(FdError::InvalidGrid);
    }
    let n = ns * nv;
    let mut u = vec![0.0; n];
    for j in 0..nv {
        for i in 1..ns - 1 {
            u[j * ns + i] = (strike - s[i]).max(0.0);
        }
    }
    // accumulated discount for the left edge at S = 0
    let mut int_r = 0.0;
    let left_value = |int_r: f64| match left {
        LeftEdge::Barrier => 0.0,
        LeftEdge::Origin => strike * (-int_r).exp(),
    };
    for j in 0..nv {
        u[j * ns] = left_value(0.0);
    }
    let coeffs_at = |t: f64| Coeffs {
        kappa: model.kappa().eval(t),
        theta: model.theta().eval(t),
        sigma: model.sigma().eval(t),
        rho: model.rho().eval(t),
        r: model.r().eval(t),
        q: model.q().eval(t),
    };
    let (mut f0, mut f1, mut f2) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut y = vec![0.0; n];
    let bound = 1e3 * strike;
    for step in 0..grid.steps {
        let dt = grid.dt;
        let t_mid = maturity - (step as f64 + 0.5) * dt;
        let c = coeffs_at(t_mid.max(0.0));
        let ops = Operators::new(s, v, c);
        if step < grid.rannacher_steps {
            for _ in 0..2 {
                let h = 0.5 * dt;
                int_r += c.r * h;
                let lv = left_value(int_r);
                // Douglas, theta = 1
                ops.apply_a0(&u, &mut f0);
                ops.apply_a1(&u, &mut f1);
                ops.apply_a2(&u, &mut f2);
                for k in 0..n {
                    y[k] = u[k] + h * (f0[k] + f1[k] + f2[k]);
                }
                axpy(&mut y, -h, &f1);
                ops.solve_a1(h, &mut y, lv);
                axpy(&mut y, -h, &f2);
                ops.solve_a2(h, &mut y);
                u.copy_from_slice(&y);
            }
        } else {
            int_r += c.r * dt;
            let lv = left_value(int_r);
            let th = 0.5;
            ops.apply_a0(&u, &mut f0);
            ops.apply_a1(&u, &mut f1);
            ops.apply_a2(&u, &mut f2);
            let fu: Vec<f64> = (0..n).map(|k| f0[k] + f1[k] + f2[k]).collect();
            let mut y0: Vec<f64> = (0..n).map(|k| u[k] + dt * fu[k]).collect();
            y.copy_from_slice(&y0);
            axpy(&mut y, -th * dt, &f1);
            ops.solve_a1(th * dt, &mut y, lv);
            axpy(&mut y, -th * dt, &f2);
            ops.solve_a2(th * dt, &mut y);
            // corrector around Y2 = y
            ops.apply_a0(&y, &mut f0);
            ops.apply_a1(&y, &mut f1);
            ops.apply_a2(&y, &mut f2);
            for k in 0..n {
                y0[k] += 0.5 * dt * (f0[k] + f1[k] + f2[k] - fu[k]);
            }
            let mut z = y0;
            axpy(&mut z, -th * dt, &f1);
            ops.solve_a1(th * dt, &mut z, lv);
            axpy(&mut z, -th * dt, &f2);
            ops.solve_a2(th * dt, &mut z);
            u.copy_from_slice(&z);
        }
        let max_abs = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if !max_abs.is_finite() || max_abs > bound {
            return Err(FdError::Unstable { step: step + 1, steps: grid.steps, max_abs });
        }
    }
    Ok(FdSolution { s_nodes: s.clone(), v_nodes: v.clone(), values: u, steps: grid.steps })
}

/// Down-and-Out Put on a grid whose left edge is the (constant) barrier.
pub fn fd_solve(model: &HestonModel, contract: &BarrierContract, grid: &FdGrid) -> Result<FdSolution, FdError> {
    let l = contract.barrier.eval(0.0);
    let (lo, hi) = contract.barrier.range_on(contract.maturity);
    if lo != hi {
        return Err(FdError::MovingBarrier);
    }
    if (grid.s_nodes[0] - l).abs() > 1e-12 * l {
        return Err(FdError::InvalidGrid);
    }
    fd_solve_with(model, contract.strike, contract.maturity, LeftEdge::Barrier, grid)
}

/// FD Down-and-Out Put price at `(spot, v0)` with the default grid.
pub fn fd_down_out_put(model: &HestonModel, contract: &BarrierContract, spot: f64, v0: f64, cfg: &FdConfig) -> Result<f64, FdError> {
    let l = contract.barrier.eval(0.0);
    if spot <= l {
        return Ok(0.0);
    }
    let grid = FdGrid::build(cfg, spot, v0, contract.strike, l, contract.maturity)?;
    fd_solve(model, contract, &grid)?.price_at(spot, v0)
}

/// FD vanilla Put price with the left edge at `S = 0`.
pub fn fd_vanilla_put(model: &HestonModel, strike: f64, maturity: f64, spot: f64, v0: f64, cfg: &FdConfig) -> Result<f64, FdError> {
    let grid = FdGrid::build(cfg, spot, v0, strike, 0.0, maturity)?;
    fd_solve_with(model, strike, maturity, LeftEdge::Origin, &grid)?.price_at(spot, v0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorCell {
    pub strike: f64,
    pub maturity: f64,
    pub git: Option<f64>,
    pub fd: Option<f64>,
    /// `100 (GIT - FD) / FD`
    pub error_pct: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct ErrorReport {
    pub cells: Vec<ErrorCell>,
    pub max_abs_pct: f64,
    pub mean_abs_pct: f64,
}

/// Per-cell relative percentage error of `git` against `fd`.
pub fn cross_validate(git: &PriceTable, fd: &PriceTable) -> ErrorReport {
    let mut cells = Vec::new();
    for g in &git.cells {
        let f = fd.get(g.strike, g.maturity);
        let fd_price = f.and_then(|c| c.price);
        let error_pct = match (g.price, fd_price) {
            (Some(a), Some(b)) if b != 0.0 => Some(100.0 * (a - b) / b),
            (Some(a), Some(b)) if a == b => Some(0.0),
            _ => None,
        };
        let detail = [g.error.clone(), f.and_then(|c| c.error.clone())].into_iter().flatten().collect::<Vec<_>>().join("; ");
        cells.push(ErrorCell { strike: g.strike, maturity: g.maturity, git: g.price, fd: fd_price, error_pct, detail });
    }
    let errs: Vec<f64> = cells.iter().filter_map(|c| c.error_pct.map(f64::abs)).collect();
    let max_abs_pct = errs.iter().fold(0.0f64, |m, x| m.max(*x));
    let mean_abs_pct = if errs.is_empty() { 0.0 } else { errs.iter().sum::<f64>() / errs.len() as f64 };
    ErrorReport { cells, max_abs_pct, mean_abs_pct }
}

impl ErrorReport {
    /// CSV with header `strike,maturity,git,fd,error_pct,detail`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["strike", "maturity", "git", "fd", "error_pct", "detail"])?;
        let f = |x: Option<f64>| x.map(crate::pricer::format_sig6).unwrap_or_default();
        for c in &self.cells {
            wr.write_record([
                format!("{}", c.strike),
                format!("{}", c.maturity),
                f(c.git),
                f(c.fd),
                c.error_pct.map(|e| format!("{e:.2}")).unwrap_or_default(),
                c.detail.clone(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// FD table for a strike x maturity grid of Down-and-Out Puts with a constant barrier.
pub fn fd_table(
    params: &ModelParams,
    segments: usize,
    barrier: f64,
    spot: f64,
    v0: f64,
    strikes: &[f64],
    maturities: &[f64],
    cfg: &FdConfig,
) -> PriceTable {
    let mut table = PriceTable::default();
    for &t in maturities {
        let model = crate::model::build_model(params, t, segments);
        for &k in strikes {
            let start = std::time::Instant::now();
            let res = model
                .as_ref()
                .map_err(|e| e.to_string())
                .and_then(|m| {
                    let c = BarrierContract::down_out(k, t, barrier).map_err(|e| e.to_string())?;
                    fd_down_out_put(m, &c, spot, v0, cfg).map_err(|e| e.to_string())
                });
            let seconds = start.elapsed().as_secs_f64();
            let (price, error) = match res {
                Ok(p) => (Some(p), None),
                Err(e) => (None, Some(e)),
            };
            table.cells.push(PriceCell { strike: k, maturity: t, price, method: Method::Fd, seconds, error });
        }
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;

    fn anchor() -> HestonConst {
        HestonConst { kappa: 0.9, theta: 0.1, sigma: 0.3, rho: -0.7, v0: 0.5, r: 0.02, q: 0.01 }
    }

    #[test]
    fn cf_identities() {
        let p = anchor();
        assert!((heston_cf(C64::new(0.0, 0.0), &p, 1.0) - 1.0).norm() < 1e-14);
        let fwd = heston_cf(C64::new(0.0, -1.0), &p, 2.0);
        assert!((fwd - ((p.r - p.q) * 2.0).exp()).norm() < 1e-12);
        for u in [0.1, 1.0, 7.0, 40.0] {
            assert!(heston_cf(C64::new(u, 0.0), &p, 10.0).norm() <= 1.0 + 1e-14);
        }
    }

    #[test]
    fn fft_parity_and_limits() {
        let p = anchor();
        let cfg = FftConfig::default();
        let (s, k, t) = (60.0, 70.0, 0.5);
        let c = fft_vanilla_call(&p, s, k, t, &cfg);
        let put = fft_vanilla_put(&p, s, k, t, &cfg);
        assert!((c - put - (s * (-p.q * t).exp() - k * (-p.r * t).exp())).abs() < 1e-6);
        // deep in the money, short dated
        let t = 0.01;
        let put = fft_vanilla_put(&p, 60.0, 200.0, t, &cfg);
        let intrinsic = 200.0 * (-p.r * t).exp() - 60.0 * (-p.q * t).exp();
        assert!((put / intrinsic - 1.0).abs() < 1e-3);
    }

    #[test]
    fn sinh_grid_hits_centre() {
        let s = sinh_nodes(40.0, 720.0, 60.0, 12.0, 76);
        assert_eq!(s.len(), 76);
        assert!(s.windows(2).all(|w| w[1] > w[0]));
        assert!(s.iter().any(|&x| (x - 60.0).abs() < 1e-12));
        let g = FdGrid::build(&FdConfig::default(), 60.0, 0.5, 90.0, 40.0, 1.0 / 24.0).unwrap();
        assert!(g.s_nodes.iter().filter(|&&x| (x - 60.0).abs() <= 6.0).count() >= 10);
        assert_eq!(g.s_nodes[0], 40.0);
        assert_eq!(g.steps, 5);
        assert!(g.v_nodes.iter().any(|&x| (x - 0.5).abs() < 1e-12));
    }

    #[test]
    fn lagrange_reproduces_cubics() {
        let nodes: Vec<f64> = (0..10).map(|i| (i as f64).powf(1.3)).collect();
        let f = |x: f64| 1.0 - 2.0 * x + 0.5 * x * x - 0.1 * x * x * x;
        for x in [0.3, 2.2, 9.5, 19.0] {
            let (k, w) = lagrange4(&nodes, x);
            let p: f64 = (0..4).map(|a| w[a] * f(nodes[k + a])).sum();
            assert!((p - f(x)).abs() < 1e-9 * f(x).abs().max(1.0));
        }
    }

    #[test]
    fn shifted_solve_with_extra_entries() {
        let n = 6;
        let mut op = LineOp::zeros(n);
        for i in 0..n {
            op.di[i] = -2.0 - i as f64 * 0.1;
            if i > 0 {
                op.lo[i] = 0.7;
            }
            if i + 1 < n {
                op.up[i] = 0.9;
            }
        }
        op.first_extra = 0.3;
        op.last_extra = -0.4;
        let x: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
        let mut lx = vec![0.0; n];
        op.apply(&x, &mut lx);
        let k = 0.37;
        let mut d: Vec<f64> = x.iter().zip(&lx).map(|(x, l)| x - k * l).collect();
        op.solve_shifted(k, &mut d);
        for i in 0..n {
            assert!((d[i] - x[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn fd_payoff_and_barrier_column() {
        let model = anchor().model();
        let c = BarrierContract::down_out(60.0, 0.02, 40.0).unwrap();
        let g = FdGrid::build(&FdConfig::default(), 60.0, 0.5, 60.0, 40.0, 0.02).unwrap();
        let sol = fd_solve(&model, &c, &g).unwrap();
        for j in 0..g.v_nodes.len() {
            assert_eq!(sol.at(0, j), 0.0);
        }
        // small undershoot behind the payoff kink is the scheme tolerance
        assert!(sol.values.iter().all(|&x| x > -1e-5 * 60.0));
        let mut zero = g.clone();
        zero.steps = 0;
        let sol = fd_solve(&model, &c, &zero).unwrap();
        for (i, &s) in g.s_nodes.iter().enumerate().skip(1).take(g.s_nodes.len() - 2) {
            assert_eq!(sol.at(i, 3), (60.0 - s).max(0.0));
        }
    }

    #[test]
    fn cross_validate_identical_tables() {
        let cell = |p| PriceCell { strike: 80.0, maturity: 0.5, price: Some(p), method: Method::Fd, seconds: 0.0, error: None };
        let t = PriceTable { cells: vec![cell(3.0)] };
        let r = cross_validate(&t, &t);
        assert_eq!(r.cells[0].error_pct, Some(0.0));
        assert_eq!(r.max_abs_pct, 0.0);
        let g = PriceTable { cells: vec![cell(3.3)] };
        assert!((cross_validate(&g, &t).cells[0].error_pct.unwrap() - 10.0).abs() < 1e-9);
    }
}
