//! Prices from the image-space solution.
//!
//! With `x = ln(S/K)` and `y(t) = ln(L(t)/K)` the Down-and-Out Put is
//!
//! `P = (2/pi) int_0^inf sin(xi (x - y)) Im[Ps(-i xi) e^{-i xi y}] d xi`,
//!
//! where `Ps = P1 + P2`, `P1` is the barrier-free image and
//! `P2 = -int_t^T ds sum c_kl I_kl(s)` carries the boundary gradient.

use crate::lmvf::{
    assemble_matrices, assemble_rhs, solve, BoundaryGradient, CollocationGrid, LmvfConfig, LmvfError, LmvfSystem, RowPlan,
    TimeRule,
};
use crate::model::{build_model, log_barrier, BarrierContract, MarketState, ModelError, ModelParams};
use crate::oscquad::{integrate_gk_vec, QuadConfig, QuadError};
use crate::transform::{build_cache, SqrtP, TransformCache};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::time::Instant;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PricerError {
    #[error("price residue {price} is below -0.01 K (K = {strike})")]
    NegativePrice { price: f64, strike: f64 },
    #[error("strikes and maturities must be sorted ascending")]
    Unsorted,
    #[error(transparent)]
    Lmvf(#[from] LmvfError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Quad(#[from] QuadError),
}

/// Image of the price at one `sqrt(p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImagePrice {
    pub p1: C64,
    pub p2: C64,
}

impl ImagePrice {
    pub fn ps(&self) -> C64 {
        self.p1 + self.p2
    }
    pub fn phase(&self) -> f64 {
        self.ps().arg()
    }
    pub fn modulus(&self) -> f64 {
        self.ps().norm()
    }
}

/// `P1 = K [(e^{-y(T) sp} - 1)/sp - (e^{-y(T)(sp - 1)} - 1)/(sp - 1)] e^{beta + alpha v}`
/// at grid index `i` of `cache`.
pub fn p1(cache: &TransformCache, i: usize, v: f64, strike: f64, y_mat: f64) -> C64 {
    let sp = cache.sqrtp.value();
    let first = if sp.norm() < 1e-8 { C64::new(-y_mat, 0.0) } else { expm1(-y_mat * sp) / sp };
    let second = expm1(-y_mat * (sp - 1.0)) / (sp - 1.0);
    strike * (first - second) * (cache.beta(i) + cache.alpha(i) * v).exp()
}

fn expm1(z: C64) -> C64 {
    if z.norm() < 1e-3 {
        z * (1.0 + z * (0.5 + z * (1.0 / 6.0 + z * (1.0 / 24.0 + z / 120.0))))
    } else {
        z.exp() - 1.0
    }
}

/// `P2(t, v; -i xi) = -int_t^T ds sum_kl c_kl I_kl(t, v, s)`.
pub fn p2(
    t: f64,
    v: f64,
    xi: f64,
    phi: &BoundaryGradient,
    contract: &BarrierContract,
    model: &crate::model::HestonModel,
    quad: &QuadConfig,
    cfg: &LmvfConfig,
) -> Result<C64, PricerError> {
    if t >= contract.maturity || phi.coeffs.iter().all(|c| *c == 0.0) {
        return Ok(C64::new(0.0, 0.0));
    }
    let plan = RowPlan::new(t, vec![v], &phi.grid, vec![phi.grid.epsilon], contract, model.b(), quad.simpson_nodes, TimeRule::Simpson, cfg.kummer);
    let mut out = vec![C64::new(0.0, 0.0); plan.dim()];
    plan.eval(model, xi, &mut out)?;
    let y_t = log_barrier(contract, t);
    let s: C64 = out.iter().zip(phi.coeffs.iter()).map(|(o, c)| *o * *c).sum();
    Ok(-s * C64::from_polar(1.0, xi * y_t))
}

/// Inversion integrand `(2/pi) sin(xi (x - y)) Im[Ps e^{-i xi y}]` in two algebraic
/// forms: the direct one and the polar one on the conjugate ray,
/// `-(1/pi) |Ps| [cos(phi - xi(x - 2y)) - cos(phi + xi x)]` with `phi = arg Ps(+i xi)`.
pub fn inversion_integrand_forms(ps: C64, xi: f64, x: f64, y: f64) -> (f64, f64) {
    let direct = 2.0 / PI * (xi * (x - y)).sin() * (ps * C64::from_polar(1.0, -xi * y)).im;
    let phase = ps.conj().arg();
    let polar = -ps.norm() / PI * ((phase - xi * (x - 2.0 * y)).cos() - (phase + xi * x).cos());
    (direct, polar)
}

/// Down-and-Out Put prices at `(S0, v0, t0)` for several strikes sharing one maturity.
/// `phis[i]` solves the integral equation for `contracts[i]`.
pub fn price_down_out_puts(
    market: &MarketState,
    model: &crate::model::HestonModel,
    contracts: &[BarrierContract],
    phis: &[BoundaryGradient],
    quad: &QuadConfig,
    cfg: &LmvfConfig,
) -> Result<Vec<f64>, PricerError> {
    if contracts.is_empty() {
        return Ok(vec![]);
    }
    let t0 = market.t0;
    let maturity = contracts[0].maturity;
    let grid = &phis[0].grid;
    let mut epsilons: Vec<f64> = Vec::new();
    let group: Vec<usize> = phis
        .iter()
        .map(|p| match epsilons.iter().position(|e| *e == p.grid.epsilon) {
            Some(i) => i,
            None => {
                epsilons.push(p.grid.epsilon);
                epsilons.len() - 1
            }
        })
        .collect();
    // Away from the barrier the inverted kernel vanishes like exp(-(x - y)^2 / (s - t)),
    // so plain Simpson in s is accurate; clustering nodes at s = t would only
    // demand xi far beyond the truncation bound.
    let plan = RowPlan::new(t0, vec![market.v0], grid, epsilons, &contracts[0], model.b(), quad.simpson_nodes, TimeRule::Simpson, cfg.kummer);
    let per_eps = grid.dim();
    let n = contracts.len();
    let x_minus_y = (market.spot / contracts[0].barrier.eval(t0)).ln();
    let ys: Vec<(f64, f64)> = contracts.iter().map(|c| (log_barrier(c, t0), log_barrier(c, maturity))).collect();
    if x_minus_y == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut buf = vec![C64::new(0.0, 0.0); plan.dim()];
    let mut failure = None;
    let r = integrate_gk_vec(
        |xi, out: &mut [C64]| {
            if xi == 0.0 || failure.is_some() {
                out.iter_mut().for_each(|o| *o = C64::new(0.0, 0.0));
                return;
            }
            let cache = match build_cache(model, SqrtP::minus(xi), &plan.nodes.s) {
                Ok(c) => c,
                Err(e) => {
                    failure = Some(PricerError::Lmvf(e.into()));
                    return;
                }
            };
            if let Err(e) = plan.eval_with_cache(&cache, &mut buf) {
                failure = Some(e.into());
                return;
            }
            let sw = (xi * x_minus_y).sin();
            for i in 0..n {
                let (y0, y_mat) = ys[i];
                let image = p1(&cache, 0, market.v0, contracts[i].strike, y_mat) * C64::from_polar(1.0, -xi * y0);
                let off = group[i] * per_eps;
                let inner: C64 = (0..per_eps).map(|j| buf[off + j] * phis[i].coeffs[j]).sum();
                out[i] = C64::new(2.0 / PI * sw * (image - inner).im, 0.0);
            }
        },
        n,
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
    contracts
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let p = r.value[i].re;
            if p < -0.01 * c.strike {
                Err(PricerError::NegativePrice { price: p, strike: c.strike })
            } else if p < 0.0 {
                log::warn!("clamping negative price {p:e} at K = {}", c.strike);
                Ok(0.0)
            } else {
                Ok(p)
            }
        })
        .collect()
}

/// Single-strike convenience wrapper around [`price_down_out_puts`].
pub fn price_down_out_put(
    market: &MarketState,
    model: &crate::model::HestonModel,
    contract: &BarrierContract,
    phi: &BoundaryGradient,
    quad: &QuadConfig,
    cfg: &LmvfConfig,
) -> Result<f64, PricerError> {
    Ok(price_down_out_puts(market, model, std::slice::from_ref(contract), std::slice::from_ref(phi), quad, cfg)?[0])
}

/// Down-and-In Put by parity with the vanilla Put.
pub fn price_down_in_put(down_out: f64, vanilla: f64) -> f64 {
    vanilla - down_out
}

/// Shape parameter per strike: a default with exceptions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonPolicy {
    pub default: f64,
    pub per_strike: Vec<(f64, f64)>,
}

impl EpsilonPolicy {
    /// 3 at K = 45, 5 at K = 50, 4 otherwise.
    pub fn reference() -> Self {
        Self { default: 4.0, per_strike: vec![(45.0, 3.0), (50.0, 5.0)] }
    }

    pub fn scalar(eps: f64) -> Self {
        Self { default: eps, per_strike: vec![] }
    }

    pub fn for_strike(&self, strike: f64) -> f64 {
        self.per_strike.iter().find(|(k, _)| (k - strike).abs() <= 1e-9 * strike.abs().max(1.0)).map_or(self.default, |p| p.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Git,
    Fd,
    Fft,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Git => "GIT",
            Method::Fd => "FD",
            Method::Fft => "FFT",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceCell {
    pub strike: f64,
    pub maturity: f64,
    pub price: Option<f64>,
    pub method: Method,
    pub seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct PriceTable {
    pub cells: Vec<PriceCell>,
}

/// `x` rounded to six significant digits, without exponent notation.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (5 - mag).max(0) as usize;
    format!("{x:.decimals$}")
}

impl PriceTable {
    pub fn get(&self, strike: f64, maturity: f64) -> Option<&PriceCell> {
        self.cells.iter().find(|c| c.strike == strike && c.maturity == maturity)
    }

    pub fn strikes(&self) -> Vec<f64> {
        let mut k: Vec<f64> = self.cells.iter().map(|c| c.strike).collect();
        k.sort_by(f64::total_cmp);
        k.dedup();
        k
    }

    pub fn maturities(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.cells.iter().map(|c| c.maturity).collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    }

    /// CSV with header `strike,maturity,price,method,seconds`; failed cells have an empty price.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["strike", "maturity", "price", "method", "seconds"])?;
        for c in &self.cells {
            wr.write_record([
                format!("{}", c.strike),
                format!("{}", c.maturity),
                c.price.map(format_sig6).unwrap_or_default(),
                c.method.to_string(),
                format!("{:.3}", c.seconds),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Everything the GIT pipeline needs besides the market and the contract grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GitSettings {
    pub params: ModelParams,
    pub barrier: f64,
    pub segments: usize,
    pub lmvf: LmvfConfig,
    pub epsilon: EpsilonPolicy,
    /// `None` picks the truncation bound by maturity
    pub upsilon: Option<f64>,
    pub quad: QuadConfig,
}

impl GitSettings {
    pub fn reference() -> Self {
        Self {
            params: ModelParams::reference(),
            barrier: 40.0,
            segments: 10,
            lmvf: LmvfConfig::default(),
            epsilon: EpsilonPolicy::reference(),
            upsilon: None,
            quad: QuadConfig::default(),
        }
    }

    pub fn quad_for(&self, maturity: f64) -> QuadConfig {
        let mut q = self.quad;
        q.upsilon = self.upsilon.unwrap_or_else(|| crate::oscquad::choose_upsilon(maturity));
        q
    }
}

/// Diagnostics of one maturity column.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnReport {
    pub maturity: f64,
    pub epsilons: Vec<f64>,
    pub assembly_seconds: f64,
    pub xi_evaluations: usize,
    pub asymmetry: Vec<f64>,
    pub residuals: Vec<f64>,
    pub solvers: Vec<String>,
    pub seconds: f64,
}

/// One maturity column: one assembly per distinct shape parameter, one solve
/// per strike, one inversion pass for all strikes.
pub fn price_column(
    market: &MarketState,
    settings: &GitSettings,
    strikes: &[f64],
    maturity: f64,
) -> Result<(Vec<f64>, Vec<BoundaryGradient>, ColumnReport), PricerError> {
    let start = Instant::now();
    let model = build_model(&settings.params, maturity, settings.segments)?;
    let quad = settings.quad_for(maturity);
    let contracts: Vec<BarrierContract> =
        strikes.iter().map(|&k| BarrierContract::down_out(k, maturity, settings.barrier)).collect::<Result<_, _>>()?;
    for c in &contracts {
        market.validate(c)?;
    }
    let mut epsilons: Vec<f64> = Vec::new();
    for &k in strikes {
        let e = settings.epsilon.for_strike(k);
        if !epsilons.contains(&e) {
            epsilons.push(e);
        }
    }
    let grid = CollocationGrid::from_config(&settings.lmvf, market.t0, maturity, market.v0, epsilons.first().copied().unwrap_or(4.0))?;
    if strikes.is_empty() {
        let report = ColumnReport {
            maturity,
            epsilons,
            assembly_seconds: 0.0,
            xi_evaluations: 0,
            asymmetry: vec![],
            residuals: vec![],
            solvers: vec![],
            seconds: 0.0,
        };
        return Ok((vec![], vec![], report));
    }
    let (mats, stats) = assemble_matrices(&grid, &epsilons, &model, &contracts[0], &quad, &settings.lmvf)?;
    let rhs = assemble_rhs(&grid, &model, &contracts, &quad)?;
    let mut phis = Vec::with_capacity(strikes.len());
    let mut asymmetry = Vec::new();
    let systems: Vec<LmvfSystem> = mats
        .into_iter()
        .zip(&epsilons)
        .map(|(m, &e)| LmvfSystem { grid: grid.with_epsilon(e), matrix: m, rhs: rhs.clone(), stats: stats.clone() })
        .collect();
    for s in &systems {
        asymmetry.push(s.asymmetry());
    }
    for (i, &k) in strikes.iter().enumerate() {
        let e = settings.epsilon.for_strike(k);
        let g = epsilons.iter().position(|x| *x == e).unwrap();
        phis.push(solve(&systems[g], i, settings.lmvf.solver, settings.lmvf.minres_tol)?);
    }
    let prices = price_down_out_puts(market, &model, &contracts, &phis, &quad, &settings.lmvf)?;
    let report = ColumnReport {
        maturity,
        epsilons,
        assembly_seconds: stats.seconds,
        xi_evaluations: stats.xi_evaluations,
        asymmetry,
        residuals: phis.iter().map(|p| p.residual).collect(),
        solvers: phis.iter().map(|p| format!("{:?}", p.solver).to_lowercase()).collect(),
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok((prices, phis, report))
}

/// Full strike x maturity table. Failures of one column are recorded in its
/// cells and do not stop the batch.
pub fn batch_price(
    market: &MarketState,
    settings: &GitSettings,
    strikes: &[f64],
    maturities: &[f64],
) -> Result<(PriceTable, Vec<ColumnReport>, Vec<(f64, Vec<BoundaryGradient>)>), PricerError> {
    if strikes.windows(2).any(|w| w[1] < w[0]) || maturities.windows(2).any(|w| w[1] < w[0]) {
        return Err(PricerError::Unsorted);
    }
    let mut table = PriceTable::default();
    let mut reports = Vec::new();
    let mut phis = Vec::new();
    if strikes.is_empty() {
        return Ok((table, reports, phis));
    }
    for &t in maturities {
        match price_column(market, settings, strikes, t) {
            Ok((prices, ph, rep)) => {
                let per_cell = rep.seconds / strikes.len() as f64;
                for (k, p) in strikes.iter().zip(prices) {
                    table.cells.push(PriceCell { strike: *k, maturity: t, price: Some(p), method: Method::Git, seconds: per_cell, error: None });
                }
                reports.push(rep);
                phis.push((t, ph));
            }
            Err(e) => {
                log::error!("maturity {t}: {e}");
                for k in strikes {
                    table.cells.push(PriceCell {
                        strike: *k,
                        maturity: t,
                        price: None,
                        method: Method::Git,
                        seconds: 0.0,
                        error: Some(e.to_string()),
                    });
                }
            }
        }
    }
    Ok((table, reports, phis))
}
