//! Time-dependent Heston model, barrier contract and piecewise-constant curves.
//!
//! The mean-reversion speed is never an input: it is derived from
//! `kappa(t) theta(t) / sigma(t)^2 = m / 2` so the constraint holds exactly.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("m = {0} < 1 is not supported (only the m >= 1 branch is implemented)")]
    UnsupportedBranch(f64),
    #[error("correlation {0} is outside [-1, 1]")]
    RhoOutOfRange(f64),
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error("barrier {barrier} at maturity must lie below the strike {strike}")]
    BarrierNotBelowStrike { barrier: f64, strike: f64 },
    #[error("spot {spot} must lie above the barrier {barrier}")]
    SpotBelowBarrier { spot: f64, barrier: f64 },
    #[error("segment count must be at least 1")]
    NoSegments,
}

/// Right-continuous piecewise-constant function of time.
///
/// `values[i]` holds on `[breakpoints[i], breakpoints[i + 1])`; the last value
/// is held beyond the final breakpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientCurve {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl CoefficientCurve {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self, ModelError> {
        if breakpoints.is_empty() || breakpoints[0] != 0.0 {
            return Err(ModelError::InvalidCurve("breakpoints must start at 0".into()));
        }
        if breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ModelError::InvalidCurve("breakpoints must be strictly increasing".into()));
        }
        if values.len() != breakpoints.len() {
            return Err(ModelError::InvalidCurve(format!(
                "{} values for {} intervals",
                values.len(),
                breakpoints.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidCurve("non-finite value".into()));
        }
        Ok(Self { breakpoints, values })
    }

    pub fn constant(value: f64) -> Self {
        Self { breakpoints: vec![0.0], values: vec![value] }
    }

    /// Samples `f` at the left endpoint of `n` equal segments of `[0, horizon]`.
    pub fn sampled(f: impl Fn(f64) -> f64, horizon: f64, n: usize) -> Self {
        let breakpoints: Vec<f64> = (0..n).map(|i| horizon * i as f64 / n as f64).collect();
        let values = breakpoints.iter().map(|&t| f(t)).collect();
        Self { breakpoints, values }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, t: f64) -> f64 {
        let idx = self.breakpoints.partition_point(|&b| b <= t);
        self.values[idx.saturating_sub(1)]
    }

    /// Largest and smallest value attained on `[0, horizon]`.
    pub fn range_on(&self, horizon: f64) -> (f64, f64) {
        self.breakpoints
            .iter()
            .zip(&self.values)
            .filter(|(b, _)| **b <= horizon)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, &v)| (lo.min(v), hi.max(v)))
    }

    fn map2(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        let breakpoints = merge_breakpoints(&[self, other]);
        let values = breakpoints.iter().map(|&t| f(self.eval(t), other.eval(t))).collect();
        Self { breakpoints, values }
    }
}

/// Evaluates a curve at `t` (free-function form).
pub fn eval_curve(curve: &CoefficientCurve, t: f64) -> f64 {
    curve.eval(t)
}

fn merge_breakpoints(curves: &[&CoefficientCurve]) -> Vec<f64> {
    let mut all: Vec<f64> = curves.iter().flat_map(|c| c.breakpoints.iter().copied()).collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    all
}

/// Coefficient values frozen on one piecewise-constant segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentParams {
    pub kappa: f64,
    pub theta: f64,
    pub sigma: f64,
    pub rho: f64,
    pub r: f64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HestonModel {
    m: f64,
    kappa: CoefficientCurve,
    theta: CoefficientCurve,
    sigma: CoefficientCurve,
    rho: CoefficientCurve,
    r: CoefficientCurve,
    q: CoefficientCurve,
    breakpoints: Vec<f64>,
}

impl HestonModel {
    /// Builds the model, deriving `kappa = m sigma^2 / (2 theta)` on the merged grid.
    pub fn new(
        m: f64,
        theta: CoefficientCurve,
        sigma: CoefficientCurve,
        rho: CoefficientCurve,
        r: CoefficientCurve,
        q: CoefficientCurve,
    ) -> Result<Self, ModelError> {
        if !(m >= 1.0) {
            return Err(ModelError::UnsupportedBranch(m));
        }
        if let Some(&v) = theta.values.iter().find(|v| **v <= 0.0) {
            return Err(ModelError::NonPositive { name: "theta", value: v });
        }
        if let Some(&v) = sigma.values.iter().find(|v| **v <= 0.0) {
            return Err(ModelError::NonPositive { name: "sigma", value: v });
        }
        if let Some(&v) = rho.values.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(ModelError::RhoOutOfRange(v));
        }
        let kappa = sigma.map2(&theta, |s, th| m * s * s / (2.0 * th));
        let breakpoints = merge_breakpoints(&[&kappa, &theta, &sigma, &rho, &r, &q]);
        Ok(Self { m, kappa, theta, sigma, rho, r, q, breakpoints })
    }

    /// Constant-coefficient model with `kappa` implied by `m`.
    pub fn constant(m: f64, theta: f64, sigma: f64, rho: f64, r: f64, q: f64) -> Result<Self, ModelError> {
        Self::new(
            m,
            CoefficientCurve::constant(theta),
            CoefficientCurve::constant(sigma),
            CoefficientCurve::constant(rho),
            CoefficientCurve::constant(r),
            CoefficientCurve::constant(q),
        )
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    /// Drift constant of the Bessel process, `b = m - 1/2`.
    pub fn b(&self) -> f64 {
        self.m - 0.5
    }

    pub fn kappa(&self) -> &CoefficientCurve {
        &self.kappa
    }
    pub fn theta(&self) -> &CoefficientCurve {
        &self.theta
    }
    pub fn sigma(&self) -> &CoefficientCurve {
        &self.sigma
    }
    pub fn rho(&self) -> &CoefficientCurve {
        &self.rho
    }
    pub fn r(&self) -> &CoefficientCurve {
        &self.r
    }
    pub fn q(&self) -> &CoefficientCurve {
        &self.q
    }

    /// Every time at which some coefficient changes value.
    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn params_at(&self, t: f64) -> SegmentParams {
        SegmentParams {
            kappa: self.kappa.eval(t),
            theta: self.theta.eval(t),
            sigma: self.sigma.eval(t),
            rho: self.rho.eval(t),
            r: self.r.eval(t),
            q: self.q.eval(t),
        }
    }
}

/// Raw parameters of the exponential test dependencies
/// `theta(t) = theta0 e^{-theta_k t}`, `sigma(t) = sigma0 e^{-sigma_k t}`, constant `rho`, `r`, `q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub m: f64,
    pub theta0: f64,
    pub sigma0: f64,
    pub rho0: f64,
    pub theta_k: f64,
    pub sigma_k: f64,
    pub r: f64,
    pub q: f64,
}

impl ModelParams {
    /// The parameter set of the reference test case.
    pub fn reference() -> Self {
        Self { m: 2.0, theta0: 0.1, sigma0: 0.3, rho0: -0.7, theta_k: 0.3, sigma_k: 0.2, r: 0.02, q: 0.01 }
    }

    /// Mean-reversion speed at `t = 0`.
    pub fn kappa0(&self) -> f64 {
        self.m * self.sigma0 * self.sigma0 / (2.0 * self.theta0)
    }
}

/// Samples the exponential dependencies onto `segments` equal pieces of `[0, maturity]`.
pub fn build_model(params: &ModelParams, maturity: f64, segments: usize) -> Result<HestonModel, ModelError> {
    if params.m < 1.0 || !params.m.is_finite() {
        return Err(ModelError::UnsupportedBranch(params.m));
    }
    if !(-1.0..=1.0).contains(&params.rho0) {
        return Err(ModelError::RhoOutOfRange(params.rho0));
    }
    if !(params.sigma0 > 0.0) {
        return Err(ModelError::NonPositive { name: "sigma0", value: params.sigma0 });
    }
    if !(params.theta0 > 0.0) {
        return Err(ModelError::NonPositive { name: "theta0", value: params.theta0 });
    }
    if !(maturity > 0.0) {
        return Err(ModelError::NonPositive { name: "maturity", value: maturity });
    }
    if segments == 0 {
        return Err(ModelError::NoSegments);
    }
    let p = *params;
    HestonModel::new(
        p.m,
        CoefficientCurve::sampled(|t| p.theta0 * (-p.theta_k * t).exp(), maturity, segments),
        CoefficientCurve::sampled(|t| p.sigma0 * (-p.sigma_k * t).exp(), maturity, segments),
        CoefficientCurve::constant(p.rho0),
        CoefficientCurve::constant(p.r),
        CoefficientCurve::constant(p.q),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptionKind {
    DownOutPut,
    DownInPut,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierContract {
    pub strike: f64,
    pub maturity: f64,
    pub barrier: CoefficientCurve,
    pub kind: OptionKind,
}

impl BarrierContract {
    pub fn new(strike: f64, maturity: f64, barrier: CoefficientCurve, kind: OptionKind) -> Result<Self, ModelError> {
        if !(strike > 0.0) {
            return Err(ModelError::NonPositive { name: "strike", value: strike });
        }
        if !(maturity > 0.0) {
            return Err(ModelError::NonPositive { name: "maturity", value: maturity });
        }
        let (lo, _) = barrier.range_on(maturity);
        if !(lo > 0.0) {
            return Err(ModelError::NonPositive { name: "barrier", value: lo });
        }
        let at_t = barrier.eval(maturity);
        if !(at_t < strike) {
            return Err(ModelError::BarrierNotBelowStrike { barrier: at_t, strike });
        }
        Ok(Self { strike, maturity, barrier, kind })
    }

    pub fn down_out(strike: f64, maturity: f64, barrier: f64) -> Result<Self, ModelError> {
        Self::new(strike, maturity, CoefficientCurve::constant(barrier), OptionKind::DownOutPut)
    }
}

/// `y(t) = ln(L(t) / K)`.
pub fn log_barrier(contract: &BarrierContract, t: f64) -> f64 {
    (contract.barrier.eval(t) / contract.strike).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketState {
    pub spot: f64,
    pub v0: f64,
    pub t0: f64,
}

impl MarketState {
    pub fn new(spot: f64, v0: f64) -> Self {
        Self { spot, v0, t0: 0.0 }
    }

    pub fn validate(&self, contract: &BarrierContract) -> Result<(), ModelError> {
        if !(self.v0 > 0.0) {
            return Err(ModelError::NonPositive { name: "v0", value: self.v0 });
        }
        let l = contract.barrier.eval(self.t0);
        if self.spot < l {
            return Err(ModelError::SpotBelowBarrier { spot: self.spot, barrier: l });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_lookup() {
        let c = CoefficientCurve::new(vec![0.0, 1.0], vec![0.3, 0.2]).unwrap();
        assert_eq!(eval_curve(&c, 0.5), 0.3);
        assert_eq!(eval_curve(&c, 1.0), 0.2);
        assert_eq!(eval_curve(&c, 5.0), 0.2);
        assert!(CoefficientCurve::new(vec![0.0, 1.0], vec![0.3]).is_err());
        assert!(CoefficientCurve::new(vec![0.1], vec![0.3]).is_err());
        assert!(CoefficientCurve::new(vec![0.0, 1.0, 1.0], vec![1.0; 3]).is_err());
    }

    #[test]
    fn reference_model() {
        let p = ModelParams::reference();
        let m = build_model(&p, 1.0, 10).unwrap();
        assert!((m.kappa().eval(0.0) - 0.9).abs() < 1e-15);
        assert!((p.kappa0() - 0.9).abs() < 1e-15);
        for &t in m.breakpoints() {
            let s = m.params_at(t);
            assert!((s.kappa * s.theta / (s.sigma * s.sigma) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_model_and_rejections() {
        let p = ModelParams { theta_k: 0.0, sigma_k: 0.0, ..ModelParams::reference() };
        let m = build_model(&p, 2.0, 10).unwrap();
        for t in [0.0, 0.7, 1.9, 3.0] {
            assert_eq!(m.kappa().eval(t), 2.0 * 0.09 / 0.2);
        }
        let bad = ModelParams { m: 0.5, ..ModelParams::reference() };
        assert_eq!(build_model(&bad, 1.0, 10), Err(ModelError::UnsupportedBranch(0.5)));
        let bad = ModelParams { rho0: -1.2, ..ModelParams::reference() };
        assert!(matches!(build_model(&bad, 1.0, 10), Err(ModelError::RhoOutOfRange(_))));
        let bad = ModelParams { sigma0: 0.0, ..ModelParams::reference() };
        assert!(matches!(build_model(&bad, 1.0, 10), Err(ModelError::NonPositive { .. })));
    }

    #[test]
    fn log_barrier_values() {
        let c = BarrierContract::down_out(60.0, 1.0, 40.0).unwrap();
        assert!((log_barrier(&c, 0.5) - (-0.405_465_108_108_164_4)).abs() < 1e-12);
        let c = BarrierContract::down_out(90.0, 1.0, 40.0).unwrap();
        assert!((log_barrier(&c, 0.0) - (-0.810_930_216_216_329)).abs() < 1e-12);
        assert!(matches!(
            BarrierContract::down_out(40.0, 1.0, 40.0),
            Err(ModelError::BarrierNotBelowStrike { .. })
        ));
    }

    #[test]
    fn market_validation() {
        let c = BarrierContract::down_out(60.0, 1.0, 40.0).unwrap();
        assert!(MarketState::new(60.0, 0.5).validate(&c).is_ok());
        assert!(MarketState::new(39.0, 0.5).validate(&c).is_err());
        assert!(MarketState::new(60.0, 0.0).validate(&c).is_err());
    }
}
