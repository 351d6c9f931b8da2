//! Batch entry point: JSON config in, CSV tables and a JSON run summary out.

use crate::lmvf::{
    basis_theta, positivity_lattice_min, reference_entry, BoundaryGradient, CollocationGrid, KummerPath, LmvfConfig,
    SolverKind, TimeRule,
};
use crate::model::{build_model, BarrierContract, MarketState, ModelParams};
use crate::oscquad::QuadConfig;
use crate::pricer::{batch_price, ColumnReport, EpsilonPolicy, GitSettings, Method, PriceCell, PriceTable};
use crate::validators::{cross_validate, fd_table, fft_vanilla_put, FdConfig, FftConfig, HestonConst};
use clap::Parser;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "heston-git", version, about = "Barrier Put prices under a time-dependent Heston model")]
pub struct Args {
    /// JSON run configuration
    #[arg(long)]
    pub config: PathBuf,
    /// comma-separated subset of fd, fft, reference_kernel
    #[arg(long, value_delimiter = ',')]
    pub validators: Option<Vec<Validator>>,
    /// output directory (overrides the config)
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// truncation bound of the frequency integrals for every maturity
    #[arg(long)]
    pub upsilon: Option<f64>,
    #[arg(long, value_enum)]
    pub solver: Option<SolverArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Validator {
    Fd,
    Fft,
    #[value(name = "reference_kernel")]
    ReferenceKernel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SolverArg {
    Minres,
    Lu,
}

impl From<SolverArg> for SolverKind {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::Minres => SolverKind::Minres,
            SolverArg::Lu => SolverKind::Lu,
        }
    }
}

/// `epsilon` is either one number or a map from strike (as a string) to
/// value, with an optional `"default"` entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsilonSpec {
    Scalar(f64),
    PerStrike(BTreeMap<String, f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        let q = QuadConfig::default();
        Self { rel_tol: q.rel_tol, abs_tol: q.abs_tol, max_subdivisions: q.max_subdivisions }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FdNumerics {
    pub n_s: usize,
    pub n_v: usize,
    pub v_max: f64,
    pub dt: f64,
    pub rannacher_steps: usize,
}

impl Default for FdNumerics {
    fn default() -> Self {
        let c = FdConfig::default();
        Self { n_s: c.n_s, n_v: c.n_v, v_max: c.v_max, dt: c.dt_max, rannacher_steps: c.rannacher_steps }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Numerics {
    pub n_t: usize,
    pub n_v: usize,
    pub v_m: f64,
    pub epsilon: Option<EpsilonSpec>,
    pub simpson_nodes: usize,
    pub solver: SolverKind,
    pub minres_tol: f64,
    pub upsilon: Option<f64>,
    pub kummer: KummerPath,
    pub time_rule: TimeRule,
    pub tolerances: Tolerances,
    pub fd: FdNumerics,
}

impl Default for Numerics {
    fn default() -> Self {
        let l = LmvfConfig::default();
        Self {
            n_t: l.n_t,
            n_v: l.n_v,
            v_m: l.v_m,
            epsilon: None,
            simpson_nodes: QuadConfig::default().simpson_nodes,
            solver: l.solver,
            minres_tol: l.minres_tol,
            upsilon: None,
            kummer: l.kummer,
            time_rule: l.time_rule,
            tolerances: Tolerances::default(),
            fd: FdNumerics::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Outputs {
    pub dir: PathBuf,
    /// write wall-clock seconds into the price tables; `false` writes zeros
    /// so that reruns are byte-identical
    pub timings: bool,
}

impl Default for Outputs {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), timings: true }
    }
}

fn default_segments() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    pub m: f64,
    pub theta0: f64,
    pub sigma0: f64,
    pub rho0: f64,
    pub theta_k: f64,
    pub sigma_k: f64,
    pub r: f64,
    pub q: f64,
    pub spot: f64,
    pub v0: f64,
    pub barrier: f64,
    pub strikes: Vec<f64>,
    pub maturities: Vec<f64>,
    #[serde(default = "default_segments")]
    pub segments: usize,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default)]
    pub validators: Vec<Validator>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("line {line}, column {column}: {msg}")]
    Syntax { line: usize, column: usize, msg: String },
    #[error("line {line}, column {column}: `{field}` {msg}")]
    Invalid { field: String, line: usize, column: usize, msg: String },
}

/// 1-based position of the first `"key"` in `src`, or (0, 0).
fn locate(src: &str, key: &str) -> (usize, usize) {
    let pat = format!("\"{key}\"");
    match src.find(&pat) {
        Some(off) => {
            let before = &src[..off];
            let line = before.matches('\n').count() + 1;
            let column = off - before.rfind('\n').map_or(0, |p| p + 1) + 1;
            (line, column)
        }
        None => (0, 0),
    }
}

impl RunConfig {
    pub fn reference() -> Self {
        let p = ModelParams::reference();
        Self {
            schema: 1,
            m: p.m,
            theta0: p.theta0,
            sigma0: p.sigma0,
            rho0: p.rho0,
            theta_k: p.theta_k,
            sigma_k: p.sigma_k,
            r: p.r,
            q: p.q,
            spot: 60.0,
            v0: 0.5,
            barrier: 40.0,
            strikes: vec![45.0, 50.0, 60.0, 70.0, 80.0, 90.0],
            maturities: vec![1.0 / 24.0, 1.0 / 12.0, 0.25, 0.5, 1.0, 2.0],
            segments: 10,
            numerics: Numerics::default(),
            outputs: Outputs::default(),
            validators: vec![],
        }
    }

    /// Parses and validates; positions refer to `src`.
    pub fn from_json(src: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(src)
            .map_err(|e| ConfigError::Syntax { line: e.line(), column: e.column(), msg: e.to_string() })?;
        cfg.validate(src)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let src = fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.display().to_string(), msg: e.to_string() })?;
        Self::from_json(&src)
    }

    fn validate(&self, src: &str) -> Result<(), ConfigError> {
        let bad = |field: &str, msg: String| {
            let (line, column) = locate(src, field);
            Err(ConfigError::Invalid { field: field.to_string(), line, column, msg })
        };
        if self.schema != 1 {
            return bad("schema", format!("must be 1, got {}", self.schema));
        }
        if !(self.m >= 1.0) {
            return bad("m", format!("must be >= 1, got {}", self.m));
        }
        for (name, v) in [("theta0", self.theta0), ("sigma0", self.sigma0), ("spot", self.spot), ("v0", self.v0), ("barrier", self.barrier)] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(name, format!("must be positive, got {v}"));
            }
        }
        if !(-1.0..=1.0).contains(&self.rho0) {
            return bad("rho0", format!("must lie in [-1, 1], got {}", self.rho0));
        }
        for (name, v) in [("theta_k", self.theta_k), ("sigma_k", self.sigma_k), ("r", self.r), ("q", self.q)] {
            if !v.is_finite() {
                return bad(name, "must be finite".into());
            }
        }
        if self.strikes.iter().any(|k| !(*k > self.barrier)) {
            return bad("strikes", format!("must all exceed the barrier {}", self.barrier));
        }
        if self.strikes.windows(2).any(|w| w[1] <= w[0]) {
            return bad("strikes", "must be strictly increasing".into());
        }
        if self.maturities.iter().any(|t| !(*t > 0.0)) || self.maturities.windows(2).any(|w| w[1] <= w[0]) {
            return bad("maturities", "must be positive and strictly increasing".into());
        }
        if self.spot < self.barrier {
            return bad("spot", format!("is below the barrier {}", self.barrier));
        }
        if self.segments == 0 {
            return bad("segments", "must be at least 1".into());
        }
        let n = &self.numerics;
        if n.n_t < 2 || n.n_v < 1 {
            return bad("n_t", "needs n_t >= 2 and n_v >= 1".into());
        }
        if !(n.v_m >= 0.0) || (n.n_v > 1 && !(n.v_m > 0.0)) || n.v_m >= self.v0 {
            return bad("v_m", format!("must lie in (0, v0), got {}", n.v_m));
        }
        if n.simpson_nodes < 3 || n.simpson_nodes % 2 == 0 {
            return bad("simpson_nodes", format!("must be odd and >= 3, got {}", n.simpson_nodes));
        }
        if !(n.minres_tol > 0.0) {
            return bad("minres_tol", "must be positive".into());
        }
        if let Some(u) = n.upsilon {
            if !(u > 0.0) {
                return bad("upsilon", "must be positive".into());
            }
        }
        let t = &n.tolerances;
        if !(t.rel_tol > 0.0) || !(t.abs_tol > 0.0) || t.max_subdivisions == 0 {
            return bad("tolerances", "must be positive".into());
        }
        if n.fd.n_s < 4 || n.fd.n_v < 4 || !(n.fd.v_max > self.v0) || !(n.fd.dt > 0.0) {
            return bad("fd", "needs n_s, n_v >= 4, v_max > v0 and dt > 0".into());
        }
        match &n.epsilon {
            Some(EpsilonSpec::Scalar(e)) if !(*e > 0.0) => return bad("epsilon", "must be positive".into()),
            Some(EpsilonSpec::PerStrike(m)) => {
                for (k, e) in m {
                    if k != "default" && k.parse::<f64>().is_err() {
                        return bad("epsilon", format!("key `{k}` is neither a strike nor \"default\""));
                    }
                    if !(*e > 0.0) {
                        return bad("epsilon", format!("value for `{k}` must be positive"));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn params(&self) -> ModelParams {
        ModelParams {
            m: self.m,
            theta0: self.theta0,
            sigma0: self.sigma0,
            rho0: self.rho0,
            theta_k: self.theta_k,
            sigma_k: self.sigma_k,
            r: self.r,
            q: self.q,
        }
    }

    pub fn epsilon_policy(&self) -> EpsilonPolicy {
        match &self.numerics.epsilon {
            None => EpsilonPolicy::reference(),
            Some(EpsilonSpec::Scalar(e)) => EpsilonPolicy::scalar(*e),
            Some(EpsilonSpec::PerStrike(m)) => EpsilonPolicy {
                default: m.get("default").copied().unwrap_or(EpsilonPolicy::reference().default),
                per_strike: m.iter().filter_map(|(k, e)| k.parse::<f64>().ok().map(|k| (k, *e))).collect(),
            },
        }
    }

    pub fn git_settings(&self) -> GitSettings {
        let n = &self.numerics;
        GitSettings {
            params: self.params(),
            barrier: self.barrier,
            segments: self.segments,
            lmvf: LmvfConfig {
                n_t: n.n_t,
                n_v: n.n_v,
                v_m: n.v_m,
                kummer: n.kummer,
                time_rule: n.time_rule,
                solver: n.solver,
                minres_tol: n.minres_tol,
            },
            epsilon: self.epsilon_policy(),
            upsilon: n.upsilon,
            quad: QuadConfig {
                upsilon: n.upsilon.unwrap_or(QuadConfig::default().upsilon),
                rel_tol: n.tolerances.rel_tol,
                abs_tol: n.tolerances.abs_tol,
                max_subdivisions: n.tolerances.max_subdivisions,
                simpson_nodes: n.simpson_nodes,
            },
        }
    }

    pub fn fd_config(&self) -> FdConfig {
        let f = &self.numerics.fd;
        FdConfig { n_s: f.n_s, n_v: f.n_v, v_max: f.v_max, dt_max: f.dt, rannacher_steps: f.rannacher_steps, ..FdConfig::default() }
    }

    pub fn market(&self) -> MarketState {
        MarketState::new(self.spot, self.v0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelCheck {
    pub maturity: f64,
    pub row: usize,
    pub col: usize,
    pub closed: f64,
    pub brute: f64,
    pub rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Positivity {
    pub w: f64,
    pub min_f: f64,
    pub all_positive: bool,
}

/// Contents of `run_meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMeta {
    pub version: &'static str,
    pub config: RunConfig,
    pub validators: Vec<Validator>,
    pub columns: Vec<ColumnReport>,
    pub git_seconds: f64,
    pub fd_seconds: Option<f64>,
    pub fft_seconds: Option<f64>,
    pub failed_cells: usize,
    pub max_abs_error_pct: Option<f64>,
    pub positivity: Positivity,
    pub reference_kernel: Vec<KernelCheck>,
    pub basis_lattice: BasisLattice,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BasisLattice {
    pub epsilon: f64,
    pub t_k: f64,
    pub nu_l: f64,
    pub peak: f64,
}

impl Default for BasisLattice {
    fn default() -> Self {
        Self { epsilon: 0.1, t_k: 1.0, nu_l: 10.0, peak: 0.0 }
    }
}

/// Long-format `t,nu,theta` samples of one basis function on `[0, 2 t_k] x [0, 2 nu_l]`.
pub fn basis_lattice(lat: &BasisLattice, n_t: usize, n_nu: usize) -> Vec<(f64, f64, f64)> {
    let mut out = Vec::with_capacity(n_t * n_nu);
    for i in 0..n_t {
        let t = 2.0 * lat.t_k * i as f64 / (n_t - 1) as f64;
        for j in 0..n_nu {
            let nu = 2.0 * lat.nu_l * j as f64 / (n_nu - 1) as f64;
            out.push((t, nu, basis_theta(t, nu, (lat.t_k, lat.nu_l), lat.epsilon)));
        }
    }
    out
}

fn write_file(dir: &Path, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<(), String>) -> Result<(), String> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::File::create(dir.join(name)).and_then(|mut h| h.write_all(&buf)).map_err(|e| format!("{name}: {e}"))
}

/// `maturity,strike,t,v,phi` on the collocation nodes of every solved system.
pub fn write_phi_surface<W: Write>(w: W, phis: &[(f64, Vec<BoundaryGradient>)], strikes: &[f64]) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["maturity", "strike", "t", "v", "phi"])?;
    for (t_mat, column) in phis {
        for (k, phi) in strikes.iter().zip(column) {
            let g: &CollocationGrid = &phi.grid;
            for &t in &g.t_nodes {
                for &v in &g.v_nodes {
                    wr.write_record([
                        format!("{t_mat}"),
                        format!("{k}"),
                        format!("{t}"),
                        format!("{v}"),
                        format!("{:.9e}", phi.eval(t, v)),
                    ])?;
                }
            }
        }
    }
    wr.flush()?;
    Ok(())
}

fn strip_timings(table: &mut PriceTable) {
    table.cells.iter_mut().for_each(|c| c.seconds = 0.0);
}

/// Runs a validated configuration and writes every artifact into `out_dir`.
/// Returns the summary and whether any numerical step failed.
pub fn run_config(cfg: &RunConfig, out_dir: &Path) -> Result<(RunMeta, bool), String> {
    fs::create_dir_all(out_dir).map_err(|e| format!("{}: {e}", out_dir.display()))?;
    let settings = cfg.git_settings();
    let market = cfg.market();
    let validators = cfg.validators.clone();
    let mut failed = false;

    let start = Instant::now();
    let (mut git, columns, phis) = batch_price(&market, &settings, &cfg.strikes, &cfg.maturities).map_err(|e| e.to_string())?;
    let git_seconds = start.elapsed().as_secs_f64();
    let failed_cells = git.cells.iter().filter(|c| c.price.is_none()).count();
    failed |= failed_cells > 0;
    if !cfg.outputs.timings {
        strip_timings(&mut git);
    }
    write_file(out_dir, "git_prices.csv", |b| git.write_csv(b).map_err(|e| e.to_string()))?;
    write_file(out_dir, "phi_surface.csv", |b| write_phi_surface(b, &phis, &cfg.strikes).map_err(|e| e.to_string()))?;

    let mut fd_seconds = None;
    let mut max_abs_error_pct = None;
    if validators.contains(&Validator::Fd) {
        let start = Instant::now();
        let mut fd = fd_table(&cfg.params(), cfg.segments, cfg.barrier, cfg.spot, cfg.v0, &cfg.strikes, &cfg.maturities, &cfg.fd_config());
        fd_seconds = Some(start.elapsed().as_secs_f64());
        failed |= fd.cells.iter().any(|c| c.price.is_none());
        if !cfg.outputs.timings {
            strip_timings(&mut fd);
        }
        write_file(out_dir, "fd_prices.csv", |b| fd.write_csv(b).map_err(|e| e.to_string()))?;
        let report = cross_validate(&git, &fd);
        max_abs_error_pct = Some(report.max_abs_pct);
        write_file(out_dir, "errors.csv", |b| report.write_csv(b).map_err(|e| e.to_string()))?;
    } else if failed_cells > 0 {
        let report = cross_validate(&git, &PriceTable::default());
        write_file(out_dir, "errors.csv", |b| report.write_csv(b).map_err(|e| e.to_string()))?;
    }

    let mut fft_seconds = None;
    if validators.contains(&Validator::Fft) {
        let start = Instant::now();
        let p = HestonConst::from_params(&cfg.params(), cfg.v0);
        let mut table = PriceTable::default();
        for &t in &cfg.maturities {
            for &k in &cfg.strikes {
                let s = Instant::now();
                let price = fft_vanilla_put(&p, cfg.spot, k, t, &FftConfig::default());
                let seconds = if cfg.outputs.timings { s.elapsed().as_secs_f64() } else { 0.0 };
                table.cells.push(PriceCell { strike: k, maturity: t, price: Some(price), method: Method::Fft, seconds, error: None });
            }
        }
        fft_seconds = Some(start.elapsed().as_secs_f64());
        write_file(out_dir, "fft_prices.csv", |b| table.write_csv(b).map_err(|e| e.to_string()))?;
    }

    let mut reference_kernel = Vec::new();
    if validators.contains(&Validator::ReferenceKernel) {
        match kernel_checks(cfg) {
            Ok(v) => {
                failed |= v.iter().any(|c| !(c.rel <= 1e-4));
                reference_kernel = v;
            }
            Err(e) => {
                log::error!("reference kernel: {e}");
                failed = true;
            }
        }
    }

    let min_f = positivity_lattice_min(8.0).unwrap_or(f64::NAN);
    let positivity = Positivity { w: 8.0, min_f, all_positive: min_f > 0.0 };
    let mut lattice = BasisLattice::default();
    let samples = basis_lattice(&lattice, 41, 81);
    lattice.peak = samples.iter().fold(0.0f64, |m, s| m.max(s.2));
    write_file(out_dir, "basis_lattice.csv", |b| {
        let mut wr = csv::Writer::from_writer(b);
        wr.write_record(["t", "nu", "theta"]).map_err(|e| e.to_string())?;
        for (t, nu, th) in &samples {
            wr.write_record([format!("{t}"), format!("{nu}"), format!("{th:.9e}")]).map_err(|e| e.to_string())?;
        }
        wr.flush().map_err(|e| e.to_string())
    })?;

    let meta = RunMeta {
        version: env!("CARGO_PKG_VERSION"),
        config: cfg.clone(),
        validators,
        columns,
        git_seconds,
        fd_seconds,
        fft_seconds,
        failed_cells,
        max_abs_error_pct,
        positivity,
        reference_kernel,
        basis_lattice: lattice,
    };
    write_file(out_dir, "run_meta.json", |b| serde_json::to_writer_pretty(b, &meta).map_err(|e| e.to_string()))?;
    Ok((meta, failed))
}

/// Five entries of the first maturity's system, spread over the matrix.
pub fn kernel_checks(cfg: &RunConfig) -> Result<Vec<KernelCheck>, String> {
    let (Some(&t), Some(&k)) = (cfg.maturities.first(), cfg.strikes.first()) else {
        return Ok(vec![]);
    };
    let settings = cfg.git_settings();
    let model = build_model(&settings.params, t, settings.segments).map_err(|e| e.to_string())?;
    let contract = BarrierContract::down_out(k, t, cfg.barrier).map_err(|e| e.to_string())?;
    let eps = settings.epsilon.for_strike(k);
    let grid = CollocationGrid::from_config(&settings.lmvf, 0.0, t, cfg.v0, eps).map_err(|e| e.to_string())?;
    let quad = settings.quad_for(t);
    let n = grid.dim();
    let rows: Vec<usize> = crate::lmvf::active_rows(&grid);
    let mut out = Vec::new();
    for i in 0..5 {
        let row = rows[(i * 7) % rows.len()];
        let col = (i * 13 + 3) % n;
        let (closed, brute) = reference_entry(&grid, &model, &contract, &quad, &settings.lmvf, row, col).map_err(|e| e.to_string())?;
        let rel = (closed - brute).abs() / brute.abs().max(f64::MIN_POSITIVE);
        out.push(KernelCheck { maturity: t, row, col, closed, brute, rel });
    }
    Ok(out)
}

/// Parses `args`, runs, and returns the process exit code.
pub fn run(args: Args) -> i32 {
    let mut cfg = match RunConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_CONFIG;
        }
    };
    if let Some(v) = args.validators {
        cfg.validators = v;
    }
    if let Some(u) = args.upsilon {
        if !(u > 0.0) {
            eprintln!("config error: --upsilon must be positive");
            return EXIT_CONFIG;
        }
        cfg.numerics.upsilon = Some(u);
    }
    if let Some(s) = args.solver {
        cfg.numerics.solver = s.into();
    }
    let out_dir = args.out_dir.unwrap_or_else(|| cfg.outputs.dir.clone());
    match run_config(&cfg, &out_dir) {
        Ok((meta, failed)) => {
            log::info!("{} cells priced in {:.2} s", cfg.strikes.len() * cfg.maturities.len(), meta.git_seconds);
            if failed {
                eprintln!("numerical failure; see {}", out_dir.join("errors.csv").display());
                EXIT_NUMERICAL
            } else {
                0
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_NUMERICAL
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
  "schema": 1,
  "m": 2, "theta0": 0.1, "sigma0": 0.3, "rho0": -0.7, "theta_k": 0.3, "sigma_k": 0.2,
  "r": 0.02, "q": 0.01, "spot": 60, "v0": 0.5, "barrier": 40,
  "strikes": [80, 90], "maturities": [0.5]
}"#;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.segments, 10);
        assert_eq!(c.numerics.n_t, 10);
        assert_eq!(c.epsilon_policy().for_strike(50.0), 5.0);
        assert_eq!(c.git_settings().quad.simpson_nodes, 21);
    }

    #[test]
    fn syntax_errors_carry_position() {
        let src = "{\n  \"schema\": 1,\n  \"m\": 2,,\n}";
        match RunConfig::from_json(src) {
            Err(ConfigError::Syntax { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let src = MINIMAL.replace("\"barrier\": 40", "\"barrier\": 40, \"colour\": 1");
        assert!(matches!(RunConfig::from_json(&src), Err(ConfigError::Syntax { line: 4, .. })));
    }

    #[test]
    fn semantic_errors_point_at_the_key() {
        let src = MINIMAL.replace("[80, 90]", "[90, 80]");
        match RunConfig::from_json(&src) {
            Err(ConfigError::Invalid { field, line, column, .. }) => {
                assert_eq!(field, "strikes");
                assert_eq!((line, column), (5, 3));
            }
            other => panic!("{other:?}"),
        }
        let src = MINIMAL.replace("\"schema\": 1", "\"schema\": 2");
        assert!(matches!(RunConfig::from_json(&src), Err(ConfigError::Invalid { .. })));
    }

    #[test]
    fn epsilon_map() {
        let src = MINIMAL.replace("\"maturities\": [0.5]", "\"maturities\": [0.5], \"numerics\": {\"epsilon\": {\"80\": 2.5, \"default\": 3}}");
        let c = RunConfig::from_json(&src).unwrap();
        let p = c.epsilon_policy();
        assert_eq!(p.for_strike(80.0), 2.5);
        assert_eq!(p.for_strike(90.0), 3.0);
        let src = MINIMAL.replace("\"maturities\": [0.5]", "\"maturities\": [0.5], \"numerics\": {\"epsilon\": 4.5}");
        assert_eq!(RunConfig::from_json(&src).unwrap().epsilon_policy().for_strike(45.0), 4.5);
    }

    #[test]
    fn basis_lattice_peaks_at_centre() {
        let lat = BasisLattice::default();
        let s = basis_lattice(&lat, 41, 81);
        let best = s.iter().cloned().fold((0.0, 0.0, 0.0), |a, b| if b.2 > a.2 { b } else { a });
        assert!((best.2 - 1.0).abs() < 1e-12);
        assert_eq!((best.0, best.1), (1.0, 10.0));
    }
}
