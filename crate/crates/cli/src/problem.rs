//! Problem types selectable by `problem.type`, each a [`ProblemBuilder`] in a
//! [`ProblemRegistry`].
//!
//! | type              | section(s)              | equation                                                  |
//! |-------------------|-------------------------|-----------------------------------------------------------|
//! | `ode_ivp`         | `[ode]`                 | `u' = A phi(u) + f`, `u(0+) = u0`, zero past               |
//! | `dde_discrete`    | `[dde]`                 | `u' = sum_i B_i phi(u(t + theta_i)) + f`, zero past        |
//! | `dde_history`     | `[dde]`, `[history]`    | as above with a prescribed past instead of `f`            |
//! | `integro`         | `[integro]`, `[history]`| `u' = int k(theta) A u(t + theta) dtheta`                 |
//! | `neutral_linear`  | `[neutral]`             | `u' - C u'(t - h1) = A u + B u(t - h2) + f`, zero past     |
//! | `neutral_general` | `[neutral]`             | `u' = P u(alpha^{-1} t) + Q u'(beta^{-1} t) + f`           |
//! | `wrapped`         | `[wrapped]`             | `u' = M(d^{-1}) A N(d^{-1}) u + f`                         |
//! | `local`           | `[local]`               | `u' = g(u)` projected onto a ball around `u0`             |
//!
//! `phi` is `linear` (identity) or `sin`, chosen by the `field` key.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use expodelay::fourier_laplace::{parse_matrix, spectral_norm, ConvolutionFactory};
use expodelay::problems::{
    add_source, discrete_delay_rhs, history_problem, integro_rhs, ivp_problem, local_rhs,
    local_solve, neutral_admissibility, neutral_general_rhs, neutral_linear_rhs, nemitzki_rhs,
    wrapped_rhs, HistoryFunction, HistoryRhs, KernelMap, MonotoneMap, NeutralMap, PointMap,
};
use expodelay::{
    picard_solve, CMatrix, GridFunction, RhoChoice, RhsOperator, SolveReport, SolverConfig,
    SymbolContext, SymbolRegistry, TimeGrid, C64,
};
use expodelay_oracle::{Args, DelaySystem, History, Rhs};

use crate::config::ProblemConfig;
use crate::source::Source;
use crate::{CliError, Result};

type Schema = &'static [(&'static str, &'static [&'static str])];

/// Outcome of a solve: the report, the series written out and extra report lines.
pub struct Solved {
    pub report: SolveReport,
    pub output: GridFunction,
    pub extras: Vec<(String, String)>,
}

/// Method-of-steps setup; the first `observed` components are the solution.
pub struct OracleSpec {
    pub system: DelaySystem,
    pub past: Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>,
    pub observed: usize,
}

pub trait Problem: Send + Sync {
    fn kind(&self) -> &'static str;
    fn dim(&self) -> usize;
    /// Complete right-hand side: solutions are the fixed points of `u = d^{-1} rhs(u)`.
    fn rhs(&self) -> Arc<dyn RhsOperator>;
    /// The part without sources, impulses and cutoffs.
    fn field(&self) -> Arc<dyn RhsOperator>;
    /// Whether the equation is a delay equation by construction.
    fn expects_delay(&self) -> bool;

    fn solve(&self, cfg: &SolverConfig) -> Result<Solved> {
        let report = picard_solve(self.rhs().as_ref(), cfg)?;
        Ok(Solved { output: report.solution.clone(), report, extras: Vec::new() })
    }

    /// Grid of the written solution.
    fn output_grid(&self, grid: TimeGrid) -> TimeGrid {
        grid
    }

    fn oracle(&self) -> Result<OracleSpec> {
        Err(CliError::config(format!("no reference solution for `{}` problems", self.kind())))
    }
}

pub trait ProblemBuilder: Send + Sync {
    fn name(&self) -> &'static str;
    /// Type-specific sections and their keys.
    fn schema(&self) -> Schema;
    fn build(&self, cfg: &ProblemConfig) -> Result<Box<dyn Problem>>;
}

#[derive(Clone, Default)]
pub struct ProblemRegistry {
    builders: BTreeMap<&'static str, Arc<dyn ProblemBuilder>>,
}

impl ProblemRegistry {
    pub fn new() -> Self {
        ProblemRegistry::default()
    }

    pub fn with_builtin() -> Self {
        let mut r = ProblemRegistry::new();
        r.register(Arc::new(OdeIvpBuilder));
        r.register(Arc::new(DdeDiscreteBuilder));
        r.register(Arc::new(DdeHistoryBuilder));
        r.register(Arc::new(IntegroBuilder));
        r.register(Arc::new(NeutralLinearBuilder));
        r.register(Arc::new(NeutralGeneralBuilder));
        r.register(Arc::new(WrappedBuilder));
        r.register(Arc::new(LocalBuilder));
        r
    }

    pub fn register(&mut self, builder: Arc<dyn ProblemBuilder>) {
        self.builders.insert(builder.name(), builder);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.builders.keys().copied().collect()
    }

    pub fn get(&self, name: &str) -> Result<&dyn ProblemBuilder> {
        self.builders.get(name).map(|b| b.as_ref()).ok_or_else(|| {
            CliError::config(format!(
                "unknown problem type `{name}`; known: {}",
                self.names().join(", ")
            ))
        })
    }

    pub fn build(&self, cfg: &ProblemConfig) -> Result<Box<dyn Problem>> {
        self.get(&cfg.kind)?.build(cfg)
    }
}

// ---------------------------------------------------------------------------
// Config helpers

fn matrix(cfg: &ProblemConfig, section: &str, key: &str) -> Result<CMatrix> {
    let text = cfg.ini.require(section, key)?;
    parse_matrix(text, cfg.dim).map_err(|e| CliError::config(format!("`{section}.{key}`: {e}")))
}

fn matrix_or_zero(cfg: &ProblemConfig, section: &str, key: &str) -> Result<CMatrix> {
    if cfg.ini.get(section, key).is_some() {
        matrix(cfg, section, key)
    } else {
        Ok(CMatrix::zeros(cfg.dim, cfg.dim))
    }
}

/// `|`-separated matrices.
fn matrix_list(cfg: &ProblemConfig, section: &str, key: &str) -> Result<Vec<CMatrix>> {
    cfg.ini
        .require(section, key)?
        .split('|')
        .map(|m| {
            parse_matrix(m, cfg.dim).map_err(|e| CliError::config(format!("`{section}.{key}`: {e}")))
        })
        .collect()
}

fn state(cfg: &ProblemConfig, section: &str, key: &str) -> Result<Vec<C64>> {
    let v = cfg
        .ini
        .vector(section, key)?
        .ok_or_else(|| CliError::config(format!("missing key `{section}.{key}`")))?;
    if v.len() != cfg.dim {
        return Err(CliError::config(format!(
            "`{section}.{key}` has {} entries, expected {}",
            v.len(),
            cfg.dim
        )));
    }
    Ok(v.into_iter().map(|x| C64::new(x, 0.0)).collect())
}

fn source(cfg: &ProblemConfig, section: &str) -> Result<Source> {
    match cfg.ini.get(section, "source") {
        None => Ok(Source::Zero),
        Some(spec) => Source::parse(spec, cfg.dim, &cfg.base_dir)
            .map_err(|e| CliError::config(format!("`{section}.source`: {e}"))),
    }
}

fn real_entries(m: &CMatrix) -> Result<Vec<f64>> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            let z = m[(i, j)];
            if z.im != 0.0 {
                return Err(CliError::config("the reference solver needs real matrices"));
            }
            out.push(z.re);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Nonlinearity {
    Linear,
    Sin,
}

impl Nonlinearity {
    fn parse(cfg: &ProblemConfig, section: &str) -> Result<Self> {
        match cfg.ini.get(section, "field").unwrap_or("linear") {
            "linear" => Ok(Nonlinearity::Linear),
            "sin" => Ok(Nonlinearity::Sin),
            other => Err(CliError::config(format!(
                "`{section}.field` = {other:?}; expected linear or sin"
            ))),
        }
    }

    fn apply(self, x: C64) -> C64 {
        match self {
            Nonlinearity::Linear => x,
            Nonlinearity::Sin => x.sin(),
        }
    }

    fn apply_real(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Linear => x,
            Nonlinearity::Sin => x.sin(),
        }
    }
}

/// `out += M phi(x)`.
fn add_product(m: &CMatrix, nl: Nonlinearity, x: &[C64], out: &mut [C64]) {
    let d = out.len();
    for (i, o) in out.iter_mut().enumerate() {
        for j in 0..d {
            *o += m[(i, j)] * nl.apply(x[j]);
        }
    }
}

fn add_product_real(m: &[f64], nl: Nonlinearity, x: &[f64], out: &mut [f64]) {
    let d = out.len();
    for (i, o) in out.iter_mut().enumerate() {
        for j in 0..d {
            *o += m[i * d + j] * nl.apply_real(x[j]);
        }
    }
}

fn with_source(field: Arc<dyn RhsOperator>, src: &Source, grid: TimeGrid) -> Arc<dyn RhsOperator> {
    if src.is_zero() {
        field
    } else {
        let dim = field.dim();
        Arc::new(add_source(field, src.sample(grid, dim)))
    }
}

fn zero_past(dim: usize) -> Arc<dyn Fn(f64, &mut [f64]) + Send + Sync> {
    let _ = dim;
    Arc::new(|_, out: &mut [f64]| out.fill(0.0))
}

// ---------------------------------------------------------------------------
// ode_ivp

struct OdeIvpBuilder;

struct OdeIvp {
    dim: usize,
    a: CMatrix,
    nl: Nonlinearity,
    u0: Vec<C64>,
    src: Source,
    grid: TimeGrid,
}

impl ProblemBuilder for OdeIvpBuilder {
    fn name(&self) -> &'static str {
        "ode_ivp"
    }
    fn schema(&self) -> Schema {
        &[("ode", &["a", "u0", "field", "source"])]
    }
    fn build(&self, cfg: &ProblemConfig) -> Result<Box<dyn Problem>> {
        Ok(Box::new(OdeIvp {
            dim: cfg.dim,
            a: matrix(cfg, "ode", "a")?,
            nl: Nonlinearity::parse(cfg, "ode")?,
            u0: state(cfg, "ode", "u0")?,
            src: source(cfg, "ode")?,
            grid: cfg.grid,
        }))
    }
}

impl Problem for OdeIvp {
    fn kind(&self) -> &'static str {
        "ode_ivp"
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn field(&self) -> Arc<dyn RhsOperator> {
        let (a, nl) = (self.a.clone(), self.nl);
        let map: PointMap = Arc::new(move |_, x, out| {
            out.fill(C64::new(0.0, 0.0));
            add_product(&a, nl, x, out);
        });
        Arc::new(nemitzki_rhs(map, self.dim, spectral_norm(&self.a)))
    }
    fn rhs(&self) -> Arc<dyn RhsOperator> {
        let inner = with_source(self.field(), &self.src, self.grid);
        Arc::new(ivp_problem(inner, self.u0.clone()).expect("dimensions checked at build"))
    }
    fn expects_delay(&self) -> bool {
        false
    }
    fn oracle(&self) -> Result<OracleSpec> {
        let (a, nl, d) = (real_entries(&self.a)?, self.nl, self.dim);
        let f = self.src.real_fn(d);
        let rhs: Rhs = Arc::new(move |x: &Args<'_>, out: &mut [f64]| {
            f(x.t, out);
            add_product_real(&a, nl, x.u, out);
        });
        let u0: Vec<f64> = self.u0.iter().map(|z| z.re).collect();
        Ok(OracleSpec {
            system: DelaySystem::new(d, vec![], History::constant(&u0), rhs)?,
            past: zero_past(d),
            observed: d,
        })
    }
}

// ---------------------------------------------------------------------------
// dde_discrete and dde_history

#[derive(Clone)]
struct DelayTerms {
    dim: usize,
    thetas: Vec<f64>,
    mats: Vec<CMatrix>,
    nl: Nonlinearity,
}

impl DelayTerms {
    fn parse(cfg: &ProblemConfig) -> Result<Self> {
        let thetas = cfg
            .ini
            .vector("dde", "thetas")?
            .ok_or_else(|| CliError::config("missing key `dde.thetas`"))?;
        let mats = matrix_list(cfg, "dde", "matrices")?;
        if mats.len() != thetas.len() {
            return Err(CliError::config(format!(
                "{} delays but {} matrices in [dde]",
                thetas.len(),
                mats.len()
            )));
        }
        Ok(DelayTerms { dim: cfg.dim, thetas, mats, nl: Nonlinearity::parse(cfg, "dde")? })
    }

    fn operator(&self) -> Result<expodelay::problems::DiscreteDelay> {
        let (mats, nl, d) = (self.mats.clone(), self.nl, self.dim);
        let g: PointMap = Arc::new(move |_, x, out| {
            out.fill(C64::new(0.0, 0.0));
            for (i, m) in mats.iter().enumerate() {
                add_product(m, nl, &x[i * d..(i + 1) * d], out);
            }
        });
        let c = self.mats.iter().map(spectral_norm).fold(0.0, f64::max);
        Ok(discrete_delay_rhs(g, self.thetas.clone(), d, c)?)
    }

    fn has_delay(&self) -> bool {
        self.thetas.iter().any(|&t| t < 0.0)
    }

    fn oracle_system(&self, history: History, src: Option<&Source>) -> Result<DelaySystem> {
        let d = self.dim;
        let mats: Vec<Vec<f64>> = self.mats.iter().map(real_entries).collect::<Result<_>>()?;
        // theta = 0 reads the current state; the others become positive delays
        let mut delays = Vec::new();
        let slots: Vec<Option<usize>> = self
            .thetas
            .iter()
            .map(|&t| {
                (t < 0.0).then(|| {
                    delays.push(-t);
                    delays.len() - 1
                })
            })
            .collect();
        let nl = self.nl;
        let f = src.map(|s| s.real_fn(d));
        let rhs: Rhs = Arc::new(move |x: &Args<'_>, out: &mut [f64]| {
            match &f {
                Some(f) => f(x.t, out),
                None => out.fill(0.0),
            }
            for (m, slot) in mats.iter().zip(&slots) {
                let state = match slot {
                    Some(k) => &x.delayed[*k][..],
                    None => x.u,
                };
                add_product_real(m, nl, state, out);
            }
        });
        Ok(DelaySystem::new(d, delays, history, rhs)?)
    }
}

struct DdeDiscreteBuilder;

struct DdeDiscrete {
    terms: DelayTerms,
    src: Source,
    grid: TimeGrid,
}

impl ProblemBuilder for DdeDiscreteBuilder {
    fn name(&self) -> &'static str {
        "dde_discrete"
    }
    fn schema(&self) -> Schema {
        &[("dde", &["thetas", "matrices", "field", "source"])]
    }
    fn build(&self, cfg: &ProblemConfig) -> Result<Box<dyn Problem>> {
        let terms = DelayTerms::parse(cfg)?;
        terms.operator()?;
        Ok(Box::new(DdeDiscrete { terms, src: source(cfg, "dde")?, grid: cfg.grid }))
    }
}

impl Problem for DdeDiscrete {
    fn kind(&self) -> &'static str {
        "dde_discrete"
    }
    fn dim(&self) -> usize {
        self.terms.dim
    }
    fn field(&self) -> Arc<dyn RhsOperator> {
        Arc::new(self.terms.operator().expect("validated at build"))
    }
    fn rhs(&self) -> Arc<dyn RhsOperator> {
        with_source(self.field(), &self.src, self.grid)
    }
    fn expects_delay(&self) -> bool {
        self.terms.has_delay()
    }
    fn oracle(&self) -> Result<OracleSpec> {
        let d = self.terms.dim;
        Ok(OracleSpec {
            system: self.terms.oracle_system(History::zero(d), Some(&self.src))?,
            past: zero_past(d),
            observed: d,
        })
    }
}

/// `[history]`: `kind = constant` with `values`, or `kind = polynomial` with
/// `coeffs` (one `;`-separated row of ascending coefficients per component).
#[derive(Clone)]
struct HistorySpec {
    coeffs: Vec<Vec<f64>>,
    depth: f64,
}

const HISTORY_KEYS: &[&str] = &["kind", "values", "coeffs", "depth"];

impl HistorySpec {
    fn parse(cfg: &ProblemConfig, default_depth: f64) -> Result<Self> {
        let kind = cfg.ini.get("history", "kind").unwrap_or("constant");
        let coeffs = match kind {
            "constant" => match cfg.ini.vector("history", "values")? {
                Some(v) => v.into_iter().map(|x| vec![x]).collect(),
                None => vec![vec![0.0]; cfg.dim],
            },
            "polynomial" => cfg
                .ini
                .require("history", "coeffs")?
                .split(';')
                .map(|row| {
                    row.split_whitespace()
                        .map(crate::ini::parse_real)
                        .collect::<std::result::Result<Vec<f64>, _>>()
                        .map_err(|m| CliError::config(format!("`history.coeffs`: {m}")))
                })
                .collect::<Result<Vec<_>>>()?,
            other => {
                return Err(CliError::config(format!(
                    "`history.kind` = {other:?}; expected constant or polynomial"
                )))
            }
        };
        if coeffs.len() != cfg.dim || coeffs.iter().any(Vec::is_empty) {
            return Err(CliError::config(format!(
                "[history] must give {} components",
                cfg.dim
            )));
        }
        let depth = cfg.ini.f64_or("history", "depth", default_depth)?;
        if !(depth > 0.0) {
            return Err(CliError::config("`history.depth` must be positive"));
        }
        Ok(HistorySpec { coeffs, depth })
    }

    fn function(&self, dt: f64) -> Result<HistoryFunction> {
        Ok(HistoryFunction::polynomial(self.coeffs.clone(), self.depth, dt)?)
    }

    fn eval(&self, t: f64, out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.coeffs) {
            *o = c.iter().rev().fold(0.0, |acc, a| acc * t + a);
        }
    }

    fn oracle_history(&self) -> History {
        History::Polynomial(self.coeffs.clone())
    }
}

/// The config grid extended back over the history, as in the spliced solution.
fn spliced_grid(grid: TimeGrid, depth: f64) -> TimeGrid {
    let dt = grid.dt();
    let back = (depth / dt + 1e-9).floor();
    let start = grid.t_min().min(-back * dt);
    let steps = ((grid.t_max() - start) / dt).round() as usize;
    TimeGrid::new(start, grid.t_max(), steps + 1).expect("extension of a valid grid")
}

fn require_origin(grid: TimeGrid) -> Result<()> {
    if grid.node_index(0.0).is_none() {
        return Err(CliError::config("history problems need t = 0 on the grid"));
    }
    Ok(())
}

fn spliced_solve(
    phi: Arc<dyn expodelay::PastMap>,
    hist: &HistorySpec,
    cfg: &SolverConfig,
) -> Result<Solved> {
    let sol = history_problem(phi, hist.function(cfg.grid.dt())?, cfg)?;
    Ok(Solved { report: sol.report, output: sol.spliced, extras: Vec::new() })
}

struct DdeHistoryBuilder;

struct DdeHistory {
    terms: DelayTerms,
    hist: HistorySpec,
    dt: f64,
}

impl ProblemBuilder for DdeHistoryBuilder {
    fn name(&self) -> &'static str {
        "dde_history"
    }
    fn schema(&self) -> Schema {
        &[("dde", &["thetas", "matrices", "field"]), ("history", HISTORY_KEYS)]
    }
    fn build(&self, cfg: &ProblemConfig) -> Result<Box<dyn Problem>> {
        require_origin(cfg.grid)?;
        let terms = DelayTerms::parse(cfg)?;
        terms.operator()?;
        let reach = terms.thetas.iter().fold(cfg.grid.dt(), |m, t| m.max(-t));
        let hist = HistorySpec::parse(cfg, reach)?;
        Ok(Box::new(DdeHistory { terms, hist, dt: cfg.grid.dt() }))
    }
}

impl Problem for DdeHistory {
    fn kind(&self) -> &'static str {
        "dde_history"
    }
    fn dim(&self) -> usize {
        self.terms.dim
    }
    fn field(&self) -> Arc<dyn RhsOperator> {
        Arc::new(self.terms.operator().expect("validated at build"))
    }
    fn rhs(&self) -> Arc<dyn RhsOperator> {
        let phi = Arc::new(self.terms.operator().expect("validated at build"));
        Arc::new(HistoryRhs::new(phi, self.hist.function(self.dt).expect("valid history")).expect("history covers the delays"))
    }
    fn expects_delay(&self) -> bool {
        self.terms.has_delay()
    }
    fn solve(&self, cfg: &SolverConfig) -> Result<Solved> {
        spliced_solve(Arc::new(self.terms.operator()?), &self.hist, cfg)
    }
    fn output_grid(&self, grid: TimeGrid) -> TimeGrid {
        spliced_grid(grid, self.hist.depth)
    }
    fn oracle(&self) -> Result<OracleSpec> {
        let hist = self.hist.clone();
        Ok(OracleSpec {
            system: self.terms.oracle_system(self.hist.oracle_history(), None)?,
            past: Arc::new(move |t, out| hist.eval(t, out)),
            observed: self.terms.dim,
        })
    }
}

// ---------------------------------------------------------------------------
// integro

/// Kernel `k(theta)` on `[-horizon, 0]`: `box:length=L` (k = 1, horizon L) or
/// `exp:rate=r` (k = e^{r theta}).
#[derive(Debug, Clone, Copy, PartialEq)]
struct Kernel {
    rate: f64,
    horizon: f64,
}

impl Kernel {
    fn parse(cfg: &ProblemConfig) -> Result<Self> {
        let spec = cfg.ini.require("integro", "kernel")?;
        let (name, args) = expodelay::fourier_laplace::parse_symbol_spec(spec)?;
        let k = match name.as_str() {
            "box" => {
                args.only(&["length"])?;
                Kernel { rate: 0.0, horizon: args.f64("length")? }
            }
            "exp" => {
                args.only(&["rate"])?;
                let rate = args.f64("rate")?;
                if !(rate > 0.0) {
                    return Err(CliError::config("exp kernel needs rate > 0"));
                }
                Kernel { rate, horizon: cfg.ini.f64_or("integro", "horizon", 30.0 / rate)? }
            }
            other => return Err(CliError::config(format!("unknown kernel {other:?}"))),
        };
        if name == "box" && cfg.ini.get("integro", "horizon").is_some() {
            return Err(CliError::config("`integro.horizon` is set by the box length"));
        }
        if !(k.horizon > 0.0) {
            return Err(CliError::config("kernel horizon must be positive"));
        }
        Ok(k)
    }

    fn at(&self, theta: f64) -> f64 {
        (self.rate * theta).exp()
    }
}

struct IntegroBuilder;

struct Integro {
    dim: usize,
    a: CMatrix,
    kernel: Kernel,
    hist: HistorySpec,
    dt: f64,
}

impl ProblemBuilder for IntegroBuilder {
    fn name(&self) -> &'static str {
        "integro"
    }
    fn schema(&self) -> Schema {
        &[("integro", &["kernel", "a", "horizon"]), ("history", HISTORY_KEYS)]
    }
    fn build(&self, cfg: &ProblemConfig) -> Result<Box<dyn Problem>> {
        require_origin(cfg.grid)?;
        let kernel = Kernel::parse(cfg)?;
        let hist = HistorySpec::parse(cfg, kernel.horizon)?;
        let p = Integro { dim: cfg.dim, a: matrix(cfg, "integro", "a")?, kernel, hist, dt: cfg.grid.dt() };
        p.operator()?;
        Ok(Box::new(p))
    }
}

impl Integro {
    fn operator(&self) -> Result<expodelay::problems::Integro> {
        let (a, k) = (self.a.clone(), self.kernel);
        let h: KernelMap = Arc::new(move |_, theta, x, out| {
            out.fill(C64::new(0.0, 0.0));
            add_product(&a, Nonlinearity::Linear, x, out);
            let s = k.at(theta);
            out.iter_mut().for_each(|o| *o *= s);
        });
        let norm_a = spectral_norm(&self.a);
        Ok(integro_rhs(h, move |theta| k.at(theta) * norm_a, self.dim, k.horizon)?)
    }
}

impl Problem for Integro {
    fn kind(&self) -> &'static str {
        "integro"
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn field(&self) -> Arc<dyn RhsOperator> {
        Arc::new(self.operator().expect("validated at build"))
    }
    fn rhs(&self) -> Arc<dyn RhsOperator> {
        let phi = Arc::new(self.operator().expect("validated at build"));
        Arc::new(HistoryRhs::new(phi, self.hist.function(self.dt).expect("valid history")).expect("history covers the horizon"))
    }
    fn expects_delay(&self) -> bool {
        true
    }
    fn solve(&self, cfg: &SolverConfig) -> Result<Solved> {
        let op = self.operator()?;
        let mut solved = spliced_solve(Arc::new(op.clone()), &self.hist, cfg)?;
        let bound = op.truncation_bound(solved.report.rho_used);
        solved.extras.push(("truncation_bound".into(), format!("{bound:e}")));
        Ok(solved)
    }
    fn output_grid(&self, grid: TimeGrid) -> TimeGrid {
        spliced_grid(grid, self.hist.depth)
    }
    /// With `U(t) = int_{t-H}^t e^{-r(t-s)} u(s) ds` the equation is the system
    /// `u' = A U`, `U' = u - r U - e^{-rH} u(t - H)`.
    fn oracle(&self) -> Result<OracleSpec> {
        let d = self.dim;
        let a = real_entries(&self.a)?;
        let Kernel { rate, horizon } = self.kernel;
        let decay = (-rate * horizon).exp();
        let rhs: Rhs = Arc::new(move |x: &Args<'_>, out: &mut [f64]| {
            let (u, big) = x.u.split_at(d);
            let (du, dbig) = out.split_at_mut(d);
            du.fill(0.0);
            add_product_real(&a, Nonlinearity::Linear, big, du);
            for k in 0..d {
                dbig[k] = u[k] - rate * big[k] - decay * x.delayed[0][k];
            }
        });
        let hist = self.hist.clone();
        let past = {
            let hist = hist.clone();
            Arc::new(move |t: f64, out: &mut [f64]| hist.eval(t, out))
        };
        let augmented = History::Function(Arc::new(move |t, u: &mut [f64], du: &mut [f64]| {
            du.fill(0.0);
            let (head, tail) = u.split_at_mut(d);
            hist.eval(t, head);
            // Simpson's rule for the memory variable
            let m = 400;
            let step = horizon / m as f64;
            let mut buf = vec![0.0; d];
            tail.fill(0.0);
            for i in 0..=m {
                let s = t - horizon + i as f64 * step;
                let c = if i == 0 || i == m { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                hist.eval(s, &mut buf);
                let w = c * (-rate * (t - s)).exp() * step / 3.0;
                for k in 0..d {
                    tail[k] += w * buf[k];
                }
            }
        }));
        Ok(OracleSpec { system: DelaySystem::new(2 * d, vec![horizon], augmented, rhs)?, past, observed: d })
    }
}

// ---------------------------------------------------------------------------
// neutral_linear

struct NeutralLinearBuilder;

struct NeutralLinear {
    dim: usize,
    a: CMatrix,
    b: CMatrix,
    c: CMatrix,
    h1: f64,
    h2: f64,
    src: Source,
    grid: TimeGrid,
    rho: RhoChoice,
}

impl ProblemBuilder for NeutralLinearBuilder {
    fn name(&self) -> &'static str {
        "neutral_linear"
    }
    fn schema(&self) -> Schema {
        &[("neutral", &["a", "b", "c", "h1", "h2", "source"])]
    }
    fn build(&self, cfg: &ProblemConfig) -> Result<Box<dyn Problem>> {
        let h1 = cfg.ini.require_f64("neutral", "h1")?;
        let p = NeutralLinear {
            dim: cfg.dim,
            a: matrix_or_zero(cfg, "neutral", "a")?,
            b: matrix_or_zero(cfg, "neutral", "b")?,
            c: matrix_or_zero(cfg, "neutral", "c")?,
            h1,
            h2: cfg.ini.f64_or("neutral", "h2", h1)?,
            src: source(cfg, "neutral")?,
            grid: cfg.grid,
            rho: cfg.solver.rho,
        };
        p.operator(&p.src)?;
        Ok(Box::new(p))
    }
}

impl NeutralLinear {
    fn operator(&self, src: &Source) -> Result<expodelay::problems::Wrapped> {
        let f = src.sample(self.grid, self.dim);
        Ok(neutral_linear_rhs(self.a.clone(), self.b.clone(), self.c.clone(), self.h1, self.h2, &f, self.rho)?)
    }
}

impl Problem for NeutralLinear {
    fn kind(&self) -> &'static str {
        "neutral_linear"
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn field(&self) -> Arc<dyn RhsOperator> {
        Arc::new(self.operator(&Source::Zero).expect("validated at build"))
    }
    fn rhs(&self) -> Arc<dyn RhsOperator> {
        Arc::new(self.operator(&self.src).expect("validated at build"))
    }
    fn expects_delay(&self) -> bool {
        self.b.iter().chain(self.c.iter()).any(|z| z.norm() > 0.0)
    }
    fn solve(&self, cfg: &SolverConfig) -> Result<Solved> {
        let report = picard_solve(self.rhs().as_ref(), cfg)?;
        let adm = neutral_admissibility(&self.c, self.h1);
        let extras = vec![
            ("norm_c".into(), format!("{:e}", adm.norm_c)),
            ("minimal_rho".into(), format!("{:e}", adm.minimal_rho)),
        ];
        Ok(Solved { output: report.solution.clone(), report, extras })
    }
    fn oracle(&self) -> Result<OracleSpec> {
        let d = self.dim;
        let system = DelaySystem::linear_neutral(
            d,
            real_entries(&self.a)?,
            real_entries(&self.b)?,
            real_entries(&self.c)?,
            self.h1,
            self.h2,
            self.src.real_fn(d),
            History::zero(d),
        )?;
        Ok(OracleSpec { system, past: zero_past(d), observed: d })
    }
}

// ---------------------------------------------------------------------------
// neutral_general

/// `identity` or `shift:by=h`.
fn shift_amount(cfg: &ProblemConfig, key: &str) -> Result<f64> {
    let spec = cfg.ini.require("neutral", key)?;
    let (name, args) = expodelay::fourier_laplace::parse_symbol_spec(spec)?;
    match name.as_str() {
        "identity" => {
            args.only(&[])?;
            Ok(0.0)
        }
        "shift" => {
            args.only(&["by"])?;
            let by = args.f64("by")?;
            if by < 0.0 {
                return Err(CliError::config(format!("`neutral.{key}` must not advance time")));
            }
            Ok(by)
        }
        other => Err(CliError::config(format!("`neutral.{key}` = {other:?}; expected identity or shift:by=h"))),
    }
}

struct NeutralGeneralBuilder;

struct NeutralGeneral {
    dim: usize,
    p: CMatrix,
    q: CMatrix,
    alpha: f64,
    beta: f64,
    eps0: f64,
    src: Source,
    grid: TimeGrid,
}

impl ProblemBuilder for NeutralGeneralBuilder {
    fn name(&self) -> &'static str {
        "neutral_general"
    }
    fn schema(&self) -> Schema {
        &[("neutral", &["p", "q", "alpha", "beta", "eps0", "source"])]
    }
    fn build(&self, cfg: &ProblemConfig) -> Result<Box<dyn Problem>> {
        let beta = shift_amount(cfg, "beta")?;
        let p = NeutralGeneral {
            dim: cfg.dim,
            p: matrix_or_zero(cfg, "neutral", "p")?,
            q: matrix_or_zero(cfg, "neutral", "q")?,
            alpha: shift_amount(cfg, "alpha")?,
            beta,
            eps0: cfg.ini.f64_or("neutral", "eps0", beta)?,
            src: source(cfg, "neutral")?,
            grid: cfg.grid,
        };
        p.operator(true)?;
        Ok(Box::new(p))
    }
}

impl NeutralGeneral {
    fn operator(&self, with_source: bool) -> Result<expodelay::problems::NeutralGeneral> {
        let (p, q) = (self.p.clone(), self.q.clone());
        let phi: NeutralMap = Arc::new(move |_, x, y, out| {
            out.fill(C64::new(0.0, 0.0));
            add_product(&p, Nonlinearity::Linear, x, out);
            add_product(&q, Nonlinearity::Linear, y, out);
        });
        let c = spectral_norm(&self.p).max(spectral_norm(&self.q));
        let src = (with_source && !self.src.is_zero()).then(|| self.src.sample(self.grid, self.dim));
        let src = src.or_else(|| Some(GridFunction::zeros(self.grid, self.dim)));
        Ok(neutral_general_rhs(
            phi,
            self.dim,
            c,
            MonotoneMap::shift(self.alpha),
            MonotoneMap::shift(self.beta),
            self.eps0,
            src,
        )?)
    }
}

impl Problem for NeutralGeneral {
    fn kind(&self) -> &'static str {
        "neutral_general"
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn field(&self) -> Arc<dyn RhsOperator> {
        Arc::new(self.operator(false).expect("validated at build"))
    }
    fn rhs(&self) -> Arc<dyn RhsOperator> {
        Arc::new(self.operator(true).expect("validated at build"))
    }
    fn expects_delay(&self) -> bool {
        true
    }
    fn oracle(&self) -> Result<OracleSpec> {
        let d = self.dim;
        let (p, q) = (real_entries(&self.p)?, real_entries(&self.q)?);
        let f = self.src.real_fn(d);
        let alpha_delayed = self.alpha > 0.0;
        let delays = if alpha_delayed { vec![self.alpha, self.beta] } else { vec![self.beta] };
        let rhs: Rhs = Arc::new(move |x: &Args<'_>, out: &mut [f64]| {
            f(x.t, out);
            let state = if alpha_delayed { &x.delayed[0][..] } else { x.u };
            let slope = &x.delayed_derivative[if alpha_delayed { 1 } else { 0 }];
            add_product_real(&p, Nonlinearity::Linear, state, out);
            add_product_real(&q, Nonlinearity::Linear, slope, out);
        });
        Ok(OracleSpec { system: DelaySystem::new(d, delays, History::zero(d), rhs)?, past: zero_past(d), observed: d })
    }
}

// ---------------------------------------------------------------------------
// wrapped

struct WrappedBuilder;

struct Wrapped {
    dim: usize,
    a: CMatrix,
    m: Arc<dyn expodelay::Symbol>,
    n: Arc<dyn expodelay::Symbol>,
    trivial: bool,
    src: Source,
    grid: TimeGrid,
}

/// Symbol registry with convolution kernels read from CSV files under `base`.
pub fn symbol_registry(base: PathBuf) -> SymbolRegistry {
    let mut reg = SymbolRegistry::with_builtin();
    reg.register(Arc::new(ConvolutionFactory::new(move |path| {
        crate::csv_io::read_csv(&base.join(path)).map_err(|e| expodelay::Error::Domain(e.to_string()))
    })));
    reg
}

impl ProblemBuilder for WrappedBuilder {
    fn name(&self) -> &'static str {
        "wrapped"
    }
    fn schema(&self) -> Schema {
        &[("wrapped", &["m", "n", "a", "source"])]
    }
    fn build(&self, cfg: &ProblemConfig) -> Result<Box<dyn Problem>> {
        let reg = symbol_registry(cfg.base_dir.clone());
        let ctx = SymbolContext { dim: cfg.dim, rho_min: expodelay::problems::DEFAULT_RHO_MIN };
        let spec = |k: &str| cfg.ini.get("wrapped", k).unwrap_or("identity").to_string();
        let (ms, ns) = (spec("m"), spec("n"));
        let p = Wrapped {
            dim: cfg.dim,
            a: matrix(cfg, "wrapped", "a")?,
            m: reg.build(&ms, &ctx)?,
            n: reg.build(&ns, &ctx)?,
            trivial: ms == "identity" && ns == "identity",
            src: source(cfg, "wrapped")?,
            grid: cfg.grid,
        };
        p.operator()?;
        Ok(Box::new(p))
    }
}

impl Wrapped {
    fn operator(&self) -> Result<expodelay::problems::Wrapped> {
        let a = self.a.clone();
        let map: PointMap = Arc::new(move |_, x, out| {
            out.fill(C64::new(0.0, 0.0));
            add_product(&a, Nonlinearity::Linear, x, out);
        });
        let inner = Arc::new(nemitzki_rhs(map, self.dim, spectral_norm(&self.a)));
        Ok(wrapped_rhs(self.m.clone(), inner, self.n.clone())?)
    }
}

impl Problem for Wrapped {
    fn kind(&self) -> &'static str {
        "wrapped"
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn field(&self) -> Arc<dyn RhsOperator> {
        Arc::new(self.operator().expect("validated at build"))
    }
    fn rhs(&self) -> Arc<dyn RhsOperator> {
        with_source(self.field(), &self.src, self.grid)
    }
    fn expects_delay(&self) -> bool {
        !self.trivial
    }
}

// ---------------------------------------------------------------------------
// local

struct LocalBuilder;

struct Local {
    dim: usize,
    g: PointMap,
    lipschitz: f64,
    u0: Vec<C64>,
    eta: f64,
    t_end: f64,
    coef: f64,
    power: u32,
}

impl ProblemBuilder for LocalBuilder {
    fn name(&self) -> &'static str {
        "local"
    }
    fn schema(&self) -> Schema {
        &[("local", &["field", "coef", "lipschitz", "u0", "eta", "t_end"])]
    }
    fn build(&self, cfg: &ProblemConfig) -> Result<Box<dyn Problem>> {
        let coef = cfg.ini.f64_or("local", "coef", 1.0)?;
        // g(x) = coef x^power componentwise
        let power = match cfg.ini.get("local", "field").unwrap_or("square") {
            "zero" => 0,
            "linear" => 1,
            "square" => 2,
            other => {
                return Err(CliError::config(format!(
                    "`local.field` = {other:?}; expected zero, linear or square"
                )))
            }
        };
        let g: PointMap = Arc::new(move |_, x, out| {
            for (o, v) in out.iter_mut().zip(x) {
                *o = if power == 0 { C64::new(0.0, 0.0) } else { v.powu(power) * coef };
            }
        });
        let eta = cfg.ini.require_f64("local", "eta")?;
        let t_end = cfg.ini.f64_or("local", "t_end", cfg.grid.t_max())?;
        Ok(Box::new(Local {
            dim: cfg.dim,
            g,
            lipschitz: cfg.ini.require_f64("local", "lipschitz")?,
            u0: state(cfg, "local", "u0")?,
            eta,
            t_end,
            coef,
            power,
        }))
    }
}

impl Problem for Local {
    fn kind(&self) -> &'static str {
        "local"
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn field(&self) -> Arc<dyn RhsOperator> {
        Arc::new(nemitzki_rhs(self.g.clone(), self.dim, self.lipschitz))
    }
    fn rhs(&self) -> Arc<dyn RhsOperator> {
        Arc::new(
            local_rhs(self.g.clone(), self.lipschitz, self.u0.clone(), self.eta, self.t_end)
                .expect("validated at build"),
        )
    }
    fn expects_delay(&self) -> bool {
        false
    }
    fn solve(&self, cfg: &SolverConfig) -> Result<Solved> {
        let sol = local_solve(self.g.clone(), self.lipschitz, self.u0.clone(), self.eta, self.t_end, cfg)?;
        let extras = vec![
            ("t_star".into(), format!("{:e}", sol.t_star)),
            ("t_theory".into(), format!("{:e}", sol.t_theory)),
        ];
        Ok(Solved { output: sol.report.solution.clone(), report: sol.report, extras })
    }
    /// The unprojected equation; it may blow up.
    fn oracle(&self) -> Result<OracleSpec> {
        let d = self.dim;
        let (coef, power) = (self.coef, self.power as i32);
        let rhs: Rhs = Arc::new(move |x: &Args<'_>, out: &mut [f64]| {
            for (o, v) in out.iter_mut().zip(x.u) {
                *o = if power == 0 { 0.0 } else { coef * v.powi(power) };
            }
        });
        let u0: Vec<f64> = self.u0.iter().map(|z| z.re).collect();
        Ok(OracleSpec { system: DelaySystem::new(d, vec![], History::constant(&u0), rhs)?, past: zero_past(d), observed: d })
    }
}
