//! Builders for concrete problem classes: pointwise right-hand sides, initial
//! value problems, discrete and distributed delay, history-driven problems,
//! symbol-wrapped equations, neutral equations and the projected local solver.

use std::sync::Arc;

use crate::calculus_ops::{cutoff, derivative, translate, CutoffSide, Impulse, ImpulsiveFunction};
use crate::error::{Error, Result};
use crate::fourier_laplace::{
    apply_symbol, make_symbol, spectral_norm, CMatrix, Symbol, SymbolContext, SymbolKind,
};
use crate::solver::{
    admissible_rho, picard_solve, Regime, RhoChoice, RhsOperator, SolveReport, SolverConfig,
};
use crate::weighted_space::{row_norm, GridFunction, TimeGrid, Weight, C64, GRID_EPS};

/// `(t, x, out)`: writes `f(t, x)` into `out`.
pub type PointMap = Arc<dyn Fn(f64, &[C64], &mut [C64]) + Send + Sync>;

/// Weight threshold used by builders whose hypotheses hold for every `rho > 0`.
pub const DEFAULT_RHO_MIN: f64 = 0.5;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

fn zero_onset(f: &GridFunction) -> bool {
    f.grid()
        .times()
        .enumerate()
        .all(|(j, t)| t >= 0.0 || row_norm(f.row(j)) == 0.0)
}

// ---------------------------------------------------------------------------
// Pointwise and initial value problems

/// `u -> (t -> f(t, u(t)))`.
#[derive(Clone)]
pub struct Nemitzki {
    f: PointMap,
    dim: usize,
    lipschitz: f64,
}

pub fn nemitzki_rhs(f: PointMap, dim: usize, lipschitz: f64) -> Nemitzki {
    Nemitzki { f, dim, lipschitz }
}

impl RhsOperator for Nemitzki {
    fn label(&self) -> String {
        "nemitzki".into()
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
    fn regime(&self) -> Regime {
        Regime::IntoZero
    }
    fn rho_min(&self) -> f64 {
        DEFAULT_RHO_MIN
    }
    fn apply(&self, u: &GridFunction, _w: Weight) -> Result<ImpulsiveFunction> {
        check_dim(u, self.dim)?;
        let grid = *u.grid();
        let mut out = GridFunction::zeros(grid, self.dim);
        for j in 0..grid.n() {
            (self.f)(grid.time(j), u.row(j), out.row_mut(j));
        }
        Ok(ImpulsiveFunction::regular(out))
    }
}

fn check_dim(u: &GridFunction, dim: usize) -> Result<()> {
    if u.dim() != dim {
        return Err(Error::Shape(format!(
            "operator of dimension {dim} applied to dimension {}",
            u.dim()
        )));
    }
    Ok(())
}

/// `F + f` for a fixed source `f`.
pub struct Sourced {
    inner: Arc<dyn RhsOperator>,
    source: GridFunction,
}

pub fn add_source(inner: Arc<dyn RhsOperator>, source: GridFunction) -> Sourced {
    Sourced { inner, source }
}

impl Sourced {
    fn combine(&self, base: ImpulsiveFunction) -> Result<ImpulsiveFunction> {
        let onset = base.onset();
        let impulses = base.impulses().to_vec();
        let regular = base.regular_part().add(&self.source)?;
        let out = ImpulsiveFunction::new(regular, impulses)?;
        Ok(match onset {
            // the source may break the declared switch-on
            Some(a) if a == 0.0 && zero_onset(&self.source) => out.with_onset(a),
            _ => out,
        })
    }
}

impl RhsOperator for Sourced {
    fn label(&self) -> String {
        format!("{} + source", self.inner.label())
    }
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn lipschitz(&self) -> f64 {
        self.inner.lipschitz()
    }
    fn regime(&self) -> Regime {
        self.inner.regime()
    }
    fn rho_min(&self) -> f64 {
        self.inner.rho_min()
    }
    fn contraction_factor(&self, rho: f64) -> f64 {
        self.inner.contraction_factor(rho)
    }
    fn apply(&self, u: &GridFunction, w: Weight) -> Result<ImpulsiveFunction> {
        self.combine(self.inner.apply(u, w)?)
    }
    fn apply_with_derivative(
        &self,
        u: &GridFunction,
        du: &GridFunction,
        w: Weight,
    ) -> Result<ImpulsiveFunction> {
        self.combine(self.inner.apply_with_derivative(u, du, w)?)
    }
}

/// `u -> cutoff(F(u), t >= 0) + delta_0 (x) u0`.
pub struct Ivp {
    inner: Arc<dyn RhsOperator>,
    u0: Vec<C64>,
}

pub fn ivp_problem(inner: Arc<dyn RhsOperator>, u0: Vec<C64>) -> Result<Ivp> {
    if u0.len() != inner.dim() {
        return Err(Error::Shape(format!(
            "initial value of length {} for dimension {}",
            u0.len(),
            inner.dim()
        )));
    }
    Ok(Ivp { inner, u0 })
}

impl Ivp {
    fn restrict(&self, base: ImpulsiveFunction) -> Result<ImpulsiveFunction> {
        let grid = *base.regular_part().grid();
        if !grid.contains(0.0) {
            return Err(Error::Domain(
                "initial value problems need t = 0 inside the grid".into(),
            ));
        }
        let regular = cutoff(base.regular_part(), CutoffSide::Above(0.0));
        let mut impulses: Vec<Impulse> = base
            .impulses()
            .iter()
            .filter(|i| i.location >= 0.0)
            .cloned()
            .collect();
        impulses.push(Impulse {
            location: 0.0,
            amplitude: self.u0.clone(),
        });
        Ok(ImpulsiveFunction::new(regular, impulses)?.with_onset(0.0))
    }
}

impl RhsOperator for Ivp {
    fn label(&self) -> String {
        format!("ivp({})", self.inner.label())
    }
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn lipschitz(&self) -> f64 {
        self.inner.lipschitz()
    }
    fn regime(&self) -> Regime {
        self.inner.regime()
    }
    fn rho_min(&self) -> f64 {
        self.inner.rho_min()
    }
    fn contraction_factor(&self, rho: f64) -> f64 {
        self.inner.contraction_factor(rho)
    }
    fn apply(&self, u: &GridFunction, w: Weight) -> Result<ImpulsiveFunction> {
        self.restrict(self.inner.apply(u, w)?)
    }
    fn apply_with_derivative(
        &self,
        u: &GridFunction,
        du: &GridFunction,
        w: Weight,
    ) -> Result<ImpulsiveFunction> {
        self.restrict(self.inner.apply_with_derivative(u, du, w)?)
    }
}

/// Bound on `|u - w|_{rho,0}` for two initial value problems whose
/// right-hand sides have Lipschitz constants `c` and `d`.
pub fn ivp_dependence_bound(c: f64, d: f64, w: Weight, du0: f64, sup_diff: f64) -> Result<f64> {
    let two_rho = 2.0 * w.rho();
    if two_rho <= c + d {
        return Err(Error::Domain(format!(
            "2 rho = {two_rho} must exceed C + D = {}",
            c + d
        )));
    }
    Ok((two_rho.sqrt() * du0 + 2.0 * sup_diff) / (two_rho - (c + d)))
}

// ---------------------------------------------------------------------------
// History and past windows

/// Prescribed past `x` on `[-T, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryFunction {
    samples: GridFunction,
}

impl HistoryFunction {
    /// Samples on a grid ending at 0; the last row is `x(0-)`.
    pub fn from_samples(samples: GridFunction) -> Result<Self> {
        let g = samples.grid();
        if g.t_max().abs() > GRID_EPS * g.dt() || g.t_min() >= 0.0 {
            return Err(Error::InvalidGrid(format!(
                "history grid [{}, {}] must end at 0",
                g.t_min(),
                g.t_max()
            )));
        }
        if !samples.is_finite() {
            return Err(Error::Numeric("non-finite history samples".into()));
        }
        Ok(HistoryFunction { samples })
    }

    pub fn from_fn(
        depth: f64,
        dt: f64,
        dim: usize,
        f: impl FnMut(f64, &mut [C64]),
    ) -> Result<Self> {
        let grid = TimeGrid::with_step(-depth, 0.0, dt)?;
        Self::from_samples(GridFunction::from_fn(grid, dim, f))
    }

    pub fn constant(value: Vec<C64>, depth: f64, dt: f64) -> Result<Self> {
        let dim = value.len();
        Self::from_fn(depth, dt, dim, |_, out| out.copy_from_slice(&value))
    }

    /// Component `c` is `sum_k coeffs[c][k] t^k`.
    pub fn polynomial(coeffs: Vec<Vec<f64>>, depth: f64, dt: f64) -> Result<Self> {
        let dim = coeffs.len();
        Self::from_fn(depth, dt, dim, |t, out| {
            for (o, cs) in out.iter_mut().zip(&coeffs) {
                let v = cs.iter().rev().fold(0.0, |acc, c| acc * t + c);
                *o = C64::new(v, 0.0);
            }
        })
    }

    pub fn depth(&self) -> f64 {
        -self.samples.grid().t_min()
    }

    pub fn dim(&self) -> usize {
        self.samples.dim()
    }

    pub fn samples(&self) -> &GridFunction {
        &self.samples
    }

    pub fn value_at_zero_minus(&self) -> &[C64] {
        self.samples.row(self.samples.grid().n() - 1)
    }

    /// Zero for `t >= 0` and before the stored window.
    pub fn eval_into(&self, t: f64, out: &mut [C64]) {
        if t >= 0.0 {
            out.fill(ZERO);
        } else {
            self.samples.eval_into(t, out);
        }
    }
}

/// Sliding view `(theta -> u(t_j + theta))` with `theta` running over
/// `depth` grid steps into the past.
pub struct PastWindow<'a> {
    current: &'a GridFunction,
    history: Option<&'a HistoryFunction>,
    depth: usize,
}

pub fn whole_past_lift(u: &GridFunction, depth: usize) -> PastWindow<'_> {
    PastWindow {
        current: u,
        history: None,
        depth,
    }
}

impl<'a> PastWindow<'a> {
    /// Values before the grid start are taken from `history` when it is
    /// given (and only there, where `t < 0`), zero otherwise.
    pub fn new(
        current: &'a GridFunction,
        history: Option<&'a HistoryFunction>,
        depth: usize,
    ) -> Self {
        PastWindow {
            current,
            history,
            depth,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        self.current.grid()
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn dim(&self) -> usize {
        self.current.dim()
    }

    /// `u(t_j - i dt)`.
    pub fn value_into(&self, j: usize, i: usize, out: &mut [C64]) {
        if j >= i {
            out.copy_from_slice(self.current.row(j - i));
        } else {
            out.fill(ZERO);
        }
        if let Some(h) = self.history {
            let t = self.grid().time(j) - i as f64 * self.grid().dt();
            if t < -GRID_EPS * self.grid().dt() {
                let mut tmp = vec![ZERO; out.len()];
                h.eval_into(t, &mut tmp);
                for (o, x) in out.iter_mut().zip(tmp) {
                    *o += x;
                }
            }
        }
    }

    /// `u(t_j - lag)` for any `lag >= 0`, interpolating between nodes.
    pub fn at_lag(&self, j: usize, lag: f64, out: &mut [C64]) {
        let s = lag / self.grid().dt();
        let i = (s + GRID_EPS).floor();
        let frac = s - i;
        self.value_into(j, i as usize, out);
        if frac > GRID_EPS * s.max(1.0) {
            let mut next = vec![ZERO; out.len()];
            self.value_into(j, i as usize + 1, &mut next);
            for (o, x) in out.iter_mut().zip(next) {
                *o = *o * (1.0 - frac) + x * frac;
            }
        }
    }

    /// `(int e^{-2 rho t} int_{-depth dt}^0 |u(t+theta)|^2 dtheta dt)^{1/2}`.
    pub fn norm(&self, w: Weight) -> f64 {
        let grid = *self.grid();
        let (n, dt, m) = (grid.n(), grid.dt(), self.depth);
        let d = self.dim();
        let mut sq = vec![0.0; n];
        let mut buf = vec![ZERO; d];
        for (j, s) in sq.iter_mut().enumerate() {
            if self.history.is_none() {
                break;
            }
            let mut acc = 0.0;
            for i in 0..=m {
                self.value_into(j, i, &mut buf);
                let c = if i == 0 || i == m { 0.5 } else { 1.0 };
                acc += c * buf.iter().map(|z| z.norm_sqr()).sum::<f64>();
            }
            *s = acc * dt;
        }
        if self.history.is_none() {
            // prefix sums over |u_k|^2, zero before the grid start
            let p: Vec<f64> = std::iter::once(0.0)
                .chain((0..n).scan(0.0, |acc, k| {
                    *acc += row_norm(self.current.row(k)).powi(2);
                    Some(*acc)
                }))
                .collect();
            let at = |k: usize| row_norm(self.current.row(k)).powi(2);
            for (j, s) in sq.iter_mut().enumerate() {
                let lo = j as i64 - m as i64;
                let full = p[j + 1] - p[lo.max(0) as usize];
                let mut acc = full - 0.5 * at(j);
                if lo >= 0 {
                    acc -= 0.5 * at(lo as usize);
                }
                *s = acc * dt;
            }
        }
        let mut total = 0.0;
        for (j, s) in sq.iter().enumerate() {
            let c = if j == 0 || j + 1 == n { 0.5 } else { 1.0 };
            total += c * s * (-2.0 * w.rho() * grid.time(j)).exp();
        }
        (total * dt).sqrt()
    }
}

/// Right-hand side reading the past through a [`PastWindow`].
pub trait PastMap: Send + Sync {
    fn label(&self) -> String;
    fn dim(&self) -> usize;
    fn lipschitz(&self) -> f64;
    /// Memory depth: the map reads `u(t + theta)` for `-horizon <= theta <= 0`.
    fn horizon(&self) -> f64;
    fn rho_min(&self) -> f64 {
        DEFAULT_RHO_MIN
    }
    fn eval(&self, window: &PastWindow<'_>, j: usize, out: &mut [C64]);
}

fn depth_steps(horizon: f64, dt: f64) -> usize {
    (horizon / dt - GRID_EPS).ceil().max(0.0) as usize
}

/// `g(t, u(t + theta_0), ..., u(t + theta_{N-1}))` with past values zero
/// before the grid start, or read from a history in [`history_problem`].
#[derive(Clone)]
pub struct DiscreteDelay {
    g: PointMap,
    thetas: Vec<f64>,
    dim: usize,
    lipschitz: f64,
}

/// `g` receives the `N` delayed states concatenated, `N * dim` entries.
pub fn discrete_delay_rhs(
    g: PointMap,
    thetas: Vec<f64>,
    dim: usize,
    lipschitz: f64,
) -> Result<DiscreteDelay> {
    if thetas.is_empty() {
        return Err(Error::Domain("at least one delay is required".into()));
    }
    if let Some(&theta) = thetas.iter().find(|t| **t > 0.0 || !t.is_finite()) {
        return Err(Error::NotADelay { theta });
    }
    for (i, a) in thetas.iter().enumerate() {
        if thetas[..i].iter().any(|b| b == a) {
            return Err(Error::Domain(format!("delay {a} listed twice")));
        }
    }
    Ok(DiscreteDelay {
        g,
        thetas,
        dim,
        lipschitz,
    })
}

impl DiscreteDelay {
    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }
}

impl RhsOperator for DiscreteDelay {
    fn label(&self) -> String {
        format!("discrete_delay({:?})", self.thetas)
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn lipschitz(&self) -> f64 {
        // |tau_theta| <= exp(rho theta) <= 1 for each of the N arguments
        self.thetas.len() as f64 * self.lipschitz
    }
    fn regime(&self) -> Regime {
        Regime::IntoZero
    }
    fn rho_min(&self) -> f64 {
        DEFAULT_RHO_MIN
    }
    fn apply(&self, u: &GridFunction, _w: Weight) -> Result<ImpulsiveFunction> {
        check_dim(u, self.dim)?;
        let grid = *u.grid();
        let shifted: Vec<GridFunction> = self.thetas.iter().map(|&th| translate(u, th)).collect();
        let d = self.dim;
        let mut states = vec![ZERO; d * self.thetas.len()];
        let mut out = GridFunction::zeros(grid, d);
        for j in 0..grid.n() {
            for (k, s) in shifted.iter().enumerate() {
                states[k * d..(k + 1) * d].copy_from_slice(s.row(j));
            }
            (self.g)(grid.time(j), &states, out.row_mut(j));
        }
        Ok(ImpulsiveFunction::regular(out))
    }
}

impl PastMap for DiscreteDelay {
    fn label(&self) -> String {
        RhsOperator::label(self)
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn lipschitz(&self) -> f64 {
        RhsOperator::lipschitz(self)
    }
    fn horizon(&self) -> f64 {
        self.thetas.iter().fold(0.0, |m, t| m.max(-t))
    }
    fn eval(&self, window: &PastWindow<'_>, j: usize, out: &mut [C64]) {
        let d = self.dim;
        let mut states = vec![ZERO; d * self.thetas.len()];
        for (k, &th) in self.thetas.iter().enumerate() {
            window.at_lag(j, -th, &mut states[k * d..(k + 1) * d]);
        }
        (self.g)(window.grid().time(j), &states, out);
    }
}

/// `(t, theta, x, out)`: the integrand of a distributed delay.
pub type KernelMap = Arc<dyn Fn(f64, f64, &[C64], &mut [C64]) + Send + Sync>;

/// `t -> int_{-horizon}^0 h(t, theta, u(t + theta)) dtheta` (trapezoid).
#[derive(Clone)]
pub struct Integro {
    h: KernelMap,
    dim: usize,
    horizon: f64,
    mass: f64,
}

/// `bound(theta)` is the Lipschitz constant `L(theta)` of `h(t, theta, .)`;
/// its integral over the horizon is used as the Lipschitz constant.
pub fn integro_rhs(
    h: KernelMap,
    bound: impl Fn(f64) -> f64,
    dim: usize,
    horizon: f64,
) -> Result<Integro> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Domain(format!("horizon {horizon} must be positive")));
    }
    let m = 4096;
    let step = horizon / m as f64;
    // Simpson's rule
    let mass = (0..=m)
        .map(|i| {
            let c = if i == 0 || i == m {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * bound(-(i as f64) * step).abs()
        })
        .sum::<f64>()
        * step
        / 3.0;
    Ok(Integro {
        h,
        dim,
        horizon,
        mass,
    })
}

impl Integro {
    /// `exp(-rho horizon) int L`, the weight of the discarded past.
    pub fn truncation_bound(&self, w: Weight) -> f64 {
        (-w.rho() * self.horizon).exp() * self.mass
    }

    fn eval_row(&self, window: &PastWindow<'_>, j: usize, out: &mut [C64]) {
        let grid = window.grid();
        let dt = grid.dt();
        let m = depth_steps(self.horizon, dt);
        let t = grid.time(j);
        let d = self.dim;
        let mut x = vec![ZERO; d];
        let mut y = vec![ZERO; d];
        out.fill(ZERO);
        for i in 0..=m {
            let theta = -(i as f64) * dt;
            if -theta > self.horizon + GRID_EPS * dt {
                break;
            }
            window.value_into(j, i, &mut x);
            (self.h)(t, theta, &x, &mut y);
            let c = if i == 0 || i == m { 0.5 * dt } else { dt };
            for (o, v) in out.iter_mut().zip(&y) {
                *o += v * c;
            }
        }
    }
}

impl RhsOperator for Integro {
    fn label(&self) -> String {
        format!("integro(horizon={})", self.horizon)
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn lipschitz(&self) -> f64 {
        self.mass
    }
    fn regime(&self) -> Regime {
        Regime::IntoZero
    }
    fn rho_min(&self) -> f64 {
        DEFAULT_RHO_MIN
    }
    fn apply(&self, u: &GridFunction, _w: Weight) -> Result<ImpulsiveFunction> {
        check_dim(u, self.dim)?;
        let grid = *u.grid();
        let window = whole_past_lift(u, depth_steps(self.horizon, grid.dt()));
        let mut out = GridFunction::zeros(grid, self.dim);
        for j in 0..grid.n() {
            self.eval_row(&window, j, out.row_mut(j));
        }
        Ok(ImpulsiveFunction::regular(out))
    }
}

impl PastMap for Integro {
    fn label(&self) -> String {
        RhsOperator::label(self)
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn lipschitz(&self) -> f64 {
        self.mass
    }
    fn horizon(&self) -> f64 {
        self.horizon
    }
    fn eval(&self, window: &PastWindow<'_>, j: usize, out: &mut [C64]) {
        self.eval_row(window, j, out)
    }
}

/// `w -> chi_{t > 0} Phi(window of hist + w) + delta_0 (x) hist(0-)`.
pub struct HistoryRhs {
    phi: Arc<dyn PastMap>,
    hist: HistoryFunction,
}

impl HistoryRhs {
    pub fn new(phi: Arc<dyn PastMap>, hist: HistoryFunction) -> Result<Self> {
        if phi.dim() != hist.dim() {
            return Err(Error::Shape(format!(
                "history of dimension {} for a map of dimension {}",
                hist.dim(),
                phi.dim()
            )));
        }
        if phi.horizon() > hist.depth() * (1.0 + 1e-9) {
            return Err(Error::HistoryUnderrun {
                horizon: phi.horizon(),
                available: hist.depth(),
            });
        }
        Ok(HistoryRhs { phi, hist })
    }
}

impl RhsOperator for HistoryRhs {
    fn label(&self) -> String {
        format!("history({})", self.phi.label())
    }
    fn dim(&self) -> usize {
        self.phi.dim()
    }
    fn lipschitz(&self) -> f64 {
        self.phi.lipschitz()
    }
    fn regime(&self) -> Regime {
        Regime::IntoZero
    }
    fn rho_min(&self) -> f64 {
        self.phi.rho_min()
    }
    fn apply(&self, w: &GridFunction, _weight: Weight) -> Result<ImpulsiveFunction> {
        check_dim(w, self.dim())?;
        let grid = *w.grid();
        if !grid.contains(0.0) {
            return Err(Error::Domain(
                "history problems need t = 0 inside the grid".into(),
            ));
        }
        let window = PastWindow::new(
            w,
            Some(&self.hist),
            depth_steps(self.phi.horizon(), grid.dt()),
        );
        let mut out = GridFunction::zeros(grid, self.dim());
        for j in grid.index_at_or_after(0.0)..grid.n() {
            self.phi.eval(&window, j, out.row_mut(j));
        }
        let jump = Impulse {
            location: 0.0,
            amplitude: self.hist.value_at_zero_minus().to_vec(),
        };
        Ok(ImpulsiveFunction::new(out, vec![jump])?.with_onset(0.0))
    }
}

#[derive(Debug, Clone)]
pub struct HistorySolution {
    /// Report for `w`, the part of the solution on `t >= 0`.
    pub report: SolveReport,
    /// History on `t < 0` followed by `w`, on a grid reaching back over the history.
    pub spliced: GridFunction,
}

pub fn history_problem(
    phi: Arc<dyn PastMap>,
    hist: HistoryFunction,
    cfg: &SolverConfig,
) -> Result<HistorySolution> {
    let grid = cfg.grid;
    let rhs = HistoryRhs::new(phi, hist.clone())?;
    let report = picard_solve(&rhs, cfg)?;
    let w = &report.solution;
    let d = w.dim();

    let zero = grid.index_at_or_after(0.0);
    let leak = (0..zero).map(|j| row_norm(w.row(j))).fold(0.0, f64::max);
    if leak > 1e-12 {
        return Err(Error::Numeric(format!(
            "solution leaks {leak:e} into t < 0"
        )));
    }
    let jump: Vec<C64> = w
        .row(zero)
        .iter()
        .zip(hist.value_at_zero_minus())
        .map(|(a, b)| a - b)
        .collect();
    if row_norm(&jump) > 1e-12 * (1.0 + row_norm(hist.value_at_zero_minus())) {
        return Err(Error::Numeric(
            "w(0+) differs from the history at 0-".into(),
        ));
    }

    let back = (hist.depth() / grid.dt() + GRID_EPS).floor();
    let start = (grid.t_min()).min(-back * grid.dt());
    let steps = ((grid.t_max() - start) / grid.dt()).round() as usize;
    let ext = TimeGrid::new(start, grid.t_max(), steps + 1)?;
    let spliced = GridFunction::from_fn(ext, d, |t, out| {
        if t < -GRID_EPS * grid.dt() {
            hist.eval_into(t, out)
        } else {
            w.eval_into(t, out)
        }
    });
    Ok(HistorySolution { report, spliced })
}

// ---------------------------------------------------------------------------
// Symbol-wrapped and neutral equations

/// `u -> M(d^{-1}) F(N(d^{-1}) u)`.
pub struct Wrapped {
    m: Arc<dyn Symbol>,
    f: Arc<dyn RhsOperator>,
    n: Arc<dyn Symbol>,
}

pub fn wrapped_rhs(
    m: Arc<dyn Symbol>,
    f: Arc<dyn RhsOperator>,
    n: Arc<dyn Symbol>,
) -> Result<Wrapped> {
    if m.dim() != f.dim() || n.dim() != f.dim() {
        return Err(Error::Shape(
            "symbols and right-hand side differ in dimension".into(),
        ));
    }
    Ok(Wrapped { m, f, n })
}

impl RhsOperator for Wrapped {
    fn label(&self) -> String {
        format!(
            "{} . {} . {}",
            self.m.label(),
            self.f.label(),
            self.n.label()
        )
    }
    fn dim(&self) -> usize {
        self.f.dim()
    }
    fn lipschitz(&self) -> f64 {
        self.f.lipschitz() * self.m.norm_bound() * self.n.norm_bound()
    }
    fn regime(&self) -> Regime {
        self.f.regime()
    }
    fn rho_min(&self) -> f64 {
        self.f
            .rho_min()
            .max(0.5 / self.m.radius())
            .max(0.5 / self.n.radius())
    }
    fn apply(&self, u: &GridFunction, w: Weight) -> Result<ImpulsiveFunction> {
        let x = apply_symbol(u, self.n.as_ref(), w)?;
        let y = self.f.apply(&x, w)?;
        if y.has_impulses() {
            return Err(Error::UnsupportedComposition(
                "symbols act on regular parts; the wrapped right-hand side produced impulses"
                    .into(),
            ));
        }
        Ok(ImpulsiveFunction::regular(apply_symbol(
            y.regular_part(),
            self.m.as_ref(),
            w,
        )?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeutralAdmissibility {
    pub norm_c: f64,
    /// `ln |C| / h1`; any `rho` above it makes `I - C tau_{-h1}` invertible.
    pub minimal_rho: f64,
}

pub fn neutral_admissibility(c: &CMatrix, h1: f64) -> NeutralAdmissibility {
    let norm_c = spectral_norm(c);
    NeutralAdmissibility {
        norm_c,
        minimal_rho: norm_c.ln() / h1,
    }
}

/// Right-hand side `(I - C tau_{-h1})^{-1} ((A + B tau_{-h2}) u + f)` of
/// `u' - C u'(t - h1) = A u + B u(t - h2) + f` with zero past.
#[allow(clippy::too_many_arguments)]
pub fn neutral_linear_rhs(
    a: CMatrix,
    b: CMatrix,
    c: CMatrix,
    h1: f64,
    h2: f64,
    f: &GridFunction,
    rho: RhoChoice,
) -> Result<Wrapped> {
    let d = a.nrows();
    if f.dim() != d {
        return Err(Error::Shape(format!(
            "source of dimension {} for {d}x{d} matrices",
            f.dim()
        )));
    }
    if !(h1 > 0.0 && h2 > 0.0) {
        return Err(Error::Domain("neutral delays must be positive".into()));
    }
    let adm = neutral_admissibility(&c, h1);
    let base = adm.minimal_rho.max(0.0) + std::f64::consts::LN_2 / h1;
    let rho_min = match rho {
        RhoChoice::Fixed(w) => {
            if w.rho() <= adm.minimal_rho {
                return Err(Error::NotInvertible {
                    required_rho: adm.minimal_rho,
                });
            }
            w.rho()
        }
        RhoChoice::Auto => base,
    };
    let ctx = SymbolContext { dim: d, rho_min };
    let resolvent = make_symbol(SymbolKind::NeutralResolvent { c, h: h1, rho_min }, &ctx)?;
    let affine = make_symbol(SymbolKind::MatrixAffine { a, b, h: h2 }, &ctx)?;
    let source = f.clone();
    let plus_f = crate::solver::FnRhs::new("v + f", d, 1.0, move |v, _| {
        Ok(ImpulsiveFunction::regular(v.add(&source)?))
    })
    .with_rho_min(rho_min * (1.0 - 1e-6));
    wrapped_rhs(resolvent, Arc::new(plus_f), affine)
}

/// Solves the neutral equation of [`neutral_linear_rhs`] on the solver grid.
pub fn neutral_linear_solve(
    a: CMatrix,
    b: CMatrix,
    c: CMatrix,
    h1: f64,
    h2: f64,
    f: &GridFunction,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    if f.grid() != &cfg.grid {
        return Err(Error::IncompatibleGrid(
            "source must live on the solver grid".into(),
        ));
    }
    let rhs = neutral_linear_rhs(a, b, c, h1, h2, f, cfg.rho)?;
    picard_solve(&rhs, cfg)
}

/// Strictly increasing bijection of the real line with `|alpha'| <= lipschitz`.
#[derive(Clone)]
pub struct MonotoneMap {
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    inverse: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
    lipschitz: f64,
}

impl MonotoneMap {
    pub fn new(f: impl Fn(f64) -> f64 + Send + Sync + 'static, lipschitz: f64) -> Self {
        MonotoneMap {
            f: Arc::new(f),
            inverse: None,
            lipschitz,
        }
    }

    pub fn with_inverse(mut self, inv: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.inverse = Some(Arc::new(inv));
        self
    }

    /// `s -> s + shift`.
    pub fn shift(shift: f64) -> Self {
        MonotoneMap::new(move |s| s + shift, 1.0).with_inverse(move |t| t - shift)
    }

    pub fn eval(&self, s: f64) -> f64 {
        (self.f)(s)
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Closed form when supplied, bisection to `1e-12` otherwise.
    pub fn invert(&self, t: f64) -> f64 {
        if let Some(inv) = &self.inverse {
            return inv(t);
        }
        let (mut lo, mut hi) = (t - 1.0, t + 1.0);
        let mut step = 1.0;
        while self.eval(lo) > t {
            step *= 2.0;
            lo = t - step;
        }
        step = 1.0;
        while self.eval(hi) < t {
            step *= 2.0;
            hi = t + step;
        }
        while hi - lo > 1e-12 * (1.0 + t.abs()) {
            let mid = 0.5 * (lo + hi);
            if self.eval(mid) < t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Checks monotonicity and `map(s) >= s + gap` on samples of `[a, b]`.
    fn check_on(&self, a: f64, b: f64, gap: f64, name: &str) -> Result<()> {
        let n = 2000;
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=n {
            let s = a + (b - a) * k as f64 / n as f64;
            let v = self.eval(s);
            if !v.is_finite() || v <= prev {
                return Err(Error::Domain(format!(
                    "{name} is not strictly increasing near s = {s}"
                )));
            }
            if v < s + gap - 1e-12 * (1.0 + s.abs()) {
                return Err(Error::Domain(format!(
                    "{name}({s}) = {v} is below s + {gap}"
                )));
            }
            prev = v;
        }
        Ok(())
    }
}

/// `(t, x, y, out)`: `Phi` at time `t` of `x = u(alpha^{-1}(t))`, `y = u'(beta^{-1}(t))`.
pub type NeutralMap = Arc<dyn Fn(f64, &[C64], &[C64], &mut [C64]) + Send + Sync>;

/// `u' = Phi(u o alpha^{-1}, u' o beta^{-1}) + f` with zero past.
pub struct NeutralGeneral {
    phi: NeutralMap,
    dim: usize,
    lipschitz: f64,
    alpha: MonotoneMap,
    beta: MonotoneMap,
    eps0: f64,
    source: Option<GridFunction>,
    rho_min: f64,
}

pub fn neutral_general_rhs(
    phi: NeutralMap,
    dim: usize,
    lipschitz: f64,
    alpha: MonotoneMap,
    beta: MonotoneMap,
    eps0: f64,
    source: Option<GridFunction>,
) -> Result<NeutralGeneral> {
    if !(eps0 > 0.0) {
        return Err(Error::Domain(format!("eps0 = {eps0} must be positive")));
    }
    let (a, b) = match &source {
        Some(s) => (s.grid().t_min(), s.grid().t_max()),
        None => (-10.0, 10.0),
    };
    alpha.check_on(a, b, 0.0, "alpha")?;
    beta.check_on(a, b, eps0, "beta")?;
    let mut op = NeutralGeneral {
        phi,
        dim,
        lipschitz,
        alpha,
        beta,
        eps0,
        source,
        rho_min: 0.0,
    };
    op.rho_min = op.threshold_rho();
    Ok(op)
}

impl NeutralGeneral {
    /// Smallest `rho` with contraction factor 1 (the factor decreases in `rho`).
    fn threshold_rho(&self) -> f64 {
        let f = |r: f64| self.contraction_factor(r);
        let mut hi = 1.0;
        while f(hi) >= 1.0 && hi < 1e6 {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if mid > 0.0 && f(mid) < 1.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi.max(1e-3)
    }

    fn eval(&self, u: &GridFunction, du: &GridFunction) -> Result<ImpulsiveFunction> {
        check_dim(u, self.dim)?;
        let grid = *u.grid();
        let d = self.dim;
        let (mut x, mut y) = (vec![ZERO; d], vec![ZERO; d]);
        let mut out = GridFunction::zeros(grid, d);
        for j in 0..grid.n() {
            let t = grid.time(j);
            u.eval_into(self.alpha.invert(t), &mut x);
            du.eval_into(self.beta.invert(t), &mut y);
            (self.phi)(t, &x, &y, out.row_mut(j));
        }
        if let Some(s) = &self.source {
            out = out.add(s)?;
        }
        Ok(ImpulsiveFunction::regular(out))
    }
}

impl RhsOperator for NeutralGeneral {
    fn label(&self) -> String {
        format!("neutral_general(eps0={})", self.eps0)
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
    fn regime(&self) -> Regime {
        Regime::IntoZeroFromOne
    }
    fn rho_min(&self) -> f64 {
        self.rho_min
    }
    fn contraction_factor(&self, rho: f64) -> f64 {
        self.lipschitz
            * (self.alpha.lipschitz().sqrt() / rho
                + self.beta.lipschitz().sqrt() * (-rho * self.eps0).exp())
    }
    fn apply(&self, u: &GridFunction, _w: Weight) -> Result<ImpulsiveFunction> {
        self.eval(u, &derivative(u)?)
    }
    fn apply_with_derivative(
        &self,
        u: &GridFunction,
        du: &GridFunction,
        _w: Weight,
    ) -> Result<ImpulsiveFunction> {
        self.eval(u, du)
    }
}

// ---------------------------------------------------------------------------
// Local solutions

/// Closed ball `B(center, radius)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BallProjection {
    pub center: Vec<C64>,
    pub radius: f64,
}

impl BallProjection {
    /// Points inside the ball are returned untouched.
    pub fn project(&self, x: &[C64], out: &mut [C64]) {
        let diff: Vec<C64> = x.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        let r = row_norm(&diff);
        if r <= self.radius {
            out.copy_from_slice(x);
        } else {
            let s = self.radius / r;
            for ((o, c), dv) in out.iter_mut().zip(&self.center).zip(diff) {
                *o = c + dv * s;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct LocalSolution {
    pub report: SolveReport,
    /// Last time up to which the solution stays in the ball.
    pub t_star: f64,
    /// Time guaranteed by the a-priori estimate (0 when it guarantees nothing).
    pub t_theory: f64,
}

/// Relative slack on the ball radius when reading `t_star` off the
/// discrete solution; it absorbs the `O(dt^2)` error of the integrator.
pub const BALL_SLACK: f64 = 1e-5;

/// `v -> chi_{[0,T]} g(t, P v) + delta_0 (x) u0` with `P` the projection onto `B(u0, eta)`.
pub fn local_rhs(g: PointMap, lipschitz: f64, u0: Vec<C64>, eta: f64, t_end: f64) -> Result<Ivp> {
    if !(eta > 0.0) {
        return Err(Error::Domain(format!("radius {eta} must be positive")));
    }
    let dim = u0.len();
    let ball = BallProjection {
        center: u0.clone(),
        radius: eta,
    };
    let projected: PointMap = Arc::new(move |t, x, out| {
        if t > t_end + GRID_EPS {
            out.fill(ZERO);
            return;
        }
        let mut p = vec![ZERO; x.len()];
        ball.project(x, &mut p);
        g(t, &p, out);
    });
    ivp_problem(Arc::new(nemitzki_rhs(projected, dim, lipschitz)), u0)
}

/// Solves `v' = chi_{[0,T]} g(t, P v) + delta_0 (x) u0` globally and reports
/// how long `v` stays in `B(u0, eta)`, where it solves `v' = g(t, v)`.
pub fn local_solve(
    g: PointMap,
    lipschitz: f64,
    u0: Vec<C64>,
    eta: f64,
    t_end: f64,
    cfg: &SolverConfig,
) -> Result<LocalSolution> {
    if !(eta > 0.0) {
        return Err(Error::Domain(format!("radius {eta} must be positive")));
    }
    let grid = cfg.grid;
    if !(t_end > 0.0) || t_end > grid.t_max() + GRID_EPS * grid.dt() || !grid.contains(0.0) {
        return Err(Error::Domain(format!(
            "T = {t_end} must lie in (0, {}] with 0 on the grid",
            grid.t_max()
        )));
    }
    let ivp = local_rhs(g.clone(), lipschitz, u0.clone(), eta, t_end)?;
    let report = picard_solve(&ivp, cfg)?;
    let v = &report.solution;

    let start = grid.index_at_or_after(0.0);
    let limit = eta * (1.0 + BALL_SLACK);
    let mut t_star = 0.0;
    for j in start..grid.n() {
        let t = grid.time(j);
        if t > t_end + GRID_EPS * grid.dt() {
            break;
        }
        let dist = row_norm(
            &v.row(j)
                .iter()
                .zip(&u0)
                .map(|(a, b)| a - b)
                .collect::<Vec<_>>(),
        );
        if dist > limit {
            break;
        }
        t_star = t;
    }
    if t_star <= 0.0 {
        return Err(Error::DegenerateRadius);
    }
    let t_theory = local_time_estimate(
        g.as_ref(),
        lipschitz,
        &u0,
        eta,
        t_end,
        report.rho_used,
        grid.dt(),
    );
    Ok(LocalSolution {
        report,
        t_star,
        t_theory,
    })
}

/// Largest grid time `t < 2 rho / L^2` at which the a-priori bound
/// `e^{rho t} sqrt((1 - e^{-2 rho t}) / (2 rho)) / (sqrt(2 rho) - L sqrt t) sup|g(., u0)|`
/// stays within `eta`.
pub fn local_time_estimate(
    g: &(dyn Fn(f64, &[C64], &mut [C64]) + Send + Sync),
    lipschitz: f64,
    u0: &[C64],
    eta: f64,
    t_end: f64,
    w: Weight,
    dt: f64,
) -> f64 {
    let rho = w.rho();
    let limit = if lipschitz > 0.0 {
        2.0 * rho / (lipschitz * lipschitz)
    } else {
        f64::INFINITY
    };
    let mut out = vec![ZERO; u0.len()];
    let mut sup_g: f64 = 0.0;
    let mut best = 0.0;
    let mut t = 0.0;
    while t <= t_end + GRID_EPS * dt && t < limit {
        g(t, u0, &mut out);
        sup_g = sup_g.max(row_norm(&out));
        if t > 0.0 {
            let denom = (2.0 * rho).sqrt() - lipschitz * t.sqrt();
            let bound = (rho * t).exp() * ((1.0 - (-2.0 * rho * t).exp()) / (2.0 * rho)).sqrt()
                / denom
                * sup_g;
            if bound > eta {
                break;
            }
            best = t;
        }
        t += dt;
    }
    best
}

/// Contraction factor and weight that a solve of `f` under `cfg` would use.
pub fn admissibility_report(f: &dyn RhsOperator, cfg: &SolverConfig) -> Result<(f64, f64)> {
    let (w, factor) = admissible_rho(f, cfg)?;
    Ok((w.rho(), factor))
}
