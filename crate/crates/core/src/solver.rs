//! Picard iteration for `d_rho u = F(u)`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::calculus_ops::{integrate_impulsive, ImpulsiveFunction};
use crate::error::{Error, Result};
use crate::weighted_space::{norm, GridFunction, SobolevIndex, TimeGrid, Weight, C64};

/// Which Lipschitz hypothesis a right-hand side satisfies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Strict contraction `s < 1` into the index `-1`; `lipschitz()` is `s`.
    IntoMinusOne,
    /// Lipschitz `C` in `H_{rho,0}`; contracts once `rho > C`.
    IntoZero,
    /// Lipschitz `C < 1` from `H_{rho,1}` into `H_{rho,0}`; iterated on `v = d u`.
    IntoZeroFromOne,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::IntoMinusOne => "into_minus_one",
            Regime::IntoZero => "into_zero",
            Regime::IntoZeroFromOne => "into_zero_from_one",
        })
    }
}

/// Right-hand side `F` together with its Lipschitz metadata.
///
/// `apply` must be pure and causal; the diagnostics module probes both.
pub trait RhsOperator: Send + Sync {
    fn label(&self) -> String;
    fn dim(&self) -> usize;
    fn lipschitz(&self) -> f64;
    fn regime(&self) -> Regime;
    fn rho_min(&self) -> f64;

    fn apply(&self, u: &GridFunction, w: Weight) -> Result<ImpulsiveFunction>;

    /// Evaluation with the regular part `du` of `d u` supplied by the
    /// iteration, for right-hand sides that read the derivative.
    fn apply_with_derivative(
        &self,
        u: &GridFunction,
        du: &GridFunction,
        w: Weight,
    ) -> Result<ImpulsiveFunction> {
        let _ = du;
        self.apply(u, w)
    }

    /// Lipschitz constant of one Picard step at weight `rho`.
    fn contraction_factor(&self, rho: f64) -> f64 {
        match self.regime() {
            Regime::IntoZero => self.lipschitz() / rho,
            Regime::IntoMinusOne | Regime::IntoZeroFromOne => self.lipschitz(),
        }
    }
}

type RhsFn = dyn Fn(&GridFunction, Weight) -> Result<ImpulsiveFunction> + Send + Sync;

/// [`RhsOperator`] from a closure and explicit metadata.
#[derive(Clone)]
pub struct FnRhs {
    label: String,
    dim: usize,
    lipschitz: f64,
    regime: Regime,
    rho_min: f64,
    f: Arc<RhsFn>,
}

impl FnRhs {
    pub fn new(
        label: impl Into<String>,
        dim: usize,
        lipschitz: f64,
        f: impl Fn(&GridFunction, Weight) -> Result<ImpulsiveFunction> + Send + Sync + 'static,
    ) -> Self {
        FnRhs {
            label: label.into(),
            dim,
            lipschitz,
            regime: Regime::IntoZero,
            rho_min: 0.5,
            f: Arc::new(f),
        }
    }

    pub fn with_regime(mut self, regime: Regime) -> Self {
        self.regime = regime;
        self
    }

    pub fn with_rho_min(mut self, rho_min: f64) -> Self {
        self.rho_min = rho_min;
        self
    }
}

impl RhsOperator for FnRhs {
    fn label(&self) -> String {
        self.label.clone()
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
    fn regime(&self) -> Regime {
        self.regime
    }
    fn rho_min(&self) -> f64 {
        self.rho_min
    }
    fn apply(&self, u: &GridFunction, w: Weight) -> Result<ImpulsiveFunction> {
        (self.f)(u, w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RhoChoice {
    Auto,
    Fixed(Weight),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub grid: TimeGrid,
    pub rho: RhoChoice,
    pub tol: f64,
    pub max_iter: usize,
}

impl SolverConfig {
    pub fn new(grid: TimeGrid) -> Self {
        SolverConfig {
            grid,
            rho: RhoChoice::Auto,
            tol: 1e-10,
            max_iter: 200,
        }
    }

    pub fn with_rho(mut self, rho: f64) -> Result<Self> {
        self.rho = RhoChoice::Fixed(Weight::new(rho)?);
        Ok(self)
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::Domain(format!(
                "tolerance {} must be positive",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::Domain("max_iter must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub solution: GridFunction,
    pub iterations: usize,
    /// Median of the last three increment ratios.
    pub contraction_estimate: f64,
    pub predicted_contraction: f64,
    pub residual: f64,
    pub rho_used: Weight,
    /// `rho,0` norms of successive increments, one per iteration.
    pub increments: Vec<f64>,
    /// `exp(-rho t_max) sup|u|`.
    pub tail_bound: f64,
}

impl SolveReport {
    /// Ratios of successive increments, `None` where the earlier one vanished.
    pub fn increment_ratios(&self) -> Vec<Option<f64>> {
        self.increments
            .windows(2)
            .map(|p| if p[0] > 0.0 { Some(p[1] / p[0]) } else { None })
            .collect()
    }
}

/// `2 max(C, rho_0)` in the `rho > C` regime, `2 max(rho_0, 1)` otherwise.
pub fn pick_rho(f: &dyn RhsOperator) -> Weight {
    let base = match f.regime() {
        Regime::IntoZero => f.lipschitz().max(f.rho_min()),
        Regime::IntoMinusOne | Regime::IntoZeroFromOne => f.rho_min().max(1.0),
    };
    // a right-hand side with no constraint at all still needs a positive weight
    let rho = if base > 0.0 && base.is_finite() {
        2.0 * base
    } else {
        2.0
    };
    Weight::new(rho).expect("positive weight")
}

/// Weight for `cfg`, refusing one at which the Picard map does not contract.
pub fn admissible_rho(f: &dyn RhsOperator, cfg: &SolverConfig) -> Result<(Weight, f64)> {
    let w = match cfg.rho {
        RhoChoice::Auto => pick_rho(f),
        RhoChoice::Fixed(w) => w,
    };
    let rho = w.rho();
    let factor = f.contraction_factor(rho);
    if rho <= 0.0 || rho <= f.rho_min() || !(factor < 1.0) {
        return Err(Error::NonContraction { rho, factor });
    }
    Ok((w, factor))
}

/// `|u - integrate(F(u))|_{rho,0}`.
pub fn residual(u: &GridFunction, f: &dyn RhsOperator, w: Weight) -> Result<f64> {
    let next = integrate_impulsive(&f.apply(u, w)?, w)?;
    norm(&u.sub(&next)?, w, SobolevIndex::Zero)
}

pub fn picard_solve(f: &dyn RhsOperator, cfg: &SolverConfig) -> Result<SolveReport> {
    picard_solve_from(f, cfg, None)
}

/// Ratios this far below rounding are not evidence either way.
const NOISE: f64 = 1e-13;

/// Iterations without sup progress, after weighted convergence, accepted as the rounding floor.
const SUP_FLOOR_ITERS: usize = 5;

pub fn picard_solve_from(
    f: &dyn RhsOperator,
    cfg: &SolverConfig,
    start: Option<&GridFunction>,
) -> Result<SolveReport> {
    cfg.validate()?;
    let (w, predicted) = admissible_rho(f, cfg)?;
    let grid = cfg.grid;
    let d = f.dim();
    let mut u = match start {
        Some(s) => {
            if s.grid() != &grid || s.dim() != d {
                return Err(Error::IncompatibleGrid(
                    "starting iterate does not match the solver grid".into(),
                ));
            }
            s.clone()
        }
        None => GridFunction::zeros(grid, d),
    };
    // regular part of d u, consumed by derivative-reading right-hand sides
    let mut v = GridFunction::zeros(grid, d);
    let from_one = f.regime() == Regime::IntoZeroFromOne;

    let mut increments = Vec::new();
    let mut stalled = 0;
    let mut sup_floor = 0;
    let mut last_sup = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    let mut last = f64::INFINITY;
    while iterations < cfg.max_iter {
        iterations += 1;
        let out = f.apply_with_derivative(&u, &v, w)?;
        let u_next = integrate_impulsive(&out, w)?;
        let v_next = out.into_regular();
        if !u_next.is_finite() || !v_next.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite iterate {iterations} for {}",
                f.label()
            )));
        }
        let (inc, scale) = if from_one {
            (
                norm(&v_next.sub(&v)?, w, SobolevIndex::Zero)?,
                norm(&v_next, w, SobolevIndex::Zero)?,
            )
        } else {
            (
                norm(&u_next.sub(&u)?, w, SobolevIndex::Zero)?,
                norm(&u_next, w, SobolevIndex::Zero)?,
            )
        };
        let rel = if scale > 0.0 { inc / scale } else { inc };
        let sup_inc = u_next.sub(&u)?.sup_norm();
        let sup_scale = u_next.sup_norm();
        let sup_rel = if sup_scale > 0.0 {
            sup_inc / sup_scale
        } else {
            sup_inc
        };
        let prev = increments.last().copied().unwrap_or(f64::INFINITY);
        increments.push(inc);

        if rel > NOISE && inc >= prev {
            stalled += 1;
            if stalled >= 5 {
                return Err(Error::NonContraction {
                    rho: w.rho(),
                    factor: inc / prev,
                });
            }
        } else {
            stalled = 0;
        }
        last = rel;
        u = u_next;
        v = v_next;
        // the weighted increment alone lets late-window errors grow like exp(rho t)
        if rel <= cfg.tol && sup_rel <= cfg.tol {
            converged = true;
            break;
        }
        // with rho t large the sup increment bottoms out at rounding times exp(rho t)
        if rel <= cfg.tol && sup_rel > 0.5 * last_sup {
            sup_floor += 1;
            if sup_floor >= SUP_FLOOR_ITERS {
                converged = true;
                break;
            }
        } else {
            sup_floor = 0;
        }
        last_sup = sup_rel;
    }
    if !converged {
        return Err(Error::NotConverged {
            iterations,
            increment: last,
        });
    }

    let contraction_estimate = median_ratio(&increments, scale_of(&increments));
    let out = f.apply_with_derivative(&u, &v, w)?;
    let res = norm(
        &u.sub(&integrate_impulsive(&out, w)?)?,
        w,
        SobolevIndex::Zero,
    )?;
    let tail_bound = crate::weighted_space::tail_bound(&u, w);
    Ok(SolveReport {
        solution: u,
        iterations,
        contraction_estimate,
        predicted_contraction: predicted,
        residual: res,
        rho_used: w,
        increments,
        tail_bound,
    })
}

fn scale_of(increments: &[f64]) -> f64 {
    increments.iter().cloned().fold(0.0, f64::max)
}

fn median_ratio(increments: &[f64], scale: f64) -> f64 {
    let mut ratios: Vec<f64> = increments
        .windows(2)
        .filter(|p| p[0] > NOISE * scale)
        .map(|p| p[1] / p[0])
        .collect();
    if ratios.is_empty() {
        return 0.0;
    }
    let tail = ratios.len().saturating_sub(3);
    let last = &mut ratios[tail..];
    last.sort_by(f64::total_cmp);
    last[last.len() / 2]
}

/// Random starting iterate for uniqueness checks.
pub fn random_start(grid: TimeGrid, dim: usize, seed: u64) -> GridFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs: Vec<(f64, f64, f64)> = (0..dim)
        .map(|_| {
            (
                rng.random_range(-1.0..1.0),
                rng.random_range(0.5..3.0),
                rng.random_range(0.0..6.0),
            )
        })
        .collect();
    GridFunction::from_fn(grid, dim, |t, out| {
        for (o, (a, k, p)) in out.iter_mut().zip(&coeffs) {
            *o = C64::new(a * (k * t + p).sin(), 0.0);
        }
    })
}

/// Continuous-dependence estimate together with the measured distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DependenceCheck {
    pub bound: f64,
    pub measured: f64,
}

impl DependenceCheck {
    pub fn holds(&self) -> bool {
        self.measured <= self.bound * (1.0 + 1e-9) + 1e-14
    }
}

/// Bound on `|u - v|_{rho,0}` for the fixed points of `F` and `G`, given a
/// bound `sup_diff` on `|F(x) - G(x)|` in the regime's codomain norm.
pub fn dependence_bound(
    f: &dyn RhsOperator,
    g: &dyn RhsOperator,
    u: &GridFunction,
    v: &GridFunction,
    w: Weight,
    sup_diff: f64,
) -> Result<DependenceCheck> {
    if f.regime() != g.regime() {
        return Err(Error::Domain(
            "right-hand sides from different regimes".into(),
        ));
    }
    let mean = 0.5 * (f.lipschitz() + g.lipschitz());
    let threshold = match f.regime() {
        Regime::IntoZero => w.rho(),
        Regime::IntoMinusOne | Regime::IntoZeroFromOne => 1.0,
    };
    if mean >= threshold {
        return Err(Error::Domain(format!(
            "mean Lipschitz constant {mean} not below {threshold}"
        )));
    }
    let measured = norm(&u.sub(v)?, w, SobolevIndex::Zero)?;
    Ok(DependenceCheck {
        bound: sup_diff / (threshold - mean),
        measured,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus_ops::{cutoff, CutoffSide, Impulse};

    fn decay(rate: f64, u0: f64) -> FnRhs {
        FnRhs::new("decay", 1, rate, move |u, _| {
            let g = cutoff(&u.scale(C64::new(-rate, 0.0)), CutoffSide::Above(0.0));
            Ok(ImpulsiveFunction::new(
                g,
                vec![Impulse {
                    location: 0.0,
                    amplitude: vec![C64::new(u0, 0.0)],
                }],
            )?
            .with_onset(0.0))
        })
    }

    #[test]
    fn rho_selection() {
        let f = FnRhs::new("c2", 1, 2.0, |u, _| {
            Ok(ImpulsiveFunction::regular(u.clone()))
        })
        .with_rho_min(1.0);
        assert_eq!(pick_rho(&f).rho(), 4.0);
        let f0 = FnRhs::new("c0", 1, 0.0, |u, _| {
            Ok(ImpulsiveFunction::regular(u.clone()))
        })
        .with_rho_min(1.0);
        assert_eq!(pick_rho(&f0).rho(), 2.0);
        let grid = TimeGrid::with_step(0.0, 1.0, 0.1).unwrap();
        let cfg = SolverConfig::new(grid).with_rho(0.1).unwrap();
        assert!(matches!(
            picard_solve(&f, &cfg),
            Err(Error::NonContraction { .. })
        ));
    }

    #[test]
    fn constant_rhs_converges_immediately() {
        let grid = TimeGrid::with_step(-1.0, 3.0, 1e-3).unwrap();
        let src =
            GridFunction::from_real(grid, |t| if (0.0..1.0).contains(&t) { 1.0 } else { 0.0 });
        let f = FnRhs::new("source", 1, 0.0, move |_, _| {
            Ok(ImpulsiveFunction::regular(src.clone()))
        });
        let rep = picard_solve(&f, &SolverConfig::new(grid)).unwrap();
        assert_eq!(rep.iterations, 2);
        assert_eq!(rep.contraction_estimate, 0.0);
        assert_eq!(rep.residual, 0.0);
    }

    #[test]
    fn linear_decay_matches_exponential() {
        let grid = TimeGrid::with_step(-1.0, 10.0, 1e-3).unwrap();
        let cfg = SolverConfig::new(grid).with_rho(2.0).unwrap();
        let rep = picard_solve(&decay(1.0, 1.0), &cfg).unwrap();
        let u = &rep.solution;
        let err = grid
            .times()
            .enumerate()
            .map(|(j, t)| (u.value(j, 0).re - if t >= 0.0 { (-t).exp() } else { 0.0 }).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
        assert!(
            rep.contraction_estimate < 0.55,
            "{}",
            rep.contraction_estimate
        );
        assert!(rep.residual < 1e-9);
        let again =
            picard_solve_from(&decay(1.0, 1.0), &cfg, Some(&random_start(grid, 1, 7))).unwrap();
        assert!(again.solution.sub(u).unwrap().sup_norm() < 10.0 * cfg.tol);
    }

    #[test]
    fn residual_of_zero_is_source_norm() {
        let grid = TimeGrid::with_step(-1.0, 3.0, 1e-2).unwrap();
        let w = Weight::new(2.0).unwrap();
        let f = decay(1.0, 1.0);
        let r = residual(&GridFunction::zeros(grid, 1), &f, w).unwrap();
        let step = GridFunction::from_real(grid, |t| if t >= 0.0 { 1.0 } else { 0.0 });
        assert!((r - norm(&step, w, SobolevIndex::Zero).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn growth_beyond_rho_is_reported() {
        let grid = TimeGrid::with_step(0.0, 5.0, 1e-2).unwrap();
        // metadata lies: claims C = 1 but scales by 8
        let f = FnRhs::new("liar", 1, 1.0, |u, _| {
            let mut g = u.scale(C64::new(8.0, 0.0));
            g = g.add(&GridFunction::from_real(*u.grid(), |_| 1.0)).unwrap();
            Ok(ImpulsiveFunction::regular(g))
        });
        let cfg = SolverConfig::new(grid).with_rho(2.0).unwrap();
        assert!(matches!(
            picard_solve(&f, &cfg),
            Err(Error::NonContraction { .. })
        ));
    }

    #[test]
    fn dependence_bound_for_shifted_sources() {
        let grid = TimeGrid::with_step(0.0, 6.0, 1e-3).unwrap();
        let w = Weight::new(2.0).unwrap();
        let make = |c: f64| {
            FnRhs::new("affine", 1, 1.0, move |u, _| {
                Ok(ImpulsiveFunction::regular(u.map(|z| C64::new(c, 0.0) - z)))
            })
        };
        let (f, g) = (make(1.0), make(1.5));
        let cfg = SolverConfig::new(grid).with_rho(2.0).unwrap();
        let u = picard_solve(&f, &cfg).unwrap().solution;
        let v = picard_solve(&g, &cfg).unwrap().solution;
        let diff = GridFunction::from_real(grid, |_| 0.5);
        let sup_diff = norm(&diff, w, SobolevIndex::Zero).unwrap();
        let check = dependence_bound(&f, &g, &u, &v, w, sup_diff).unwrap();
        assert!(check.holds(), "{check:?}");
        let same = dependence_bound(&f, &f, &u, &u, w, 0.0).unwrap();
        assert_eq!((same.bound, same.measured), (0.0, 0.0));
    }
}
