//! Finite-probe checks of structural properties: causality, amnesia, delay,
//! autonomy, independence of the weight, and the trace bounds.
//!
//! A passing verdict certifies the property on the probes only.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::calculus_ops::{
    adjoint_causal_integrate, adjoint_impulse_response, cutoff, translate, CutoffSide,
};
use crate::error::{Error, Result};
use crate::solver::{picard_solve, RhoChoice, RhsOperator, SolverConfig};
use crate::weighted_space::{norm, row_norm, GridFunction, SobolevIndex, TimeGrid, Weight, C64};

pub const SEED_ENV: &str = "EXPODELAY_SEED";
pub const DEFAULT_SEED: u64 = 0x5eed_2011;
const NOTE: &str = "certificate on probes";

/// Probe seed, overridden by `EXPODELAY_SEED` when set.
pub fn seed_from_env(default: u64) -> u64 {
    std::env::var(SEED_ENV)
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(default)
}

/// Side on which the two members of a probe pair coincide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Agreement {
    /// `x = y` on `t < a`.
    Before,
    /// `x = y` on `t >= a`.
    After,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbePair {
    pub x: GridFunction,
    pub y: GridFunction,
    pub threshold: f64,
    pub agreement: Agreement,
}

#[derive(Debug, Clone)]
pub struct ProbeSet {
    grid: TimeGrid,
    dim: usize,
    weight: Weight,
    seed: u64,
    pairs: Vec<ProbePair>,
}

/// Sum of a few Gaussian bumps per component with centres in `[lo, hi]`.
fn random_bumps(
    rng: &mut ChaCha8Rng,
    grid: TimeGrid,
    dim: usize,
    lo: f64,
    hi: f64,
) -> GridFunction {
    let l = grid.len();
    let bumps: Vec<Vec<(f64, f64, f64, f64)>> = (0..dim)
        .map(|_| {
            (0..3)
                .map(|_| {
                    (
                        rng.random_range(lo..hi),
                        rng.random_range(0.005 * l..0.02 * l),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    )
                })
                .collect()
        })
        .collect();
    GridFunction::from_fn(grid, dim, |t, out| {
        for (o, bs) in out.iter_mut().zip(&bumps) {
            *o = bs
                .iter()
                .map(|&(c, s, re, im)| C64::new(re, 0.3 * im) * (-((t - c) / s).powi(2)).exp())
                .sum();
        }
    })
}

impl ProbeSet {
    /// 8 thresholds with 16 pairs each.
    pub fn standard(
        grid: TimeGrid,
        dim: usize,
        weight: Weight,
        seed: u64,
        agreement: Agreement,
    ) -> Self {
        Self::with_counts(grid, dim, weight, seed, agreement, 8, 16)
    }

    pub fn with_counts(
        grid: TimeGrid,
        dim: usize,
        weight: Weight,
        seed: u64,
        agreement: Agreement,
        thresholds: usize,
        per_threshold: usize,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = grid.len();
        let mut pairs = Vec::with_capacity(thresholds * per_threshold);
        for k in 0..thresholds {
            let frac = if thresholds > 1 {
                k as f64 / (thresholds - 1) as f64
            } else {
                0.5
            };
            let a = grid.time(
                grid.index_at_or_after(grid.t_min() + l * (0.3 + 0.4 * frac))
                    .min(grid.n() - 1),
            );
            for _ in 0..per_threshold {
                let x = random_bumps(
                    &mut rng,
                    grid,
                    dim,
                    grid.t_min() + 0.3 * l,
                    grid.t_max() - 0.3 * l,
                );
                // the perturbation sits close to `a` on the side where the pair differs
                let (side, lo, hi) = match agreement {
                    Agreement::Before => (CutoffSide::Above(a), a, a + 0.1 * l),
                    Agreement::After => (CutoffSide::Below(a), a - 0.1 * l, a),
                };
                let z = random_bumps(&mut rng, grid, dim, lo, hi);
                let y = x.add(&cutoff(&z, side)).expect("same grid");
                pairs.push(ProbePair {
                    x,
                    y,
                    threshold: a,
                    agreement,
                });
            }
        }
        ProbeSet {
            grid,
            dim,
            weight,
            seed,
            pairs,
        }
    }

    /// Probes built by hand, for instance witnesses of a known delay.
    pub fn from_pairs(
        grid: TimeGrid,
        dim: usize,
        weight: Weight,
        pairs: Vec<ProbePair>,
    ) -> Result<Self> {
        for p in &pairs {
            p.x.check_compatible(&p.y)?;
            if p.x.grid() != &grid || p.x.dim() != dim {
                return Err(Error::IncompatibleGrid(
                    "probe pair off the probe grid".into(),
                ));
            }
        }
        Ok(ProbeSet {
            grid,
            dim,
            weight,
            seed: 0,
            pairs,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weight(&self) -> Weight {
        self.weight
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn pairs(&self) -> &[ProbePair] {
        &self.pairs
    }

    pub fn thresholds(&self) -> Vec<f64> {
        let mut a: Vec<f64> = self.pairs.iter().map(|p| p.threshold).collect();
        a.dedup();
        a
    }

    /// Time reversal `t -> -t`: exchanges `Before` and `After` and the sign of the weight.
    pub fn reflected(&self) -> Result<Self> {
        let grid = reflect_grid(&self.grid)?;
        let pairs = self
            .pairs
            .iter()
            .map(|p| ProbePair {
                x: reflect(&p.x),
                y: reflect(&p.y),
                // half-open intervals flip, so the threshold moves by one step
                threshold: -p.threshold + grid.dt(),
                agreement: match p.agreement {
                    Agreement::Before => Agreement::After,
                    Agreement::After => Agreement::Before,
                },
            })
            .collect();
        Ok(ProbeSet {
            grid,
            dim: self.dim,
            weight: Weight::new(-self.weight.rho())?,
            seed: self.seed,
            pairs,
        })
    }
}

fn reflect_grid(g: &TimeGrid) -> Result<TimeGrid> {
    TimeGrid::new(-g.t_max(), -g.t_min(), g.n())
}

/// `t -> f(-t)` on the mirrored grid.
pub fn reflect(f: &GridFunction) -> GridFunction {
    let grid = reflect_grid(f.grid()).expect("mirrored grid");
    let n = grid.n();
    let mut samples = Vec::with_capacity(n * f.dim());
    for j in (0..n).rev() {
        samples.extend_from_slice(f.row(j));
    }
    GridFunction::new(grid, f.dim(), samples).expect("mirrored samples")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub description: String,
    pub pair: Option<(GridFunction, GridFunction)>,
    pub threshold: f64,
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub passed: bool,
    pub witness: Option<Witness>,
    pub tolerance: f64,
    pub checked: usize,
    pub note: &'static str,
}

impl Verdict {
    fn pass(tolerance: f64, checked: usize) -> Self {
        Verdict {
            passed: true,
            witness: None,
            tolerance,
            checked,
            note: NOTE,
        }
    }

    fn fail(tolerance: f64, checked: usize, witness: Witness) -> Self {
        Verdict {
            passed: false,
            witness: Some(witness),
            tolerance,
            checked,
            note: NOTE,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed {
            write!(
                f,
                "PASS ({} probes, tol {:e}; {})",
                self.checked, self.tolerance, self.note
            )
        } else {
            let w = self
                .witness
                .as_ref()
                .expect("failing verdicts carry a witness");
            write!(
                f,
                "FAIL ({} probes, tol {:e}): {} at a = {}, violation {:e}",
                self.checked, self.tolerance, w.description, w.threshold, w.violation
            )
        }
    }
}

/// Map on grid functions under test.
pub type Operator<'a> = dyn Fn(&GridFunction) -> Result<GridFunction> + 'a;

fn check_agreement(
    w: &Operator<'_>,
    probes: &ProbeSet,
    tol: f64,
    want: Agreement,
) -> Result<Verdict> {
    let mut worst: Option<Witness> = None;
    let mut checked = 0;
    for p in probes.pairs.iter().filter(|p| p.agreement == want) {
        checked += 1;
        let wx = w(&p.x)?;
        let wy = w(&p.y)?;
        let side = match want {
            Agreement::Before => CutoffSide::Below(p.threshold),
            Agreement::After => CutoffSide::Above(p.threshold),
        };
        let diff = norm(
            &cutoff(&wx.sub(&wy)?, side),
            probes.weight,
            SobolevIndex::Zero,
        )?;
        let scale = 1.0 + norm(&wx, probes.weight, SobolevIndex::Zero)?;
        let violation = diff / scale;
        if violation > tol && worst.as_ref().is_none_or(|w| violation > w.violation) {
            let what = match want {
                Agreement::Before => "inputs agree before a, outputs differ before a",
                Agreement::After => "inputs agree after a, outputs differ after a",
            };
            worst = Some(Witness {
                description: what.into(),
                pair: Some((p.x.clone(), p.y.clone())),
                threshold: p.threshold,
                violation,
            });
        }
    }
    if checked == 0 {
        return Err(Error::Domain(format!(
            "probe set has no pairs agreeing {want:?}"
        )));
    }
    Ok(match worst {
        Some(w) => Verdict::fail(tol, checked, w),
        None => Verdict::pass(tol, checked),
    })
}

/// Outputs before `a` depend only on inputs before `a`.
pub fn check_causal(w: &Operator<'_>, probes: &ProbeSet, tol: f64) -> Result<Verdict> {
    check_agreement(w, probes, tol, Agreement::Before)
}

/// Outputs after `a` depend only on inputs after `a`.
pub fn check_amnesic(w: &Operator<'_>, probes: &ProbeSet, tol: f64) -> Result<Verdict> {
    check_agreement(w, probes, tol, Agreement::After)
}

#[derive(Debug, Clone, PartialEq)]
pub enum MemoryClass {
    NoDelay,
    HasDelay(Witness),
}

impl MemoryClass {
    pub fn has_delay(&self) -> bool {
        matches!(self, MemoryClass::HasDelay(_))
    }
}

impl fmt::Display for MemoryClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MemoryClass::NoDelay => f.write_str("no_delay"),
            MemoryClass::HasDelay(w) => write!(
                f,
                "has_delay (a = {}, violation {:e})",
                w.threshold, w.violation
            ),
        }
    }
}

/// Tolerance used by [`classify_memory`].
pub const MEMORY_TOL: f64 = 1e-9;

/// The composite of the adjoint integrator with `F`, impulses included.
pub fn adjoint_composite(f: &dyn RhsOperator, u: &GridFunction, w: Weight) -> Result<GridFunction> {
    let out = f.apply(u, w)?;
    let mut g = adjoint_causal_integrate(out.regular_part(), w)?;
    for imp in out.impulses() {
        g = g.add(&adjoint_impulse_response(u.grid(), w, imp)?)?;
    }
    Ok(g)
}

/// `F` has delay iff the adjoint integrator composed with `F` is not amnesic.
pub fn classify_memory(f: &dyn RhsOperator, w: Weight, probes: &ProbeSet) -> Result<MemoryClass> {
    classify_memory_with_tol(f, w, probes, MEMORY_TOL)
}

pub fn classify_memory_with_tol(
    f: &dyn RhsOperator,
    w: Weight,
    probes: &ProbeSet,
    tol: f64,
) -> Result<MemoryClass> {
    if w.rho() <= 0.0 {
        return Err(Error::WrongCausality { rho: w.rho() });
    }
    let op = |u: &GridFunction| adjoint_composite(f, u, w);
    let verdict = check_amnesic(&op, probes, tol)?;
    Ok(match verdict.witness {
        Some(wit) => MemoryClass::HasDelay(wit),
        None => MemoryClass::NoDelay,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryComparison {
    pub primary: MemoryClass,
    pub alternate: MemoryClass,
}

impl MemoryComparison {
    pub fn consistent(&self) -> bool {
        self.primary.has_delay() == self.alternate.has_delay()
    }
}

/// Classification at two weights; a disagreement is reported, not resolved.
pub fn classify_memory_at_two(
    f: &dyn RhsOperator,
    primary: Weight,
    alternate: Weight,
    probes: &ProbeSet,
) -> Result<MemoryComparison> {
    Ok(MemoryComparison {
        primary: classify_memory(f, primary, probes)?,
        alternate: classify_memory(f, alternate, probes)?,
    })
}

/// Two-argument right-hand side `(u, f) -> F(u, f)`.
pub type SourcedOperator<'a> = dyn Fn(&GridFunction, &GridFunction) -> Result<GridFunction> + 'a;

/// `F(tau_h u, tau_h f) = tau_h F(u, f)` on every probe pair `(u, f)`.
pub fn check_autonomous(
    f: &SourcedOperator<'_>,
    h: f64,
    probes: &ProbeSet,
    tol: f64,
) -> Result<Verdict> {
    let grid = probes.grid;
    if !grid.is_aligned(h) {
        return Err(Error::Domain(format!(
            "shift {h} is not a whole number of steps"
        )));
    }
    if h.abs() > 0.1 * grid.len() {
        return Err(Error::Domain(format!(
            "shift {h} would move probe supports off the window"
        )));
    }
    // translate fills |h| at one end with zeros, so compare where both sides are known
    let defined = |g: &GridFunction| {
        if h > 0.0 {
            cutoff(g, CutoffSide::Below(grid.t_max() - h + 0.5 * grid.dt()))
        } else {
            cutoff(g, CutoffSide::Above(grid.t_min() - h - 0.5 * grid.dt()))
        }
    };
    let mut worst: Option<Witness> = None;
    for p in &probes.pairs {
        let lhs = defined(&f(&translate(&p.x, h), &translate(&p.y, h))?);
        let rhs = defined(&translate(&f(&p.x, &p.y)?, h));
        let diff = norm(&lhs.sub(&rhs)?, probes.weight, SobolevIndex::Zero)?;
        let violation = diff / (1.0 + norm(&rhs, probes.weight, SobolevIndex::Zero)?);
        if violation > tol && worst.as_ref().is_none_or(|w| violation > w.violation) {
            worst = Some(Witness {
                description: format!("F does not commute with the shift by {h}"),
                pair: Some((p.x.clone(), p.y.clone())),
                threshold: h,
                violation,
            });
        }
    }
    let n = probes.pairs.len();
    Ok(match worst {
        Some(w) => Verdict::fail(tol, n, w),
        None => Verdict::pass(tol, n),
    })
}

/// Solves at two weights and compares the solutions in the sup norm.
pub fn check_rho_independence(
    f: &dyn RhsOperator,
    cfg: &SolverConfig,
    rho1: Weight,
    rho2: Weight,
    tol: f64,
) -> Result<Verdict> {
    let solve = |w: Weight| {
        picard_solve(
            f,
            &SolverConfig {
                rho: RhoChoice::Fixed(w),
                ..*cfg
            },
        )
    };
    let a = solve(rho1)?;
    let b = solve(rho2)?;
    let diff = a.solution.sub(&b.solution)?.sup_norm();
    Ok(if diff <= tol {
        Verdict::pass(tol, 1)
    } else {
        Verdict::fail(
            tol,
            1,
            Witness {
                description: format!(
                    "solutions at rho = {} and {} differ",
                    rho1.rho(),
                    rho2.rho()
                ),
                pair: Some((a.solution, b.solution)),
                threshold: f64::NAN,
                violation: diff,
            },
        )
    })
}

/// Measured sides of the two trace inequalities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceMeasurement {
    /// `sup_t e^{-rho t} |u(t)|`.
    pub weighted_sup: f64,
    /// `|u|_{rho,1} / sqrt(2 rho)`.
    pub sup_bound: f64,
    /// `sup_{s != t} |e^{-rho t} u(t) - e^{-rho s} u(s)| / |t - s|^{1/2}` over sampled lags.
    pub holder: f64,
    /// `|u|_{rho,1}`.
    pub holder_bound: f64,
}

pub fn trace_measure(u: &GridFunction, w: Weight) -> Result<TraceMeasurement> {
    let grid = *u.grid();
    let (n, dt, rho) = (grid.n(), grid.dt(), w.rho());
    let n1 = norm(u, w, SobolevIndex::One)?;
    let weighted: Vec<Vec<C64>> = (0..n)
        .map(|j| {
            let e = (-rho * grid.time(j)).exp();
            u.row(j).iter().map(|z| z * e).collect()
        })
        .collect();
    let weighted_sup = weighted.iter().map(|r| row_norm(r)).fold(0.0, f64::max);

    // geometric set of lags, every start point
    let mut lags = Vec::new();
    let mut l = 1.0f64;
    while (l as usize) < n {
        let k = l.round() as usize;
        if lags.last() != Some(&k) {
            lags.push(k);
        }
        l *= 1.15;
    }
    let mut holder: f64 = 0.0;
    let mut diff = vec![C64::new(0.0, 0.0); u.dim()];
    for &k in &lags {
        let s = (k as f64 * dt).sqrt();
        for j in 0..n - k {
            for (c, d) in diff.iter_mut().enumerate() {
                *d = weighted[j + k][c] - weighted[j][c];
            }
            holder = holder.max(row_norm(&diff) / s);
        }
    }
    Ok(TraceMeasurement {
        weighted_sup,
        sup_bound: n1 / (2.0 * rho).sqrt(),
        holder,
        holder_bound: n1,
    })
}

/// Both trace inequalities with absolute slack `tol + 10 dt`.
pub fn trace_check(u: &GridFunction, w: Weight, tol: f64) -> Result<Verdict> {
    if w.rho() <= 0.0 {
        return Err(Error::WrongCausality { rho: w.rho() });
    }
    let m = trace_measure(u, w)?;
    let slack = tol + 10.0 * u.grid().dt();
    let sup_excess = m.weighted_sup - m.sup_bound;
    let holder_excess = m.holder - m.holder_bound;
    if sup_excess > slack {
        return Ok(Verdict::fail(
            slack,
            1,
            Witness {
                description: format!("weighted sup {} above {}", m.weighted_sup, m.sup_bound),
                pair: None,
                threshold: f64::NAN,
                violation: sup_excess,
            },
        ));
    }
    if holder_excess > slack {
        return Ok(Verdict::fail(
            slack,
            1,
            Witness {
                description: format!("Hoelder quotient {} above {}", m.holder, m.holder_bound),
                pair: None,
                threshold: f64::NAN,
                violation: holder_excess,
            },
        ));
    }
    Ok(Verdict::pass(slack, 1))
}
