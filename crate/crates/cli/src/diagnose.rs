//! `diagnose <kind> <config>`: probe-based checks on a configured problem.
//!
//! Every diagnostic prints a [`Verdict`] line (plus a witness on failure) and
//! maps it to exit 0 or 1. A memory check that finds a delay exits 1 even when
//! the problem is a delay equation by construction; the report says so.

use std::collections::BTreeMap;
use std::sync::Arc;

use expodelay::diagnostics::{check_autonomous, check_causal, check_rho_independence, classify_memory_at_two, trace_check};
use expodelay::solver::pick_rho;
use expodelay::{add_source, causal_integrate, picard_solve, Agreement, MemoryClass, ProbeSet, RhoChoice, SolverConfig, Verdict, Weight};

use crate::config::ProblemConfig;
use crate::problem::Problem;
use crate::{exit, CliError, Result};

/// Outcome printed by the `diagnose` command.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub passed: bool,
    pub lines: Vec<String>,
}

impl Report {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            exit::OK
        } else {
            exit::DIAGNOSTIC_FAILED
        }
    }

    fn from_verdict(kind: &str, v: &Verdict) -> Self {
        let mut lines = vec![format!("{kind}: {v}")];
        if let Some(w) = &v.witness {
            if w.pair.is_some() {
                lines.push(format!("witness: {}", w.description));
            }
        }
        Report { passed: v.passed, lines }
    }
}

pub trait Diagnostic: Send + Sync {
    fn name(&self) -> &'static str;
    fn run(&self, problem: &dyn Problem, cfg: &ProblemConfig) -> Result<Report>;
}

#[derive(Clone, Default)]
pub struct DiagnosticRegistry {
    entries: BTreeMap<&'static str, Arc<dyn Diagnostic>>,
}

impl DiagnosticRegistry {
    pub fn with_builtin() -> Self {
        let mut r = DiagnosticRegistry::default();
        r.register(Arc::new(Causality));
        r.register(Arc::new(Memory));
        r.register(Arc::new(Autonomy));
        r.register(Arc::new(RhoIndependence));
        r.register(Arc::new(Trace));
        r
    }

    pub fn register(&mut self, d: Arc<dyn Diagnostic>) {
        self.entries.insert(d.name(), d);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    pub fn get(&self, name: &str) -> Result<&dyn Diagnostic> {
        self.entries.get(name).map(|d| d.as_ref()).ok_or_else(|| {
            CliError::config(format!("unknown diagnostic `{name}`; known: {}", self.names().join(", ")))
        })
    }
}

/// Weight the problem is solved at: the configured one or the automatic choice.
fn working_weight(problem: &dyn Problem, cfg: &ProblemConfig) -> Weight {
    match cfg.solver.rho {
        RhoChoice::Fixed(w) => w,
        RhoChoice::Auto => pick_rho(problem.rhs().as_ref()),
    }
}

/// Largest `rho * window` the transform accepts, with some margin.
const RHO_WINDOW_MAX: f64 = 24.0;

/// `probes.alternate_rho`, else `2 rho` capped by the window range. When the
/// cap leaves no room above `rho`, `rho / 2` is used if `below_ok`.
fn alternate(cfg: &ProblemConfig, w: Weight, below_ok: bool) -> Result<Weight> {
    let bad = |e: expodelay::Error| CliError::config(format!("`probes.alternate_rho`: {e}"));
    if let Some(r) = cfg.probes.alternate_rho {
        return Weight::new(r).map_err(bad);
    }
    let cap = RHO_WINDOW_MAX / cfg.grid.len();
    let up = (2.0 * w.rho()).min(cap);
    if up >= 1.05 * w.rho() {
        Ok(Weight::new(up).map_err(bad)?)
    } else if below_ok {
        Ok(Weight::new(0.5 * w.rho()).map_err(bad)?)
    } else {
        Err(CliError::config(format!(
            "no room above rho = {} on this window; set `probes.alternate_rho`",
            w.rho()
        )))
    }
}

fn probes(cfg: &ProblemConfig, dim: usize, w: Weight, agreement: Agreement) -> ProbeSet {
    ProbeSet::with_counts(cfg.grid, dim, w, cfg.probes.seed, agreement, cfg.probes.thresholds, cfg.probes.pairs)
}

/// The map from an added source to the solution agrees before `a` on sources
/// that agree before `a`.
struct Causality;

impl Diagnostic for Causality {
    fn name(&self) -> &'static str {
        "causality"
    }
    fn run(&self, problem: &dyn Problem, cfg: &ProblemConfig) -> Result<Report> {
        let w = working_weight(problem, cfg);
        let solver = SolverConfig { rho: RhoChoice::Fixed(w), tol: cfg.solver.tol.min(1e-13), ..cfg.solver_config() };
        let rhs = problem.rhs();
        let solve = |f: &expodelay::GridFunction| -> expodelay::Result<expodelay::GridFunction> {
            Ok(picard_solve(&add_source(rhs.clone(), f.clone()), &solver)?.solution)
        };
        let set = probes(cfg, problem.dim(), w, Agreement::Before);
        let v = check_causal(&solve, &set, cfg.probes.tol.unwrap_or(1e-10))?;
        Ok(Report::from_verdict(self.name(), &v))
    }
}

struct Memory;

impl Diagnostic for Memory {
    fn name(&self) -> &'static str {
        "memory"
    }
    fn run(&self, problem: &dyn Problem, cfg: &ProblemConfig) -> Result<Report> {
        let w = working_weight(problem, cfg);
        let alt = alternate(cfg, w, true)?;
        let field = problem.field();
        let set = probes(cfg, problem.dim(), w, Agreement::After);
        let cmp = classify_memory_at_two(field.as_ref(), w, alt, &set)?;
        let mut lines = vec![format!("memory: {} (rho = {})", cmp.primary, w.rho())];
        if let MemoryClass::HasDelay(wit) = &cmp.primary {
            lines.push(format!("witness: {} at a = {}, violation {:e}", wit.description, wit.threshold, wit.violation));
            if problem.expects_delay() {
                lines.push("(expected for this problem)".into());
            }
        }
        lines.push(format!("memory at rho = {}: {}", alt.rho(), cmp.alternate));
        if !cmp.consistent() {
            lines.push("warning: the two weights disagree".into());
        }
        Ok(Report { passed: !cmp.primary.has_delay(), lines })
    }
}

/// Shift equivariance of the field with a source argument.
struct Autonomy;

impl Diagnostic for Autonomy {
    fn name(&self) -> &'static str {
        "autonomy"
    }
    fn run(&self, problem: &dyn Problem, cfg: &ProblemConfig) -> Result<Report> {
        let w = working_weight(problem, cfg);
        let dt = cfg.grid.dt();
        let wanted = cfg.probes.shift.unwrap_or(0.05 * cfg.grid.len());
        let h = ((wanted / dt).round() * dt).clamp(-0.1 * cfg.grid.len(), 0.1 * cfg.grid.len());
        let h = (h / dt).trunc() * dt;
        let field = problem.field();
        let op = |u: &expodelay::GridFunction, f: &expodelay::GridFunction| -> expodelay::Result<expodelay::GridFunction> {
            let out = field.apply(u, w)?.into_regular();
            out.add(f)
        };
        let set = probes(cfg, problem.dim(), w, Agreement::Before);
        let v = check_autonomous(&op, h, &set, cfg.probes.tol.unwrap_or(1e-8))?;
        Ok(Report::from_verdict(self.name(), &v))
    }
}

struct RhoIndependence;

impl Diagnostic for RhoIndependence {
    fn name(&self) -> &'static str {
        "rho_independence"
    }
    fn run(&self, problem: &dyn Problem, cfg: &ProblemConfig) -> Result<Report> {
        let w1 = working_weight(problem, cfg);
        let w2 = alternate(cfg, w1, false)?;
        let solver = SolverConfig { tol: cfg.solver.tol.min(1e-12), max_iter: cfg.solver.max_iter.max(400), ..cfg.solver_config() };
        let v = check_rho_independence(problem.rhs().as_ref(), &solver, w1, w2, cfg.probes.tol.unwrap_or(1e-8))?;
        Ok(Report::from_verdict(self.name(), &v))
    }
}

/// Trace inequalities for `d^{-1} F(u)`, the part of the solution without
/// jumps (initial values and histories enter as impulses).
struct Trace;

impl Diagnostic for Trace {
    fn name(&self) -> &'static str {
        "trace"
    }
    fn run(&self, problem: &dyn Problem, cfg: &ProblemConfig) -> Result<Report> {
        let rhs = problem.rhs();
        let report = picard_solve(rhs.as_ref(), &cfg.solver_config())?;
        let w = report.rho_used;
        let regular = causal_integrate(rhs.apply(&report.solution, w)?.regular_part(), w)?;
        let v = trace_check(&regular, w, cfg.probes.tol.unwrap_or(1e-6))?;
        Ok(Report::from_verdict(self.name(), &v))
    }
}
