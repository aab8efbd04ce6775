//! Problem configuration files.
//!
//! ```text
//! [problem]
//! type = ode_ivp          # one of the names in ProblemRegistry
//! dim = 1
//!
//! [grid]
//! t_min = -1
//! t_max = 10
//! dt = 1e-3
//!
//! [solver]
//! rho = auto              # or a number
//! tol = 1e-10
//! max_iter = 200
//!
//! [probes]                # diagnostics only
//! seed = 7
//! thresholds = 8
//! pairs = 16
//! tol = 1e-8
//! shift = 0.5
//! alternate_rho = 4
//!
//! [oracle]
//! step = 1e-4
//!
//! [ode]                   # type-specific sections, see the problem builders
//! a = -1
//! u0 = 1
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use expodelay::diagnostics::{seed_from_env, DEFAULT_SEED};
use expodelay::{RhoChoice, SolverConfig, TimeGrid, Weight};

use crate::ini::Ini;
use crate::problem::ProblemRegistry;
use crate::{CliError, Result};

/// Sections every problem type accepts.
pub const COMMON_SCHEMA: &[(&str, &[&str])] = &[
    ("problem", &["type", "dim", "description"]),
    ("grid", &["t_min", "t_max", "dt"]),
    ("solver", &["rho", "tol", "max_iter"]),
    ("probes", &["seed", "thresholds", "pairs", "tol", "shift", "alternate_rho"]),
    ("oracle", &["step"]),
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub rho: RhoChoice,
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeSettings {
    pub seed: u64,
    pub thresholds: usize,
    pub pairs: usize,
    pub tol: Option<f64>,
    pub shift: Option<f64>,
    pub alternate_rho: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ProblemConfig {
    pub kind: String,
    pub dim: usize,
    pub grid: TimeGrid,
    pub solver: SolverSettings,
    pub probes: ProbeSettings,
    pub oracle_step: f64,
    pub ini: Ini,
    /// Directory of the config file; relative paths inside it resolve here.
    pub base_dir: PathBuf,
}

impl ProblemConfig {
    pub fn load(path: &Path, registry: &ProblemRegistry) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base, registry)
    }

    pub fn parse(text: &str, base_dir: PathBuf, registry: &ProblemRegistry) -> Result<Self> {
        let ini = Ini::parse(text)?;
        let kind = ini.require("problem", "type")?.to_string();
        let builder = registry.get(&kind)?;
        validate(&ini, builder.schema())?;

        let dim = ini.usize("problem", "dim")?.unwrap_or(1);
        if dim == 0 {
            return Err(CliError::config("`problem.dim` must be at least 1"));
        }
        let grid = TimeGrid::with_step(
            ini.require_f64("grid", "t_min")?,
            ini.require_f64("grid", "t_max")?,
            ini.require_f64("grid", "dt")?,
        )
        .map_err(|e| CliError::config(format!("[grid]: {e}")))?;

        let rho = match ini.get("solver", "rho") {
            None | Some("auto") => RhoChoice::Auto,
            Some(_) => {
                let v = ini.require_f64("solver", "rho")?;
                if !(v > 0.0) {
                    return Err(CliError::config("`solver.rho` must be positive or auto"));
                }
                RhoChoice::Fixed(Weight::new(v).map_err(|e| CliError::config(format!("`solver.rho`: {e}")))?)
            }
        };
        let solver = SolverSettings {
            rho,
            tol: positive(&ini, "solver", "tol", 1e-10)?,
            max_iter: ini.usize("solver", "max_iter")?.unwrap_or(200),
        };
        let probes = ProbeSettings {
            seed: seed_from_env(ini.u64("probes", "seed")?.unwrap_or(DEFAULT_SEED)),
            thresholds: ini.usize("probes", "thresholds")?.unwrap_or(8).max(1),
            pairs: ini.usize("probes", "pairs")?.unwrap_or(16).max(1),
            tol: ini.f64("probes", "tol")?,
            shift: ini.f64("probes", "shift")?,
            alternate_rho: ini.f64("probes", "alternate_rho")?,
        };
        let oracle_step = positive(&ini, "oracle", "step", grid.dt() / 10.0)?;
        Ok(ProblemConfig { kind, dim, grid, solver, probes, oracle_step, ini, base_dir })
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig { grid: self.grid, rho: self.solver.rho, tol: self.solver.tol, max_iter: self.solver.max_iter }
    }
}

fn positive(ini: &Ini, section: &str, key: &str, default: f64) -> Result<f64> {
    let v = ini.f64_or(section, key, default)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(CliError::config(format!("`{section}.{key}` must be positive")))
    }
}

/// Rejects sections and keys outside the common and type-specific schema.
pub fn validate(ini: &Ini, specific: &[(&str, &[&str])]) -> Result<()> {
    let lookup = |s: &str| COMMON_SCHEMA.iter().chain(specific).find(|(name, _)| *name == s).map(|(_, keys)| *keys);
    for section in ini.sections() {
        let allowed = lookup(section).ok_or_else(|| CliError::config(format!("unknown section [{section}]")))?;
        for (key, entry) in ini.keys(section) {
            if !allowed.contains(&key) {
                return Err(CliError::config(format!(
                    "unknown key `{section}.{key}` (line {}); allowed: {}",
                    entry.line,
                    allowed.join(", ")
                )));
            }
        }
    }
    Ok(())
}
