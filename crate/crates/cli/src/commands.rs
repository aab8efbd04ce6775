//! The four subcommands. Each returns the process exit code; errors are printed
//! to stderr and mapped through [`CliError::exit_code`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use expodelay::{apply_symbol, SymbolContext, Weight};

use crate::config::ProblemConfig;
use crate::csv_io::{read_csv, write_atomic, write_csv};
use crate::diagnose::DiagnosticRegistry;
use crate::oracle_run::reference_solution;
use crate::problem::{symbol_registry, Problem, ProblemRegistry, Solved};
use crate::{exit, CliError, Result};

fn finish(r: Result<i32>) -> i32 {
    match r {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load(config: &Path) -> Result<(ProblemConfig, Box<dyn Problem>)> {
    let registry = ProblemRegistry::with_builtin();
    let cfg = ProblemConfig::load(config, &registry)?;
    let problem = registry.build(&cfg)?;
    Ok((cfg, problem))
}

/// `<out>.report` next to the CSV.
pub fn report_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".report");
    PathBuf::from(name)
}

/// `key = value` lines describing a solve.
pub fn format_report(kind: &str, solved: &Solved) -> String {
    let r = &solved.report;
    let mut s = String::new();
    let _ = writeln!(s, "problem = {kind}");
    let _ = writeln!(s, "iterations = {}", r.iterations);
    let _ = writeln!(s, "contraction_estimate = {:e}", r.contraction_estimate);
    let _ = writeln!(s, "predicted_contraction = {:e}", r.predicted_contraction);
    let _ = writeln!(s, "residual = {:e}", r.residual);
    let _ = writeln!(s, "rho_used = {:e}", r.rho_used.rho());
    let _ = writeln!(s, "tail_bound = {:e}", r.tail_bound);
    let incs: Vec<String> = r.increments.iter().map(|x| format!("{x:e}")).collect();
    let _ = writeln!(s, "increments = {}", incs.join(" "));
    for (k, v) in &solved.extras {
        let _ = writeln!(s, "{k} = {v}");
    }
    s
}

pub fn solve(config: &Path, out: &Path) -> Result<Solved> {
    let (cfg, problem) = load(config)?;
    let solved = problem.solve(&cfg.solver_config())?;
    write_csv(out, &solved.output)?;
    write_atomic(&report_path(out), &format_report(problem.kind(), &solved))?;
    Ok(solved)
}

pub fn run_solve(config: &Path, out: &Path) -> i32 {
    finish(solve(config, out).map(|_| exit::OK))
}

pub fn transform(symbol: &str, rho: f64, input: &Path, out: &Path) -> Result<()> {
    let f = read_csv(input)?;
    let w = Weight::new(rho).map_err(|e| CliError::config(format!("--rho: {e}")))?;
    let registry = symbol_registry(PathBuf::new());
    let ctx = SymbolContext { dim: f.dim(), rho_min: rho };
    let s = registry.build(symbol, &ctx).map_err(|e| CliError::config(format!("--symbol {symbol}: {e}")))?;
    let g = apply_symbol(&f, s.as_ref(), w)?;
    write_csv(out, &g)
}

pub fn run_transform(symbol: &str, rho: f64, input: &Path, out: &Path) -> i32 {
    finish(transform(symbol, rho, input, out).map(|_| exit::OK))
}

pub fn diagnose(kind: &str, config: &Path) -> Result<crate::diagnose::Report> {
    let registry = DiagnosticRegistry::with_builtin();
    let d = registry.get(kind)?;
    let (cfg, problem) = load(config)?;
    d.run(problem.as_ref(), &cfg)
}

pub fn run_diagnose(kind: &str, config: &Path) -> i32 {
    finish(diagnose(kind, config).map(|r| {
        for line in &r.lines {
            println!("{line}");
        }
        r.exit_code()
    }))
}

pub fn oracle(config: &Path, out: &Path) -> Result<()> {
    let (cfg, problem) = load(config)?;
    let u = reference_solution(problem.as_ref(), &cfg)?;
    write_csv(out, &u)
}

pub fn run_oracle(config: &Path, out: &Path) -> i32 {
    finish(oracle(config, out).map(|_| exit::OK))
}
