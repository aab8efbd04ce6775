//! `oracle <config>`: the method-of-steps reference solution on the config grid.

use expodelay::{GridFunction, C64};
use expodelay_oracle::method_of_steps;

use crate::config::ProblemConfig;
use crate::problem::{OracleSpec, Problem};
use crate::Result;

/// Samples the reference trajectory at every grid node; nodes before 0 take
/// the prescribed past.
pub fn reference_solution(problem: &dyn Problem, cfg: &ProblemConfig) -> Result<GridFunction> {
    let OracleSpec { system, past, observed } = problem.oracle()?;
    let grid = problem.output_grid(cfg.grid);
    let t_end = grid.t_max().max(cfg.oracle_step);
    let traj = method_of_steps(&system, t_end, cfg.oracle_step)?;
    let mut full = vec![0.0; system.dim];
    let mut slope = vec![0.0; system.dim];
    let mut head = vec![0.0; observed];
    Ok(GridFunction::from_fn(grid, observed, |t, out: &mut [C64]| {
        if t < 0.0 {
            past(t, &mut head);
        } else {
            traj.eval(t, &mut full, &mut slope);
            head.copy_from_slice(&full[..observed]);
        }
        for (o, v) in out.iter_mut().zip(&head) {
            *o = C64::new(*v, 0.0);
        }
    }))
}
