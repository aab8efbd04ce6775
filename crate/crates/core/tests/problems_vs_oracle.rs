//! Problem builders against method-of-steps reference solutions.

use std::sync::Arc;

use expodelay::fourier_laplace::parse_matrix;
use expodelay::problems::{
    add_source, discrete_delay_rhs, history_problem, integro_rhs, ivp_problem, local_solve,
    nemitzki_rhs, neutral_admissibility, neutral_general_rhs, neutral_linear_solve, wrapped_rhs,
    HistoryFunction, KernelMap, MonotoneMap, NeutralMap, PointMap,
};
use expodelay::solver::{picard_solve, SolverConfig};
use expodelay::{make_symbol, GridFunction, SymbolContext, SymbolKind, TimeGrid, C64};
use expodelay_oracle::{method_of_steps, Args, DelaySystem, History, Rhs};

fn c(v: f64) -> C64 {
    C64::new(v, 0.0)
}

/// `t^2 (2 - t)^2` on `[0, 2]`.
fn pulse(t: f64) -> f64 {
    if (0.0..=2.0).contains(&t) {
        t * t * (2.0 - t) * (2.0 - t)
    } else {
        0.0
    }
}

fn sup_error(u: &GridFunction, exact: impl Fn(f64) -> f64, from: f64, to: f64) -> f64 {
    let g = *u.grid();
    (0..g.n())
        .filter(|&j| g.time(j) >= from - 1e-12 && g.time(j) <= to + 1e-12)
        .map(|j| (u.value(j, 0).re - exact(g.time(j))).abs())
        .fold(0.0, f64::max)
}

#[test]
fn two_delays_match_method_of_steps() {
    let grid = TimeGrid::with_step(0.0, 4.0, 1e-3).unwrap();
    let g: PointMap = Arc::new(|_, x, out| out[0] = -x[0] - x[1]);
    let phi = discrete_delay_rhs(g, vec![-1.0, -2.0], 1, 1.0).unwrap();
    let hist = HistoryFunction::constant(vec![c(1.0)], 2.0, 1e-3).unwrap();
    let sol = history_problem(Arc::new(phi), hist, &SolverConfig::new(grid)).unwrap();

    let sys =
        DelaySystem::linear_retarded(&[(1.0, 1.0), (1.0, 2.0)], History::constant(&[1.0])).unwrap();
    let tr = method_of_steps(&sys, 4.0, 1e-4).unwrap();
    let err = sup_error(&sol.report.solution, |t| tr.value(t)[0], 0.0, 4.0);
    assert!(err <= 1e-4, "sup error {err}");
}

#[test]
fn distributed_delay_matches_ode_reformulation() {
    // u' = -int_0^1 u(t - s) ds; with U(t) = int_{t-1}^t u this is u' = -U, U' = u - u(t - 1)
    let grid = TimeGrid::with_step(0.0, 4.0, 1e-3).unwrap();
    let h: KernelMap = Arc::new(|_, _, x, out| out[0] = -x[0]);
    let phi = integro_rhs(h, |_| 1.0, 1, 1.0).unwrap();
    let hist = HistoryFunction::constant(vec![c(1.0)], 1.0, 1e-3).unwrap();
    let sol = history_problem(Arc::new(phi), hist, &SolverConfig::new(grid)).unwrap();

    let rhs: Rhs = Arc::new(|a: &Args<'_>, out: &mut [f64]| {
        out[0] = -a.u[1];
        out[1] = a.u[0] - a.delayed[0][0];
    });
    let sys = DelaySystem::new(2, vec![1.0], History::constant(&[1.0, 1.0]), rhs).unwrap();
    let tr = method_of_steps(&sys, 4.0, 1e-4).unwrap();
    let err = sup_error(&sol.report.solution, |t| tr.value(t)[0], 0.0, 4.0);
    assert!(err <= 1e-3, "sup error {err}");
}

fn neutral_oracle(a: f64, b: f64, cc: f64) -> expodelay_oracle::Trajectory {
    let f = Arc::new(|t: f64, out: &mut [f64]| out[0] = pulse(t));
    let sys =
        DelaySystem::linear_neutral(1, vec![a], vec![b], vec![cc], 1.0, 1.0, f, History::zero(1))
            .unwrap();
    method_of_steps(&sys, 4.0, 1e-4).unwrap()
}

#[test]
fn neutral_linear_matches_method_of_steps() {
    let grid = TimeGrid::with_step(0.0, 4.0, 1e-3).unwrap();
    let m = |s: &str| parse_matrix(s, 1).unwrap();
    let f = GridFunction::from_real(grid, pulse);
    let rep = neutral_linear_solve(
        m("-1"),
        m("0"),
        m("0.5"),
        1.0,
        1.0,
        &f,
        &SolverConfig::new(grid),
    )
    .unwrap();
    let tr = neutral_oracle(-1.0, 0.0, 0.5);
    let err = sup_error(&rep.solution, |t| tr.value(t)[0], 0.0, 4.0);
    assert!(err <= 1e-3, "sup error {err}");

    let adm = neutral_admissibility(&m("0.5"), 1.0);
    assert!((adm.minimal_rho - 0.5f64.ln()).abs() < 1e-12);
    assert!(adm.minimal_rho < 0.0);
}

#[test]
fn neutral_resolvent_with_zero_coupling_is_a_delay_equation() {
    let grid = TimeGrid::with_step(0.0, 4.0, 1e-3).unwrap();
    let m = |s: &str| parse_matrix(s, 1).unwrap();
    let f = GridFunction::from_real(grid, pulse);
    let cfg = SolverConfig::new(grid)
        .with_rho(4.0)
        .unwrap()
        .with_tol(1e-13);
    let rep = neutral_linear_solve(m("-1"), m("-0.5"), m("0"), 1.0, 1.0, &f, &cfg).unwrap();

    let g: PointMap = Arc::new(|_, x, out| out[0] = -x[0] - 0.5 * x[1]);
    let dde = discrete_delay_rhs(g, vec![0.0, -1.0], 1, 1.0).unwrap();
    let direct = picard_solve(&add_source(Arc::new(dde), f), &cfg).unwrap();
    let diff = rep.solution.sub(&direct.solution).unwrap().sup_norm();
    assert!(diff <= 1e-8, "difference {diff}");
}

#[test]
fn general_neutral_matches_method_of_steps() {
    // x' = -x(t - 1) + 0.3 x'(t - 1) + pulse, alpha = beta = s + 1
    let grid = TimeGrid::with_step(0.0, 4.0, 1e-3).unwrap();
    let phi: NeutralMap = Arc::new(|_, x, y, out| out[0] = -x[0] + 0.3 * y[0]);
    let src = GridFunction::from_real(grid, pulse);
    let rhs = neutral_general_rhs(
        phi,
        1,
        1.0,
        MonotoneMap::shift(1.0),
        MonotoneMap::shift(1.0),
        1.0,
        Some(src),
    )
    .unwrap();
    let rep = picard_solve(&rhs, &SolverConfig::new(grid)).unwrap();
    let tr = neutral_oracle(0.0, -1.0, 0.3);
    let err = sup_error(&rep.solution, |t| tr.value(t)[0], 0.0, 4.0);
    assert!(err <= 1e-3, "sup error {err}");
}

#[test]
fn general_neutral_pure_delay_matches_discrete_delay() {
    let grid = TimeGrid::with_step(0.0, 4.0, 1e-3).unwrap();
    let src = GridFunction::from_real(grid, pulse);
    let phi: NeutralMap = Arc::new(|_, x, _, out| out[0] = -x[0]);
    let rhs = neutral_general_rhs(
        phi,
        1,
        1.0,
        MonotoneMap::shift(1.0),
        MonotoneMap::shift(2.0),
        1.0,
        Some(src.clone()),
    )
    .unwrap();
    let a = picard_solve(&rhs, &SolverConfig::new(grid)).unwrap();
    let g: PointMap = Arc::new(|_, x, out| out[0] = -x[0]);
    let dde = discrete_delay_rhs(g, vec![-1.0], 1, 1.0).unwrap();
    let b = picard_solve(&add_source(Arc::new(dde), src), &SolverConfig::new(grid)).unwrap();
    let diff = a.solution.sub(&b.solution).unwrap().sup_norm();
    assert!(diff <= 1e-6, "difference {diff}");
}

#[test]
fn wrapped_delay_matches_discrete_delay() {
    let grid = TimeGrid::with_step(-1.0, 6.0, 1e-3).unwrap();
    let ctx = SymbolContext {
        dim: 1,
        rho_min: 0.5,
    };
    let delay = make_symbol(SymbolKind::Delay { h: 1.0 }, &ctx).unwrap();
    let id = make_symbol(SymbolKind::Identity, &ctx).unwrap();
    let neg: PointMap = Arc::new(|_, x, out| out[0] = -x[0]);
    let src = GridFunction::from_real(grid, pulse);
    let wrapped = wrapped_rhs(delay, Arc::new(nemitzki_rhs(neg.clone(), 1, 1.0)), id).unwrap();
    let cfg = SolverConfig::new(grid).with_tol(1e-12);
    let a = picard_solve(&add_source(Arc::new(wrapped), src.clone()), &cfg).unwrap();
    let dde = discrete_delay_rhs(neg, vec![-1.0], 1, 1.0).unwrap();
    let b = picard_solve(&add_source(Arc::new(dde), src), &cfg).unwrap();
    let diff = a.solution.sub(&b.solution).unwrap().sup_norm();
    assert!(diff <= 1e-8, "difference {diff}");
}

#[test]
fn local_solution_with_inactive_projection_is_the_global_solution() {
    let grid = TimeGrid::with_step(-0.5, 3.0, 1e-3).unwrap();
    let neg: PointMap = Arc::new(|_, x, out| out[0] = -x[0]);
    let cfg = SolverConfig::new(grid).with_rho(2.0).unwrap();
    let local = local_solve(neg.clone(), 1.0, vec![c(1.0)], 1e6, 3.0, &cfg).unwrap();
    assert_eq!(local.t_star, grid.t_max());
    let ivp = ivp_problem(Arc::new(nemitzki_rhs(neg, 1, 1.0)), vec![c(1.0)]).unwrap();
    let global = picard_solve(&ivp, &cfg).unwrap();
    assert_eq!(local.report.solution, global.solution);
}

#[test]
fn local_solution_with_zero_field_lasts_the_whole_interval() {
    let grid = TimeGrid::with_step(-0.5, 2.0, 1e-3).unwrap();
    let zero: PointMap = Arc::new(|_, _, out| out.fill(C64::new(0.0, 0.0)));
    let local = local_solve(zero, 0.0, vec![c(1.0)], 1.0, 2.0, &SolverConfig::new(grid)).unwrap();
    assert_eq!(local.t_star, 2.0);
    let u = &local.report.solution;
    for j in grid.index_at_or_after(0.0)..grid.n() {
        assert_eq!(u.value(j, 0), c(1.0));
    }
}
