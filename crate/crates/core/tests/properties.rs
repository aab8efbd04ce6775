use std::sync::Arc;

use expodelay::calculus_ops::{anticausal_integrate, causal_integrate, cutoff, derivative, translate, CutoffSide};
use expodelay::diagnostics::{check_amnesic, check_causal, reflect};
use expodelay::fourier_laplace::{apply_symbol, make_symbol, CMatrix, Symbol, SymbolContext, SymbolKind};
use expodelay::problems::{
    add_source, discrete_delay_rhs, history_problem, ivp_problem, local_solve, nemitzki_rhs,
    neutral_linear_solve, whole_past_lift, HistoryFunction, PointMap,
};
use expodelay::solver::{picard_solve, RhoChoice, RhsOperator, SolverConfig};
use expodelay::weighted_space::{inner_product, norm, GridFunction, SobolevIndex, TimeGrid, Weight, C64};
use expodelay::{classify_memory, Agreement, ProbeSet};
use proptest::prelude::*;

fn w(rho: f64) -> Weight {
    Weight::new(rho).unwrap()
}

fn c(v: f64) -> C64 {
    C64::new(v, 0.0)
}

fn bump(t: f64, center: f64, radius: f64) -> f64 {
    let s = (t - center) / radius;
    if s.abs() < 1.0 {
        (1.0 - s * s).powi(3)
    } else {
        0.0
    }
}

/// Bumps `(center, radius, amplitude)` as fractions of a support interval.
fn bumps() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec((0.0..1.0f64, 0.05..0.3f64, -1.0..1.0f64), 1..4)
}

/// Signal supported in `[lo, hi]`.
fn signal(grid: TimeGrid, lo: f64, hi: f64, parts: &[(f64, f64, f64)]) -> GridFunction {
    let len = hi - lo;
    let parts: Vec<(f64, f64, f64)> = parts
        .iter()
        .map(|&(c, r, a)| {
            let r = r * len;
            (lo + r + c * (len - 2.0 * r), r, a)
        })
        .collect();
    GridFunction::from_real(grid, move |t| parts.iter().map(|&(c, r, a)| a * bump(t, c, r)).sum())
}

fn complex_signal(grid: TimeGrid, lo: f64, hi: f64, re: &[(f64, f64, f64)], im: &[(f64, f64, f64)]) -> GridFunction {
    let (a, b) = (signal(grid, lo, hi, re), signal(grid, lo, hi, im));
    let s = a.samples().iter().zip(b.samples()).map(|(x, y)| C64::new(x.re, y.re)).collect();
    GridFunction::new(grid, 1, s).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn sup_before(a: &GridFunction, b: &GridFunction, t_cut: f64) -> f64 {
    let grid = *a.grid();
    (0..grid.n())
        .filter(|&j| grid.time(j) < t_cut)
        .map(|j| (a.value(j, 0) - b.value(j, 0)).norm())
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// weighted spaces

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn translation_weight_identity(parts in bumps(), steps in -300i32..300, rho in 0.5..4.0f64) {
        let grid = TimeGrid::with_step(0.0, 10.0, 1e-2).unwrap();
        let f = signal(grid, 3.5, 6.5, &parts);
        let h = steps as f64 * grid.dt();
        let lhs = norm(&translate(&f, h), w(rho), SobolevIndex::Zero).unwrap();
        let rhs = (rho * h).exp() * norm(&f, w(rho), SobolevIndex::Zero).unwrap();
        prop_assert!(rel(lhs, rhs) <= 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn cauchy_schwarz(a in bumps(), b in bumps(), c2 in bumps(), d in bumps(), rho in -3.0..3.0f64) {
        prop_assume!(rho.abs() > 0.1);
        let grid = TimeGrid::with_step(-2.0, 6.0, 1e-2).unwrap();
        let f = complex_signal(grid, -1.0, 5.0, &a, &b);
        let g = complex_signal(grid, -1.0, 5.0, &c2, &d);
        let ip = inner_product(&f, &g, w(rho)).unwrap().norm();
        let bound = norm(&f, w(rho), SobolevIndex::Zero).unwrap() * norm(&g, w(rho), SobolevIndex::Zero).unwrap();
        prop_assert!(ip <= bound * (1.0 + 1e-12));
    }

    #[test]
    fn norm_does_not_see_window_growth(parts in bumps(), rho in 0.2..3.0f64) {
        let small = TimeGrid::with_step(-1.0, 4.0, 1e-2).unwrap();
        let large = TimeGrid::with_step(-3.0, 8.0, 1e-2).unwrap();
        for k in [SobolevIndex::Zero, SobolevIndex::One] {
            let a = norm(&signal(small, 0.0, 2.0, &parts), w(rho), k).unwrap();
            let b = norm(&signal(large, 0.0, 2.0, &parts), w(rho), k).unwrap();
            prop_assert!(rel(a, b) < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn norms_scale_with_the_modulus(parts in bumps(), re in -5.0..5.0f64, im in -5.0..5.0f64, rho in 0.2..3.0f64) {
        let grid = TimeGrid::with_step(-1.0, 4.0, 1e-2).unwrap();
        let f = signal(grid, 0.0, 3.0, &parts);
        let z = C64::new(re, im);
        for k in [SobolevIndex::Zero, SobolevIndex::One] {
            let a = norm(&f.scale(z), w(rho), k).unwrap();
            let b = z.norm() * norm(&f, w(rho), k).unwrap();
            prop_assert!((a - b).abs() <= 1e-14 * b.max(1e-300), "{a} vs {b}");
        }
    }
}

// ---------------------------------------------------------------------------
// calculus

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn integrator_contracts(parts in bumps(), rho in 0.5..4.0f64) {
        let grid = TimeGrid::with_step(-1.0, 12.0, 1e-3).unwrap();
        let f = signal(grid, 0.0, 5.0, &parts);
        let ratio = norm(&causal_integrate(&f, w(rho)).unwrap(), w(rho), SobolevIndex::Zero).unwrap()
            / norm(&f, w(rho), SobolevIndex::Zero).unwrap();
        prop_assert!(ratio <= 1.0 / rho + 1e-6, "ratio {ratio} at rho {rho}");
    }

    #[test]
    fn derivative_inverts_the_integral(parts in bumps()) {
        let grid = TimeGrid::with_step(-1.0, 6.0, 1e-3).unwrap();
        let f = signal(grid, 0.0, 5.0, &parts);
        let back = derivative(&causal_integrate(&f, w(1.0)).unwrap()).unwrap();
        let err = (1..grid.n() - 1).map(|j| (back.value(j, 0) - f.value(j, 0)).norm()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-4 * f.sup_norm().max(1e-3), "{err}");
    }

    #[test]
    fn integrator_is_causal(parts in bumps(), a in 0.0..5.0f64, rho in 0.5..3.0f64) {
        let grid = TimeGrid::with_step(-1.0, 6.0, 1e-2).unwrap();
        let f = signal(grid, -0.5, 5.5, &parts);
        let below = CutoffSide::Below(a);
        let full = cutoff(&causal_integrate(&f, w(rho)).unwrap(), below);
        let cut = cutoff(&causal_integrate(&cutoff(&f, below), w(rho)).unwrap(), below);
        prop_assert!(full.sub(&cut).unwrap().sup_norm() <= 1e-12);
    }

    #[test]
    fn translations_compose(parts in bumps(), s1 in -100i32..100, s2 in -100i32..100) {
        let grid = TimeGrid::with_step(0.0, 10.0, 1e-2).unwrap();
        let f = signal(grid, 3.0, 7.0, &parts);
        let (h1, h2) = (s1 as f64 * 1e-2, s2 as f64 * 1e-2);
        let twice = translate(&translate(&f, h1), h2);
        let once = translate(&f, (s1 + s2) as f64 * 1e-2);
        prop_assert_eq!(twice, once);
    }
}

// ---------------------------------------------------------------------------
// functional calculus

fn ctx(rho_min: f64) -> SymbolContext {
    SymbolContext { dim: 1, rho_min }
}

fn library(dt: f64) -> Vec<Arc<dyn Symbol>> {
    let m = |v: f64| CMatrix::from_element(1, 1, c(v));
    let kgrid = TimeGrid::with_step(0.0, 1.0, dt).unwrap();
    let kernel = GridFunction::from_real(kgrid, |t| (-t).exp());
    [
        SymbolKind::Identity,
        SymbolKind::Integrate,
        SymbolKind::Delay { h: 0.75 },
        SymbolKind::Fractional { alpha: 0.5 },
        SymbolKind::Convolution { kernel },
        SymbolKind::MatrixAffine { a: m(-1.0), b: m(0.5), h: 1.0 },
        SymbolKind::NeutralResolvent { c: m(0.5), h: 1.0, rho_min: 0.5 },
    ]
    .into_iter()
    .map(|k| make_symbol(k, &ctx(0.5)).unwrap())
    .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn symbols_do_not_depend_on_rho(parts in bumps(), h in 0.1..2.0f64, alpha in 0.1..1.0f64) {
        let grid = TimeGrid::with_step(-1.0, 5.0, 1e-2).unwrap();
        let f = signal(grid, 0.0, 2.5, &parts);
        for kind in [SymbolKind::Delay { h }, SymbolKind::Fractional { alpha }] {
            let s = make_symbol(kind, &ctx(1.0)).unwrap();
            let a = apply_symbol(&f, s.as_ref(), w(2.0)).unwrap();
            let b = apply_symbol(&f, s.as_ref(), w(4.0)).unwrap();
            let err = a.sub(&b).unwrap().sup_norm() / a.sup_norm().max(1e-12);
            prop_assert!(err <= 1e-6, "{}: {err}", s.label());
        }
    }

    #[test]
    fn symbol_application_is_causal(parts in bumps(), a in 0.0..4.0f64) {
        let grid = TimeGrid::with_step(-1.0, 5.0, 1e-2).unwrap();
        let f = signal(grid, -0.5, 4.5, &parts);
        let below = CutoffSide::Below(a);
        for s in library(grid.dt()) {
            let full = cutoff(&apply_symbol(&f, s.as_ref(), w(1.0)).unwrap(), below);
            let cut = cutoff(&apply_symbol(&cutoff(&f, below), s.as_ref(), w(1.0)).unwrap(), below);
            let err = full.sub(&cut).unwrap().sup_norm();
            prop_assert!(err <= 1e-8 * f.sup_norm().max(1.0), "{}: {err}", s.label());
        }
    }

    #[test]
    fn symbols_respect_their_norm_bound(parts in bumps(), rho in 0.6..3.0f64) {
        let grid = TimeGrid::with_step(-1.0, 6.0, 1e-2).unwrap();
        let f = signal(grid, 0.0, 4.0, &parts);
        for s in library(grid.dt()) {
            let out = norm(&apply_symbol(&f, s.as_ref(), w(rho)).unwrap(), w(rho), SobolevIndex::Zero).unwrap();
            let bound = s.norm_bound() * norm(&f, w(rho), SobolevIndex::Zero).unwrap();
            prop_assert!(out <= bound * (1.0 + 1e-6), "{}: {out} > {bound}", s.label());
        }
    }

    #[test]
    fn delays_form_a_group(parts in bumps(), h1 in 0.0..1.5f64, h2 in 0.0..1.5f64) {
        let grid = TimeGrid::with_step(-1.0, 6.0, 1e-2).unwrap();
        let f = signal(grid, 0.0, 2.5, &parts);
        let d = |h: f64| make_symbol(SymbolKind::Delay { h }, &ctx(1.0)).unwrap();
        let twice = apply_symbol(&apply_symbol(&f, d(h1).as_ref(), w(1.0)).unwrap(), d(h2).as_ref(), w(1.0)).unwrap();
        let once = apply_symbol(&f, d(h1 + h2).as_ref(), w(1.0)).unwrap();
        // fractional-step delays interpolate linearly; the law is exact on whole steps
        let aligned = grid.is_aligned(h1) && grid.is_aligned(h2);
        let tol = if aligned { 1e-8 } else { 5e-2 * f.sup_norm() };
        prop_assert!(twice.sub(&once).unwrap().sup_norm() <= tol);
    }

    #[test]
    fn whole_steps_delays_form_a_group(parts in bumps(), s1 in 0usize..150, s2 in 0usize..150) {
        let grid = TimeGrid::with_step(-1.0, 6.0, 1e-2).unwrap();
        let f = signal(grid, 0.0, 2.5, &parts);
        let d = |k: usize| make_symbol(SymbolKind::Delay { h: k as f64 * 1e-2 }, &ctx(1.0)).unwrap();
        let twice = apply_symbol(&apply_symbol(&f, d(s1).as_ref(), w(1.0)).unwrap(), d(s2).as_ref(), w(1.0)).unwrap();
        let once = apply_symbol(&f, d(s1 + s2).as_ref(), w(1.0)).unwrap();
        prop_assert!(twice.sub(&once).unwrap().sup_norm() <= 1e-8);
    }
}

// ---------------------------------------------------------------------------
// solver

/// `u' = a sin(u(t + theta)) + f`, zero past.
fn scalar_problem(a: f64, theta: f64) -> Arc<dyn RhsOperator> {
    let g: PointMap = Arc::new(move |_, x, out| out[0] = x[0].sin() * a);
    if theta == 0.0 {
        Arc::new(nemitzki_rhs(g, 1, a.abs()))
    } else {
        Arc::new(discrete_delay_rhs(g, vec![theta], 1, a.abs()).unwrap())
    }
}

fn theta() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), Just(-0.5), Just(-1.0)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn increments_shrink_geometrically(parts in bumps(), a in -1.0..1.0f64, th in theta()) {
        let grid = TimeGrid::with_step(-1.0, 6.0, 1e-2).unwrap();
        let f = signal(grid, 0.0, 3.0, &parts);
        let rhs = add_source(scalar_problem(a, th), f);
        let report = picard_solve(&rhs, &SolverConfig::new(grid).with_rho(2.0).unwrap()).unwrap();
        prop_assert!(report.contraction_estimate < 1.0);
        let inc = &report.increments;
        let top = inc.iter().cloned().fold(0.0, f64::max);
        for k in 2..inc.len().saturating_sub(1) {
            if inc[k + 1] > 1e-13 * top {
                prop_assert!(inc[k + 1] <= (report.predicted_contraction + 0.05) * inc[k], "step {k}: {:?}", inc);
            }
        }
    }

    #[test]
    fn solutions_do_not_depend_on_rho(parts in bumps(), a in -1.0..1.0f64, th in theta()) {
        let grid = TimeGrid::with_step(-1.0, 5.0, 1e-2).unwrap();
        let rhs = add_source(scalar_problem(a, th), signal(grid, 0.0, 3.0, &parts));
        let cfg = SolverConfig::new(grid).with_tol(1e-14).with_max_iter(400);
        let u2 = picard_solve(&rhs, &cfg.with_rho(2.0).unwrap()).unwrap().solution;
        let u4 = picard_solve(&rhs, &cfg.with_rho(4.0).unwrap()).unwrap().solution;
        prop_assert!(u2.sub(&u4).unwrap().sup_norm() <= 1e-8);
    }

    #[test]
    fn solution_operator_is_causal(parts in bumps(), late in bumps(), a in -1.0..1.0f64, th in theta(), cut in 1.0..3.0f64) {
        let grid = TimeGrid::with_step(-1.0, 5.0, 1e-2).unwrap();
        let f = signal(grid, 0.0, 4.0, &parts);
        let z = signal(grid, cut + 1e-6, 4.5, &late);
        let cfg = SolverConfig::new(grid).with_rho(2.0).unwrap().with_tol(1e-14);
        let u = picard_solve(&add_source(scalar_problem(a, th), f.clone()), &cfg).unwrap().solution;
        let v = picard_solve(&add_source(scalar_problem(a, th), f.add(&z).unwrap()), &cfg).unwrap().solution;
        prop_assert!(sup_before(&u, &v, cut) < 1e-12);
    }

    #[test]
    fn translated_sources_give_translated_solutions(parts in bumps(), a in -1.0..1.0f64, th in theta(), steps in -50i32..50) {
        let grid = TimeGrid::with_step(-1.0, 6.0, 1e-2).unwrap();
        let f = signal(grid, 1.0, 3.0, &parts);
        let h = steps as f64 * grid.dt();
        let cfg = SolverConfig::new(grid).with_rho(2.0).unwrap().with_tol(1e-13);
        let u = picard_solve(&add_source(scalar_problem(a, th), f.clone()), &cfg).unwrap().solution;
        let v = picard_solve(&add_source(scalar_problem(a, th), translate(&f, h)), &cfg).unwrap().solution;
        let shifted = translate(&u, h);
        // compare where the translate has data
        let keep = |t: f64| t <= grid.t_max() - h.max(0.0) - 1e-9;
        let err = (0..grid.n()).filter(|&j| keep(grid.time(j))).map(|j| (v.value(j, 0) - shifted.value(j, 0)).norm()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-9, "{err}");
    }
}

// ---------------------------------------------------------------------------
// diagnostics

fn reflected_operator(op: &dyn Fn(&GridFunction) -> expodelay::Result<GridFunction>, u: &GridFunction) -> expodelay::Result<GridFunction> {
    Ok(reflect(&op(&reflect(u))?))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn reflection_exchanges_causality_and_amnesia(seed in any::<u64>()) {
        let grid = TimeGrid::with_step(-2.0, 6.0, 2e-2).unwrap();
        let rho = w(1.0);
        let probes = ProbeSet::with_counts(grid, 1, rho, seed, Agreement::Before, 3, 4);
        let mirrored = probes.reflected().unwrap();
        let ops: Vec<Box<dyn Fn(&GridFunction) -> expodelay::Result<GridFunction>>> = vec![
            Box::new(move |u| causal_integrate(u, rho)),
            Box::new(move |u| anticausal_integrate(u, w(-1.0))),
            Box::new(|u| Ok(translate(u, 0.5))),
            Box::new(|u| Ok(translate(u, -0.5))),
            Box::new(|u| Ok(u.map(|z| z * z))),
        ];
        for op in &ops {
            let causal = check_causal(op.as_ref(), &probes, 1e-10).unwrap().passed;
            let conj = |u: &GridFunction| reflected_operator(op.as_ref(), u);
            let amnesic = check_amnesic(&conj, &mirrored, 1e-10).unwrap().passed;
            prop_assert_eq!(causal, amnesic);
        }
    }

    #[test]
    fn memory_class_ignores_constant_sources(seed in any::<u64>(), g in -2.0..2.0f64, th in theta()) {
        let grid = TimeGrid::with_step(-1.0, 5.0, 1e-2).unwrap();
        let probes = ProbeSet::with_counts(grid, 1, w(2.0), seed, Agreement::After, 3, 4);
        let f = scalar_problem(-1.0, th);
        let shifted = add_source(f.clone(), GridFunction::from_real(grid, move |_| g));
        let a = classify_memory(f.as_ref(), w(2.0), &probes).unwrap();
        let b = classify_memory(&shifted, w(2.0), &probes).unwrap();
        prop_assert_eq!(a.has_delay(), b.has_delay());
        prop_assert_eq!(a.has_delay(), th != 0.0);
    }
}

#[test]
fn solution_operators_pass_the_causality_check() {
    let grid = TimeGrid::with_step(-1.0, 5.0, 2e-2).unwrap();
    let cfg = SolverConfig::new(grid).with_rho(2.0).unwrap().with_tol(1e-14);
    for th in [0.0, -1.0] {
        let f = scalar_problem(-1.0, th);
        let solve = |src: &GridFunction| Ok(picard_solve(&add_source(f.clone(), src.clone()), &cfg)?.solution);
        let probes = ProbeSet::standard(grid, 1, w(2.0), 11, Agreement::Before);
        let v = check_causal(&solve, &probes, 1e-10).unwrap();
        assert!(v.passed, "{v}");
    }
}

// ---------------------------------------------------------------------------
// problems

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn ivp_solutions_start_at_zero_plus(u0 in -3.0..3.0f64, a in -1.0..1.0f64) {
        let grid = TimeGrid::with_step(-1.0, 4.0, 1e-2).unwrap();
        let ivp = ivp_problem(scalar_problem(a, 0.0), vec![c(u0)]).unwrap();
        let u = picard_solve(&ivp, &SolverConfig::new(grid).with_rho(2.0).unwrap()).unwrap().solution;
        let zero = grid.node_index(0.0).unwrap();
        prop_assert!((0..zero).all(|j| u.value(j, 0).norm() <= 1e-12));
        prop_assert_eq!(u.value(zero, 0), c(u0));
    }

    #[test]
    fn history_splice_is_continuous_and_solves_the_equation(c0 in -1.0..1.0f64, c1 in -1.0..1.0f64, c2 in -1.0..1.0f64) {
        let dt = 1e-3;
        let grid = TimeGrid::with_step(0.0, 3.0, dt).unwrap();
        let g: PointMap = Arc::new(|_, x, out| out[0] = -x[0]);
        let phi = discrete_delay_rhs(g, vec![-1.0], 1, 1.0).unwrap();
        let hist = HistoryFunction::polynomial(vec![vec![c0, c1, c2]], 1.0, dt).unwrap();
        let sol = history_problem(Arc::new(phi), hist, &SolverConfig::new(grid).with_tol(1e-13)).unwrap();
        let u = &sol.spliced;
        let sg = *u.grid();
        let zero = sg.node_index(0.0).unwrap();
        prop_assert!((u.value(zero, 0) - c(c0)).norm() <= 1e-10);
        prop_assert!((u.value(zero - 1, 0) - u.value(zero, 0)).norm() <= 2.0 * dt * 3.0);
        // u'(t) = -u(t - 1) away from the breakpoints 0, 1, 2
        let du = derivative(u).unwrap();
        let lag = (1.0 / dt).round() as usize;
        let mut worst: f64 = 0.0;
        for j in zero + 1..sg.n() - 1 {
            let t = sg.time(j);
            if (t - t.round()).abs() < 3.0 * dt {
                continue;
            }
            worst = worst.max((du.value(j, 0) + u.value(j - lag, 0)).norm());
        }
        prop_assert!(worst <= 1e-5, "residual {worst}");
    }

    #[test]
    fn whole_past_factor(parts in bumps(), rho in prop_oneof![Just(1.0), Just(2.0), Just(4.0)]) {
        let grid = TimeGrid::with_step(-1.0, 2.0 + 15.0 / rho, 1e-3).unwrap();
        let u = signal(grid, 0.0, 2.0, &parts);
        let ratio = whole_past_lift(&u, grid.n()).norm(w(rho)).powi(2)
            / norm(&u, w(rho), SobolevIndex::Zero).unwrap().powi(2);
        prop_assert!((ratio * 2.0 * rho - 1.0).abs() <= 0.02, "{ratio}");
    }

    #[test]
    fn neutral_without_derivative_term_is_a_delay_equation(parts in bumps(), a in -1.0..0.0f64, b in -1.0..1.0f64) {
        let grid = TimeGrid::with_step(-1.0, 4.0, 1e-2).unwrap();
        let f = signal(grid, 0.0, 2.0, &parts);
        let m = |v: f64| CMatrix::from_element(1, 1, c(v));
        let cfg = SolverConfig { rho: RhoChoice::Fixed(w(4.0)), ..SolverConfig::new(grid).with_tol(1e-13) };
        let neutral = neutral_linear_solve(m(a), m(b), m(0.0), 1.0, 1.0, &f, &cfg).unwrap().solution;
        let g: PointMap = Arc::new(move |_, x, out| out[0] = x[0] * a + x[1] * b);
        let dde = discrete_delay_rhs(g, vec![0.0, -1.0], 1, 1.0).unwrap();
        let direct = picard_solve(&add_source(Arc::new(dde), f), &cfg).unwrap().solution;
        prop_assert!(neutral.sub(&direct).unwrap().sup_norm() <= 1e-8);
    }

    #[test]
    fn inactive_projection_changes_nothing(a in -1.0..0.0f64, u0 in 0.1..2.0f64) {
        let grid = TimeGrid::with_step(-0.5, 3.0, 1e-2).unwrap();
        let g: PointMap = Arc::new(move |_, x, out| out[0] = x[0] * a);
        let cfg = SolverConfig::new(grid).with_rho(2.0).unwrap();
        let local = local_solve(g.clone(), 1.0, vec![c(u0)], 10.0, 3.0, &cfg).unwrap();
        let ivp = ivp_problem(Arc::new(nemitzki_rhs(g, 1, 1.0)), vec![c(u0)]).unwrap();
        let global = picard_solve(&ivp, &cfg).unwrap();
        prop_assert_eq!(local.t_star, grid.t_max());
        prop_assert_eq!(local.report.solution, global.solution);
    }
}
