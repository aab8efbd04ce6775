use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use expodelay::{GridFunction, TimeGrid, C64};
use expodelay_cli::csv_io::{read_csv, write_csv};
use expodelay_cli::exit;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_expodelay"));
    c.env_remove("EXPODELAY_SEED");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn config(name: &str) -> PathBuf {
    configs().join(format!("{name}.ini"))
}

fn run(cmd: &mut Command) -> (i32, String, String) {
    let Output { status, stdout, stderr } = cmd.output().expect("binary runs");
    (
        status.code().unwrap_or(-1),
        String::from_utf8_lossy(&stdout).into_owned(),
        String::from_utf8_lossy(&stderr).into_owned(),
    )
}

fn at(u: &GridFunction, t: f64) -> f64 {
    u.value(u.grid().node_index(t).unwrap(), 0).re
}

#[test]
fn solve_writes_csv_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("u.csv");
    let (code, _, err) = run(bin().arg("solve").arg(config("exp_decay")).arg("--out").arg(&out));
    assert_eq!(code, exit::OK, "{err}");
    let u = read_csv(&out).unwrap();
    assert!((at(&u, 1.0) - (-1.0f64).exp()).abs() < 1e-4);
    let report = fs::read_to_string(dir.path().join("u.csv.report")).unwrap();
    for key in ["iterations", "contraction_estimate", "residual", "rho_used", "tail_bound"] {
        assert!(report.lines().any(|l| l.starts_with(&format!("{key} = "))), "{key} missing:\n{report}");
    }

    let out = dir.path().join("local.csv");
    let (code, _, _) = run(bin().arg("solve").arg(config("local")).arg("--out").arg(&out));
    assert_eq!(code, exit::OK);
    let report = fs::read_to_string(dir.path().join("local.csv.report")).unwrap();
    assert!(report.contains("t_star = "), "{report}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("u.csv");
    let (code, _, err) = run(bin().arg("solve").arg(config("too_small_rho")).arg("--out").arg(&out));
    assert_eq!(code, exit::NON_CONTRACTION, "{err}");
    assert!(!out.exists());

    let bad = dir.path().join("bad.ini");
    let text = fs::read_to_string(config("exp_decay")).unwrap().replace("u0 = 1", "u_0 = 1");
    fs::write(&bad, text).unwrap();
    let (code, _, err) = run(bin().arg("solve").arg(&bad).arg("--out").arg(&out));
    assert_eq!(code, exit::CONFIG);
    assert!(err.contains("ode.u_0"), "{err}");

    let (code, _, _) = run(bin().arg("solve").arg(dir.path().join("missing.ini")).arg("--out").arg(&out));
    assert_eq!(code, exit::IO);
    let (code, _, _) = run(bin().arg("solve").arg(config("exp_decay")).arg("--out").arg(dir.path().join("no/such/dir/u.csv")));
    assert_eq!(code, exit::IO);
    let (code, _, _) = run(bin().arg("frobnicate"));
    assert_eq!(code, exit::CONFIG);
    let (code, _, _) = run(bin().arg("--help"));
    assert_eq!(code, exit::OK);
    let (code, _, _) = run(bin().args(["diagnose", "flatness"]).arg(config("exp_decay")));
    assert_eq!(code, exit::CONFIG);

    // growth the window cannot hold
    let wild = dir.path().join("wild.ini");
    let text = fs::read_to_string(config("exp_decay")).unwrap().replace("a = -1", "a = 30").replace("rho = 2", "rho = 31");
    fs::write(&wild, text).unwrap();
    let (code, _, err) = run(bin().arg("solve").arg(&wild).arg("--out").arg(&out));
    assert_eq!(code, exit::NUMERIC, "{err}");
}

#[test]
fn output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for out in [&a, &b] {
        let (code, _, _) = run(bin().arg("solve").arg(config("dde_discrete")).arg("--out").arg(out));
        assert_eq!(code, exit::OK);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let diag = || run(bin().args(["diagnose", "memory"]).arg(config("dde_discrete")));
    assert_eq!(diag().1, diag().1);
    let seeded = run(bin().env("EXPODELAY_SEED", "99").args(["diagnose", "memory"]).arg(config("dde_discrete")));
    assert_ne!(seeded.1, diag().1);
}

fn series(grid: TimeGrid, f: impl Fn(f64) -> f64, dir: &Path, name: &str) -> PathBuf {
    let p = dir.join(name);
    write_csv(&p, &GridFunction::from_real(grid, f)).unwrap();
    p
}

fn transform(symbol: &str, input: &Path, out: &Path) -> GridFunction {
    let (code, _, err) = run(bin().args(["transform", "--symbol", symbol, "--rho", "1", "--in"]).arg(input).arg("--out").arg(out));
    assert_eq!(code, exit::OK, "{err}");
    read_csv(out).unwrap()
}

#[test]
fn transform_examples() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.csv");
    let grid = TimeGrid::with_step(-1.0, 5.0, 1e-3).unwrap();
    let chi = series(grid, |t| if (0.0..1.0).contains(&t) { 1.0 } else { 0.0 }, dir.path(), "chi.csv");
    let g = transform("delay:h=1", &chi, &out);
    let err = (0..grid.n())
        .map(|j| {
            let t = grid.time(j);
            (g.value(j, 0).re - if (1.0..2.0).contains(&(t + 1e-9)) { 1.0 } else { 0.0 }).abs()
        })
        .fold(0.0, f64::max);
    assert!(err < 1e-6, "delay error {err}");

    let smooth = series(grid, |t| (-(t - 2.0) * (t - 2.0) * 4.0).exp(), dir.path(), "smooth.csv");
    let g = transform("fractional:alpha=1", &smooth, &out);
    let h = transform("integrate", &smooth, &dir.path().join("int.csv"));
    assert!(g.sub(&h).unwrap().sup_norm() < 1e-10);
    assert!((at(&h, 5.0) - std::f64::consts::PI.sqrt() / 2.0).abs() < 1e-6);

    let grid = TimeGrid::with_step(0.0, 5.0, 1e-3).unwrap();
    let step = series(grid, |_| 1.0, dir.path(), "step.csv");
    let g = transform("fractional:alpha=0.5", &step, &out);
    let err = grid.times().enumerate().map(|(j, t)| (g.value(j, 0).re - 2.0 * (t / std::f64::consts::PI).sqrt()).abs()).fold(0.0, f64::max);
    assert!(err < 1e-3, "{err}");

    let (code, _, _) = run(bin().args(["transform", "--symbol", "delay:h=-1", "--rho", "1", "--in"]).arg(&step).arg("--out").arg(&out));
    assert_eq!(code, exit::CONFIG);
    fs::write(dir.path().join("broken.csv"), "t,re_u0,im_u0\n0,1,0\n0,1,0\n").unwrap();
    let (code, _, _) = run(bin().args(["transform", "--symbol", "integrate", "--rho", "1", "--in"]).arg(dir.path().join("broken.csv")).arg("--out").arg(&out));
    assert_ne!(code, exit::OK);
}

#[test]
fn diagnose_examples() {
    let (code, text, _) = run(bin().args(["diagnose", "memory"]).arg(config("dde_discrete")));
    assert_eq!(code, exit::DIAGNOSTIC_FAILED);
    assert!(text.contains("has_delay") && text.contains("expected for this problem"), "{text}");
    assert!(text.contains("witness"), "{text}");

    let (code, text, _) = run(bin().args(["diagnose", "memory"]).arg(config("exp_decay")));
    assert_eq!(code, exit::OK, "{text}");
    assert!(text.contains("no_delay"));
    assert!(!text.contains("disagree"));

    for name in ["exp_decay", "dde_benchmark", "dde_discrete", "integro", "neutral_linear", "neutral_general", "wrapped", "local"] {
        let (code, text, err) = run(bin().args(["diagnose", "rho_independence"]).arg(config(name)));
        assert_eq!(code, exit::OK, "{name}: {text}{err}");
        let (code, text, err) = run(bin().args(["diagnose", "trace"]).arg(config(name)));
        assert_eq!(code, exit::OK, "{name}: {text}{err}");
    }
    for kind in ["causality", "autonomy"] {
        let (code, text, err) = run(bin().args(["diagnose", kind]).arg(config("dde_benchmark")));
        assert_eq!(code, exit::OK, "{kind}: {text}{err}");
        assert!(text.contains("certificate on probes"));
    }
}

#[test]
fn oracle_examples() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ref.csv");
    let (code, _, err) = run(bin().arg("oracle").arg(config("dde_benchmark")).arg("--out").arg(&out));
    assert_eq!(code, exit::OK, "{err}");
    let u = read_csv(&out).unwrap();
    assert!((at(&u, 0.5) - 0.5).abs() < 1e-10);
    assert!(at(&u, 1.0).abs() < 1e-10);
    assert!((at(&u, 2.0) + 0.5).abs() < 1e-10);
    assert_eq!(at(&u, -0.5), 1.0);

    // zero dynamics continue the history value
    let zero = dir.path().join("zero.ini");
    fs::write(&zero, fs::read_to_string(config("dde_benchmark")).unwrap().replace("matrices = -1", "matrices = 0")).unwrap();
    let (code, _, _) = run(bin().arg("oracle").arg(&zero).arg("--out").arg(&out));
    assert_eq!(code, exit::OK);
    let u = read_csv(&out).unwrap();
    assert!(u.samples().iter().all(|z| *z == C64::new(1.0, 0.0)));

    let (code, _, _) = run(bin().arg("oracle").arg(config("wrapped")).arg("--out").arg(&out));
    assert_eq!(code, exit::CONFIG);
}
