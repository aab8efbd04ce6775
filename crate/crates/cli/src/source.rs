//! Source terms named in configs: `none`, `pulse:t0=..,t1=..,amp=..`,
//! `box:t0=..,t1=..,amp=..`, `step:t0=..,amp=..` and `csv:path=..`.

use std::path::Path;
use std::sync::Arc;

use expodelay::fourier_laplace::parse_symbol_spec;
use expodelay::{GridFunction, TimeGrid, C64};

use crate::{CliError, Result};

#[derive(Clone)]
pub enum Source {
    Zero,
    /// `amp s^2 (2 - s)^2` with `s = 2 (t - t0) / (t1 - t0)` on `[t0, t1]`.
    Pulse { t0: f64, t1: f64, amp: f64 },
    Box { t0: f64, t1: f64, amp: f64 },
    Step { t0: f64, amp: f64 },
    /// Linear interpolation of a series, zero outside it.
    Series(Arc<GridFunction>),
}

impl std::fmt::Debug for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Source::Zero => f.write_str("Zero"),
            Source::Pulse { t0, t1, amp } => write!(f, "Pulse({t0}, {t1}, {amp})"),
            Source::Box { t0, t1, amp } => write!(f, "Box({t0}, {t1}, {amp})"),
            Source::Step { t0, amp } => write!(f, "Step({t0}, {amp})"),
            Source::Series(g) => write!(f, "Series({} nodes)", g.grid().n()),
        }
    }
}

impl Source {
    /// `base` resolves relative CSV paths.
    pub fn parse(spec: &str, dim: usize, base: &Path) -> Result<Self> {
        let (name, args) = parse_symbol_spec(spec)?;
        let num = |k: &str| args.f64(k).map_err(CliError::from);
        let amp = || -> Result<f64> { if args.get("amp").is_some() { num("amp") } else { Ok(1.0) } };
        let src = match name.as_str() {
            "none" | "zero" => {
                args.only(&[])?;
                Source::Zero
            }
            "pulse" | "box" => {
                args.only(&["t0", "t1", "amp"])?;
                let (t0, t1) = (num("t0")?, num("t1")?);
                if !(t1 > t0) {
                    return Err(CliError::config(format!("source {spec:?}: t1 must exceed t0")));
                }
                if name == "pulse" {
                    Source::Pulse { t0, t1, amp: amp()? }
                } else {
                    Source::Box { t0, t1, amp: amp()? }
                }
            }
            "step" => {
                args.only(&["t0", "amp"])?;
                Source::Step { t0: num("t0")?, amp: amp()? }
            }
            "csv" => {
                args.only(&["path"])?;
                let p = args.get("path").ok_or_else(|| CliError::config("csv source needs path=..."))?;
                let series = crate::csv_io::read_csv(&base.join(p))?;
                if series.dim() != dim {
                    return Err(CliError::config(format!("source series has dimension {}, expected {dim}", series.dim())));
                }
                Source::Series(Arc::new(series))
            }
            other => return Err(CliError::config(format!("unknown source {other:?}"))),
        };
        Ok(src)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Source::Zero)
    }

    /// Value of every component at `t`.
    pub fn eval(&self, t: f64, out: &mut [C64]) {
        let scalar = |v: f64, out: &mut [C64]| out.fill(C64::new(v, 0.0));
        match self {
            Source::Zero => scalar(0.0, out),
            Source::Pulse { t0, t1, amp } => {
                let v = if t >= *t0 && t <= *t1 {
                    let s = 2.0 * (t - t0) / (t1 - t0);
                    amp * s * s * (2.0 - s) * (2.0 - s)
                } else {
                    0.0
                };
                scalar(v, out)
            }
            Source::Box { t0, t1, amp } => scalar(if t >= *t0 && t < *t1 { *amp } else { 0.0 }, out),
            Source::Step { t0, amp } => scalar(if t >= *t0 { *amp } else { 0.0 }, out),
            Source::Series(g) => {
                let grid = g.grid();
                if t < grid.t_min() || t > grid.t_max() {
                    scalar(0.0, out)
                } else {
                    g.eval_into(t, out)
                }
            }
        }
    }

    pub fn sample(&self, grid: TimeGrid, dim: usize) -> GridFunction {
        GridFunction::from_fn(grid, dim, |t, out| self.eval(t, out))
    }

    /// Real parts, for the oracle.
    pub fn real_fn(&self, dim: usize) -> Arc<dyn Fn(f64, &mut [f64]) + Send + Sync> {
        let me = self.clone();
        Arc::new(move |t, out| {
            let mut z = vec![C64::new(0.0, 0.0); dim];
            me.eval(t, &mut z);
            for (o, v) in out.iter_mut().zip(&z) {
                *o = v.re;
            }
        })
    }
}
