//! Time-direction operators on grid functions: causal and anticausal
//! integration, derivative, translation, cutoff multipliers, the adjoint
//! integrator, and integration of right-hand sides carrying Dirac impulses.

use crate::error::{Error, Result};
use crate::weighted_space::{GridFunction, TimeGrid, Weight, C64};

#[derive(Debug, Clone, PartialEq)]
pub struct Impulse {
    pub location: f64,
    pub amplitude: Vec<C64>,
}

/// `regular + sum_i delta_{t_i} (x) v_i`.
///
/// `onset`, when set, declares that the regular part vanishes before that
/// time and switches on there with a jump. Integration then starts at the
/// onset node instead of ramping up over the preceding cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulsiveFunction {
    regular: GridFunction,
    impulses: Vec<Impulse>,
    onset: Option<f64>,
}

impl ImpulsiveFunction {
    pub fn new(regular: GridFunction, impulses: Vec<Impulse>) -> Result<Self> {
        let grid = *regular.grid();
        for imp in &impulses {
            if !grid.contains(imp.location) {
                return Err(Error::Domain(format!(
                    "impulse at {} outside [{}, {}]",
                    imp.location,
                    grid.t_min(),
                    grid.t_max()
                )));
            }
            if imp.amplitude.len() != regular.dim() {
                return Err(Error::Shape(format!(
                    "impulse amplitude of length {} for dimension {}",
                    imp.amplitude.len(),
                    regular.dim()
                )));
            }
            if imp
                .amplitude
                .iter()
                .any(|z| !z.re.is_finite() || !z.im.is_finite())
            {
                return Err(Error::Numeric("non-finite impulse amplitude".into()));
            }
        }
        Ok(ImpulsiveFunction {
            regular,
            impulses,
            onset: None,
        })
    }

    pub fn regular(f: GridFunction) -> Self {
        ImpulsiveFunction {
            regular: f,
            impulses: Vec::new(),
            onset: None,
        }
    }

    pub fn with_onset(mut self, t: f64) -> Self {
        self.onset = Some(t);
        self
    }

    pub fn regular_part(&self) -> &GridFunction {
        &self.regular
    }

    pub fn into_regular(self) -> GridFunction {
        self.regular
    }

    pub fn impulses(&self) -> &[Impulse] {
        &self.impulses
    }

    pub fn onset(&self) -> Option<f64> {
        self.onset
    }

    pub fn has_impulses(&self) -> bool {
        !self.impulses.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CutoffSide {
    /// Keep `t < a`.
    Below(f64),
    /// Keep `t >= a`.
    Above(f64),
}

fn require_causal(w: Weight) -> Result<()> {
    if w.rho() > 0.0 {
        Ok(())
    } else {
        Err(Error::WrongCausality { rho: w.rho() })
    }
}

/// Cumulative trapezoid starting at node `start`; zero up to and including it.
fn cumulative_trapezoid(f: &GridFunction, start: usize) -> GridFunction {
    let (n, d) = (f.grid().n(), f.dim());
    let half = 0.5 * f.grid().dt();
    let mut out = GridFunction::zeros(*f.grid(), d);
    let mut acc = vec![C64::new(0.0, 0.0); d];
    for j in (start + 1)..n {
        let (a, b) = (f.row(j - 1), f.row(j));
        for c in 0..d {
            acc[c] += (a[c] + b[c]) * half;
        }
        out.row_mut(j).copy_from_slice(&acc);
    }
    out
}

pub fn causal_integrate(f: &GridFunction, w: Weight) -> Result<GridFunction> {
    require_causal(w)?;
    Ok(cumulative_trapezoid(f, 0))
}

/// `t -> -int_t^{t_max} f`.
pub fn anticausal_integrate(f: &GridFunction, w: Weight) -> Result<GridFunction> {
    if w.rho() >= 0.0 {
        return Err(Error::WrongCausality { rho: w.rho() });
    }
    let (n, d) = (f.grid().n(), f.dim());
    let half = 0.5 * f.grid().dt();
    let mut out = GridFunction::zeros(*f.grid(), d);
    let mut acc = vec![C64::new(0.0, 0.0); d];
    for j in (0..n - 1).rev() {
        let (a, b) = (f.row(j), f.row(j + 1));
        for c in 0..d {
            acc[c] -= (a[c] + b[c]) * half;
        }
        out.row_mut(j).copy_from_slice(&acc);
    }
    Ok(out)
}

pub fn derivative(f: &GridFunction) -> Result<GridFunction> {
    let (n, d) = (f.grid().n(), f.dim());
    if n < 3 {
        return Err(Error::GridTooSmall { n, need: 3 });
    }
    let dt = f.grid().dt();
    let mut out = GridFunction::zeros(*f.grid(), d);
    for c in 0..d {
        let v = |j: usize| f.value(j, c);
        out.row_mut(0)[c] = (-3.0 * v(0) + 4.0 * v(1) - v(2)) / (2.0 * dt);
        for j in 1..n - 1 {
            out.row_mut(j)[c] = (v(j + 1) - v(j - 1)) / (2.0 * dt);
        }
        out.row_mut(n - 1)[c] = (3.0 * v(n - 1) - 4.0 * v(n - 2) + v(n - 3)) / (2.0 * dt);
    }
    Ok(out)
}

/// `g(t) = f(t + h)`; zeros are shifted in, values shifted out are dropped.
pub fn translate(f: &GridFunction, h: f64) -> GridFunction {
    if h == 0.0 {
        return f.clone();
    }
    let grid = *f.grid();
    let (n, d) = (grid.n(), f.dim());
    let mut out = GridFunction::zeros(grid, d);
    let s = h / grid.dt();
    if grid.is_aligned(h) {
        let m = s.round() as i64;
        for j in 0..n as i64 {
            let src = j + m;
            if src >= 0 && src < n as i64 {
                out.row_mut(j as usize).copy_from_slice(f.row(src as usize));
            }
        }
        return out;
    }
    let base = s.floor();
    let phi = s - base;
    let base = base as i64;
    let zero = vec![C64::new(0.0, 0.0); d];
    let pick = |i: i64| -> &[C64] {
        if i >= 0 && i < n as i64 {
            f.row(i as usize)
        } else {
            &zero
        }
    };
    for j in 0..n as i64 {
        let (a, b) = (pick(j + base), pick(j + base + 1));
        let row = out.row_mut(j as usize);
        for c in 0..d {
            row[c] = a[c] * (1.0 - phi) + b[c] * phi;
        }
    }
    out
}

pub fn cutoff(f: &GridFunction, side: CutoffSide) -> GridFunction {
    let grid = *f.grid();
    let mut out = f.clone();
    let zero = C64::new(0.0, 0.0);
    match side {
        CutoffSide::Below(a) => {
            let k = grid.index_at_or_after(a);
            for j in k..grid.n() {
                out.row_mut(j).fill(zero);
            }
        }
        CutoffSide::Above(a) => {
            let k = grid.index_at_or_after(a);
            for j in 0..k.min(grid.n()) {
                out.row_mut(j).fill(zero);
            }
        }
    }
    out
}

/// Hilbert-space adjoint of the trapezoid integrator with respect to the
/// discrete weighted inner product; approximates
/// `s -> exp(2 rho s) int_s^{t_max} exp(-2 rho t) g(t) dt`.
pub fn adjoint_causal_integrate(g: &GridFunction, w: Weight) -> Result<GridFunction> {
    require_causal(w)?;
    let grid = *g.grid();
    let (n, d) = (grid.n(), g.dim());
    let dt = grid.dt();
    let decay = (-2.0 * w.rho() * dt).exp();
    let omega = |j: usize| if j == 0 || j + 1 == n { 0.5 } else { 1.0 };
    let mut out = GridFunction::zeros(grid, d);
    // p = sum_{j > i} omega_j exp(-2 rho (t_j - t_i)) g_j
    let mut p = vec![C64::new(0.0, 0.0); d];
    for i in (0..n).rev() {
        if i + 1 < n {
            let gn = g.row(i + 1);
            let wn = omega(i + 1);
            for c in 0..d {
                p[c] = (p[c] + gn[c] * wn) * decay;
            }
        }
        let row = out.row_mut(i);
        if i == 0 {
            for c in 0..d {
                row[c] = p[c] * dt;
            }
        } else {
            let gi = g.row(i);
            let wi = omega(i);
            for c in 0..d {
                row[c] = p[c] * (dt / wi) + gi[c] * (0.5 * dt);
            }
        }
    }
    Ok(out)
}

/// Adjoint integrator applied to `delta_{t0} (x) v`:
/// `s -> exp(-2 rho (t0 - s)) v` for `s <= t0`, zero after.
pub fn adjoint_impulse_response(grid: &TimeGrid, w: Weight, imp: &Impulse) -> Result<GridFunction> {
    require_causal(w)?;
    let last = grid.index_at_or_after(imp.location).min(grid.n() - 1);
    let mut out = GridFunction::zeros(*grid, imp.amplitude.len());
    for j in 0..=last {
        let e = (-2.0 * w.rho() * (imp.location - grid.time(j))).exp();
        for (o, v) in out.row_mut(j).iter_mut().zip(&imp.amplitude) {
            *o = v * e;
        }
    }
    Ok(out)
}

/// `causal_integrate(regular) + sum_i chi_{[t_i, inf)} v_i`, steps exact.
pub fn integrate_impulsive(f: &ImpulsiveFunction, w: Weight) -> Result<GridFunction> {
    require_causal(w)?;
    let grid = *f.regular.grid();
    let start = match f.onset {
        Some(a) => grid.index_at_or_after(a).min(grid.n() - 1),
        None => 0,
    };
    let mut out = cumulative_trapezoid(&f.regular, start);
    for imp in &f.impulses {
        let k = grid.index_at_or_after(imp.location);
        for j in k..grid.n() {
            for (o, v) in out.row_mut(j).iter_mut().zip(&imp.amplitude) {
                *o += v;
            }
        }
    }
    Ok(out)
}
