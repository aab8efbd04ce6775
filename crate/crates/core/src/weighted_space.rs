//! Discretized weighted spaces `H_{rho,k}` on a uniform time grid.
//!
//! Samples are stored unweighted; the factor `exp(-2 rho t)` enters only
//! inside quadrature.

use crate::error::{Error, Result};
use num_complex::Complex64;

pub type C64 = Complex64;

/// Relative tolerance used when locating times on the grid.
pub(crate) const GRID_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t_min: f64,
    t_max: f64,
    n: usize,
}

impl TimeGrid {
    pub fn new(t_min: f64, t_max: f64, n: usize) -> Result<Self> {
        if !t_min.is_finite() || !t_max.is_finite() {
            return Err(Error::InvalidGrid("non-finite endpoint".into()));
        }
        if t_min >= t_max {
            return Err(Error::InvalidGrid(format!(
                "t_min = {t_min} must be below t_max = {t_max}"
            )));
        }
        if n < 2 {
            return Err(Error::InvalidGrid(format!(
                "n = {n}, need at least 2 samples"
            )));
        }
        let g = TimeGrid { t_min, t_max, n };
        if !(g.dt() > 0.0 && g.dt().is_finite()) {
            return Err(Error::InvalidGrid("step is not positive and finite".into()));
        }
        Ok(g)
    }

    /// Grid with step `dt`; the window length must be a whole number of steps.
    pub fn with_step(t_min: f64, t_max: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidGrid(format!("dt = {dt} must be positive")));
        }
        let steps = (t_max - t_min) / dt;
        let rounded = steps.round();
        if (steps - rounded).abs() > 1e-6 * rounded.max(1.0) {
            return Err(Error::InvalidGrid(format!(
                "window [{t_min}, {t_max}] is not a whole number of steps of {dt}"
            )));
        }
        TimeGrid::new(t_min, t_max, rounded as usize + 1)
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dt(&self) -> f64 {
        (self.t_max - self.t_min) / (self.n - 1) as f64
    }

    pub fn len(&self) -> f64 {
        self.t_max - self.t_min
    }

    pub fn time(&self, j: usize) -> f64 {
        if j + 1 == self.n {
            self.t_max
        } else {
            self.t_min + j as f64 * self.dt()
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |j| self.time(j))
    }

    /// Smallest index with `t_j >= t` (up to rounding), clamped to `0..=n`.
    pub fn index_at_or_after(&self, t: f64) -> usize {
        let x = (t - self.t_min) / self.dt();
        if x <= 0.0 {
            return 0;
        }
        let j = (x - GRID_EPS).ceil();
        if j >= self.n as f64 {
            self.n
        } else {
            j as usize
        }
    }

    /// Index of the node at `t` if `t` is a grid node.
    pub fn node_index(&self, t: f64) -> Option<usize> {
        let x = (t - self.t_min) / self.dt();
        let j = x.round();
        if (x - j).abs() <= GRID_EPS * j.abs().max(1.0) && j >= 0.0 && (j as usize) < self.n {
            Some(j as usize)
        } else {
            None
        }
    }

    /// Whether a shift by `h` moves nodes onto nodes.
    pub fn is_aligned(&self, h: f64) -> bool {
        let m = h / self.dt();
        (m - m.round()).abs() <= GRID_EPS * m.abs().max(1.0)
    }

    pub fn contains(&self, t: f64) -> bool {
        let slack = GRID_EPS * self.dt();
        t >= self.t_min - slack && t <= self.t_max + slack
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weight {
    rho: f64,
}

impl Weight {
    pub fn new(rho: f64) -> Result<Self> {
        if rho == 0.0 || !rho.is_finite() {
            return Err(Error::InvalidWeight(format!(
                "rho = {rho} must be finite and nonzero"
            )));
        }
        Ok(Weight { rho })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SobolevIndex {
    Zero,
    One,
}

/// Uniformly sampled `C^d`-valued function, zero outside its window.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: TimeGrid,
    dim: usize,
    samples: Vec<C64>,
}

impl GridFunction {
    pub fn new(grid: TimeGrid, dim: usize, samples: Vec<C64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("dimension must be at least 1".into()));
        }
        if samples.len() != grid.n() * dim {
            return Err(Error::Shape(format!(
                "{} samples for a {} x {} grid function",
                samples.len(),
                grid.n(),
                dim
            )));
        }
        if let Some(j) = samples
            .iter()
            .position(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::Numeric(format!(
                "non-finite sample at row {}",
                j / dim
            )));
        }
        Ok(GridFunction { grid, dim, samples })
    }

    pub(crate) fn from_raw(grid: TimeGrid, dim: usize, samples: Vec<C64>) -> Self {
        debug_assert_eq!(samples.len(), grid.n() * dim);
        GridFunction { grid, dim, samples }
    }

    pub fn zeros(grid: TimeGrid, dim: usize) -> Self {
        GridFunction::from_raw(
            grid,
            dim.max(1),
            vec![C64::new(0.0, 0.0); grid.n() * dim.max(1)],
        )
    }

    /// Samples `f(t, row)` at every node.
    pub fn from_fn(grid: TimeGrid, dim: usize, mut f: impl FnMut(f64, &mut [C64])) -> Self {
        let mut g = GridFunction::zeros(grid, dim);
        for j in 0..grid.n() {
            let t = grid.time(j);
            f(t, g.row_mut(j));
        }
        g
    }

    /// Scalar real-valued function.
    pub fn from_real(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Self {
        GridFunction::from_fn(grid, 1, |t, out| out[0] = C64::new(f(t), 0.0))
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> &[C64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<C64> {
        self.samples
    }

    pub fn row(&self, j: usize) -> &[C64] {
        &self.samples[j * self.dim..(j + 1) * self.dim]
    }

    pub(crate) fn row_mut(&mut self, j: usize) -> &mut [C64] {
        &mut self.samples[j * self.dim..(j + 1) * self.dim]
    }

    pub fn value(&self, j: usize, c: usize) -> C64 {
        self.samples[j * self.dim + c]
    }

    /// Real part of component `c` as a plain vector.
    pub fn real_component(&self, c: usize) -> Vec<f64> {
        (0..self.grid.n()).map(|j| self.value(j, c).re).collect()
    }

    /// Linear interpolation at `t`; zero outside the window.
    pub fn eval_into(&self, t: f64, out: &mut [C64]) {
        out.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        let x = (t - self.grid.t_min()) / self.grid.dt();
        let last = (self.grid.n() - 1) as f64;
        if x < -GRID_EPS || x > last + GRID_EPS {
            return;
        }
        let x = x.clamp(0.0, last);
        let i0 = x.floor();
        let phi = x - i0;
        let i0 = i0 as usize;
        if phi <= GRID_EPS || i0 + 1 >= self.grid.n() {
            out.copy_from_slice(self.row(i0));
            return;
        }
        let (a, b) = (self.row(i0), self.row(i0 + 1));
        for c in 0..self.dim {
            out[c] = a[c] * (1.0 - phi) + b[c] * phi;
        }
    }

    pub fn eval(&self, t: f64) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.dim];
        self.eval_into(t, &mut out);
        out
    }

    pub fn check_compatible(&self, other: &GridFunction) -> Result<()> {
        if self.grid != other.grid || self.dim != other.dim {
            return Err(Error::IncompatibleGrid(format!(
                "[{}, {}] n={} d={} vs [{}, {}] n={} d={}",
                self.grid.t_min(),
                self.grid.t_max(),
                self.grid.n(),
                self.dim,
                other.grid.t_min(),
                other.grid.t_max(),
                other.grid.n(),
                other.dim
            )));
        }
        Ok(())
    }

    pub fn zip_with(
        &self,
        other: &GridFunction,
        f: impl Fn(C64, C64) -> C64,
    ) -> Result<GridFunction> {
        self.check_compatible(other)?;
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(GridFunction::from_raw(self.grid, self.dim, samples))
    }

    pub fn add(&self, other: &GridFunction) -> Result<GridFunction> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &GridFunction) -> Result<GridFunction> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, c: C64) -> GridFunction {
        self.map(|z| z * c)
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> GridFunction {
        GridFunction::from_raw(
            self.grid,
            self.dim,
            self.samples.iter().map(|&z| f(z)).collect(),
        )
    }

    pub fn sup_norm(&self) -> f64 {
        (0..self.grid.n())
            .map(|j| row_norm(self.row(j)))
            .fold(0.0, f64::max)
    }

    pub fn max_abs_imag(&self) -> f64 {
        self.samples.iter().map(|z| z.im.abs()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.samples
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Euclidean norm of a state vector.
pub fn row_norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn trapezoid_weight(j: usize, n: usize) -> f64 {
    if j == 0 || j + 1 == n {
        0.5
    } else {
        1.0
    }
}

pub fn inner_product(f: &GridFunction, g: &GridFunction, w: Weight) -> Result<C64> {
    f.check_compatible(g)?;
    let grid = f.grid();
    let (n, d) = (grid.n(), f.dim());
    let mut acc = C64::new(0.0, 0.0);
    for j in 0..n {
        let e = (-2.0 * w.rho() * grid.time(j)).exp() * trapezoid_weight(j, n);
        let mut s = C64::new(0.0, 0.0);
        for c in 0..d {
            s += f.value(j, c).conj() * g.value(j, c);
        }
        acc += s * e;
    }
    Ok(acc * grid.dt())
}

fn norm0(f: &GridFunction, w: Weight) -> f64 {
    let grid = f.grid();
    let n = grid.n();
    let mut acc = 0.0;
    for j in 0..n {
        let r = row_norm(f.row(j));
        if r == 0.0 {
            continue;
        }
        // exp(-rho t) applied before squaring keeps large windows in range
        let v = r * (-w.rho() * grid.time(j)).exp();
        acc += v * v * trapezoid_weight(j, n);
    }
    (acc * grid.dt()).sqrt()
}

/// `|f|_{rho,0}`, or `|f'|_{rho,0}` for the index one (the derivative is
/// the operator whose inverse is the causal integral in `L^2_rho`).
pub fn norm(f: &GridFunction, w: Weight, k: SobolevIndex) -> Result<f64> {
    match k {
        SobolevIndex::Zero => Ok(norm0(f, w)),
        SobolevIndex::One => Ok(norm0(&crate::calculus_ops::derivative(f)?, w)),
    }
}

/// Linear interpolation onto `target`, zero outside the source window.
pub fn resample(f: &GridFunction, target: &TimeGrid) -> GridFunction {
    if f.grid() == target {
        return f.clone();
    }
    GridFunction::from_fn(*target, f.dim(), |t, out| f.eval_into(t, out))
}

/// Right-tail indicator `exp(-rho t_max) max|f|`, reported next to solutions.
pub fn tail_bound(f: &GridFunction, w: Weight) -> f64 {
    (-w.rho() * f.grid().t_max()).exp() * f.sup_norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box(grid: TimeGrid) -> GridFunction {
        GridFunction::from_real(grid, |t| if (0.0..=1.0).contains(&t) { 1.0 } else { 0.0 })
    }

    #[test]
    fn box_inner_product_matches_closed_form() {
        let grid = TimeGrid::with_step(-1.0, 3.0, 1e-4).unwrap();
        let f = unit_box(grid);
        let w = Weight::new(1.0).unwrap();
        let ip = inner_product(&f, &f, w).unwrap();
        let exact = (1.0 - (-2.0f64).exp()) / 2.0;
        // jumps sit on nodes, so the trapezoid rule is first order here
        assert!((ip.re - exact).abs() < 2e-4, "{}", ip.re);
        assert_eq!(ip.im, 0.0);
        let nrm = norm(&f, w, SobolevIndex::Zero).unwrap();
        assert!((nrm - exact.sqrt()).abs() < 2e-4);
    }

    #[test]
    fn disjoint_and_zero() {
        let grid = TimeGrid::with_step(-1.0, 4.0, 1e-3).unwrap();
        let w = Weight::new(1.0).unwrap();
        let f = GridFunction::from_real(grid, |t| if (0.0..1.0).contains(&t) { 1.0 } else { 0.0 });
        let g = GridFunction::from_real(grid, |t| if (2.0..3.0).contains(&t) { 1.0 } else { 0.0 });
        assert_eq!(inner_product(&f, &g, w).unwrap(), C64::new(0.0, 0.0));
        let z = GridFunction::zeros(grid, 1);
        assert_eq!(inner_product(&f, &z, w).unwrap(), C64::new(0.0, 0.0));
        assert_eq!(norm(&z, w, SobolevIndex::One).unwrap(), 0.0);
    }

    #[test]
    fn index_one_dominates() {
        let grid = TimeGrid::with_step(-2.0, 6.0, 1e-3).unwrap();
        let f = GridFunction::from_real(grid, |t| {
            (-(t - 1.3f64).powi(2) * 3.0).exp() * (2.0 * t).cos()
        });
        for rho in [0.5, 1.0, 3.0] {
            let w = Weight::new(rho).unwrap();
            let n0 = norm(&f, w, SobolevIndex::Zero).unwrap();
            let n1 = norm(&f, w, SobolevIndex::One).unwrap();
            assert!(n0 <= n1 / rho, "rho={rho}: {n0} vs {}", n1 / rho);
        }
    }

    #[test]
    fn mismatched_grids_rejected() {
        let a = GridFunction::zeros(TimeGrid::new(0.0, 1.0, 11).unwrap(), 1);
        let b = GridFunction::zeros(TimeGrid::new(0.0, 1.0, 12).unwrap(), 1);
        let w = Weight::new(1.0).unwrap();
        assert!(matches!(
            inner_product(&a, &b, w),
            Err(Error::IncompatibleGrid(_))
        ));
    }

    #[test]
    fn resample_identity_and_affine() {
        let grid = TimeGrid::with_step(0.0, 2.0, 0.1).unwrap();
        let f = GridFunction::from_real(grid, |t| 3.0 * t - 1.0);
        assert_eq!(resample(&f, &grid), f);
        let fine = TimeGrid::with_step(0.0, 2.0, 0.05).unwrap();
        let r = resample(&f, &fine);
        for (j, t) in fine.times().enumerate() {
            assert!((r.value(j, 0).re - (3.0 * t - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn resample_offset_box_preserves_mass() {
        let dt = 1e-3;
        let grid = TimeGrid::with_step(-1.0, 2.0, dt).unwrap();
        let f = unit_box(grid);
        let shifted = TimeGrid::new(-1.0 + dt / 2.0, 2.0 + dt / 2.0, grid.n()).unwrap();
        let r = resample(&f, &shifted);
        let mass: f64 = r.samples().iter().map(|z| z.re).sum::<f64>() * dt;
        assert!(r.samples().iter().all(|z| (0.0..=1.0).contains(&z.re)));
        assert!((mass - 1.0).abs() < 3.0 * dt);
    }

    #[test]
    fn grid_helpers() {
        let g = TimeGrid::with_step(-1.0, 10.0, 1e-3).unwrap();
        assert_eq!(g.n(), 11001);
        assert_eq!(g.node_index(0.0), Some(1000));
        assert_eq!(g.index_at_or_after(0.0), 1000);
        assert_eq!(g.index_at_or_after(0.0005), 1001);
        assert_eq!(g.index_at_or_after(-5.0), 0);
        assert_eq!(g.index_at_or_after(20.0), g.n());
        assert!(TimeGrid::with_step(0.0, 1.0, 0.3).is_err());
        assert!(TimeGrid::new(1.0, 1.0, 4).is_err());
        assert!(Weight::new(0.0).is_err());
    }
}
