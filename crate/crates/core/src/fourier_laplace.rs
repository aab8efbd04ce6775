//! Fourier–Laplace transform and the functional calculus `M(d^{-1})`.
//!
//! Symbols are applied on the padded DFT grid. The frequency variable is
//! the trapezoid-consistent point `z_k = (dt/2) coth((i xi_k + rho) dt/2)`
//! rather than the continuum point `1/(i xi_k + rho)`; the two agree to
//! `O(dt^2)`, but only the former makes `M(z) = z` reproduce the trapezoid
//! integrator and delays reproduce exact grid shifts. The jump of the input
//! at the window start is handled through the symbol's closed-form step
//! response, so singular kernels (fractional integrals) stay accurate there.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::weighted_space::{resample, GridFunction, TimeGrid, Weight, C64, GRID_EPS};

pub type CMatrix = DMatrix<C64>;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Largest spectral norm of a matrix.
pub fn spectral_norm(m: &CMatrix) -> f64 {
    if m.nrows() == 1 && m.ncols() == 1 {
        return m[(0, 0)].norm();
    }
    m.clone()
        .singular_values()
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Parses `"1 0; 0 -1"` (rows split by `;`, entries by whitespace). A single
/// number means that multiple of the identity.
pub fn parse_matrix(text: &str, dim: usize) -> Result<CMatrix> {
    let rows: Vec<Vec<f64>> = text
        .split(';')
        .map(|r| {
            r.split_whitespace()
                .map(|x| {
                    x.parse::<f64>()
                        .map_err(|_| Error::Domain(format!("bad number {x:?} in matrix {text:?}")))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    if rows.len() == 1 && rows[0].len() == 1 {
        return Ok(CMatrix::identity(dim, dim) * C64::new(rows[0][0], 0.0));
    }
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Shape(format!(
            "matrix {text:?} is not {dim} x {dim}"
        )));
    }
    Ok(CMatrix::from_fn(dim, dim, |i, j| C64::new(rows[i][j], 0.0)))
}

// ---------------------------------------------------------------------------
// Spectrum

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    grid: TimeGrid,
    dim: usize,
    rho: Weight,
    frequencies: Vec<f64>,
    coefficients: Vec<C64>,
}

impl Spectrum {
    /// Frequencies ordered `k = -N/2 .. N/2-1`; coefficients `N x dim`, row-major.
    pub fn from_parts(
        grid: TimeGrid,
        dim: usize,
        rho: Weight,
        frequencies: Vec<f64>,
        coefficients: Vec<C64>,
    ) -> Spectrum {
        Spectrum {
            grid,
            dim,
            rho,
            frequencies,
            coefficients,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn origin(&self) -> f64 {
        self.grid.t_min()
    }

    pub fn rho(&self) -> Weight {
        self.rho
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn coefficient(&self, k: usize) -> &[C64] {
        &self.coefficients[k * self.dim..(k + 1) * self.dim]
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    /// `(sum_k |F_k|^2 dxi)^{1/2}`.
    pub fn l2_norm(&self) -> f64 {
        let dxi = 2.0 * PI / (self.len() as f64 * self.grid.dt());
        (self.coefficients.iter().map(|z| z.norm_sqr()).sum::<f64>() * dxi).sqrt()
    }
}

fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

fn frequency(k_signed: i64, n_fft: usize, dt: f64) -> f64 {
    2.0 * PI * k_signed as f64 / (n_fft as f64 * dt)
}

fn signed_index(k: usize, n_fft: usize) -> i64 {
    if k < n_fft / 2 {
        k as i64
    } else {
        k as i64 - n_fft as i64
    }
}

/// Forward transform: weight by `exp(-rho t)`, pad to a power of two `>= 2n`,
/// DFT scaled by `dt / sqrt(2 pi)` with phase measured from `t_min`.
pub fn fourier_laplace_forward(f: &GridFunction, w: Weight) -> Result<Spectrum> {
    let grid = *f.grid();
    let (n, d) = (grid.n(), f.dim());
    let n_fft = next_pow2(2 * n);
    let scale = grid.dt() / (2.0 * PI).sqrt();
    let fft = FftPlanner::new().plan_fft_forward(n_fft);
    let mut natural = vec![ZERO; n_fft * d];
    let mut buf = vec![ZERO; n_fft];
    for c in 0..d {
        buf.fill(ZERO);
        for (j, b) in buf.iter_mut().take(n).enumerate() {
            let e = (-w.rho() * grid.time(j)).exp();
            let v = f.value(j, c) * e;
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(Error::Range(format!(
                    "exp(-rho t) f(t) leaves floating range at t = {}",
                    grid.time(j)
                )));
            }
            *b = v;
        }
        fft.process(&mut buf);
        for k in 0..n_fft {
            natural[k * d + c] = buf[k] * scale;
        }
    }
    // reorder to k = -N/2 .. N/2 - 1
    let mut frequencies = Vec::with_capacity(n_fft);
    let mut coefficients = Vec::with_capacity(n_fft * d);
    for pos in 0..n_fft {
        let k = (pos + n_fft / 2) % n_fft;
        frequencies.push(frequency(signed_index(k, n_fft), n_fft, grid.dt()));
        coefficients.extend_from_slice(&natural[k * d..(k + 1) * d]);
    }
    Ok(Spectrum {
        grid,
        dim: d,
        rho: w,
        frequencies,
        coefficients,
    })
}

/// Exact inverse of [`fourier_laplace_forward`].
pub fn fourier_laplace_inverse(s: &Spectrum) -> Result<GridFunction> {
    let grid = s.grid;
    let (n, d) = (grid.n(), s.dim);
    let n_fft = s.frequencies.len();
    if d == 0 || n_fft < 2 * n || !n_fft.is_power_of_two() || s.coefficients.len() != n_fft * d {
        return Err(Error::Shape(format!(
            "spectrum with {} frequencies and {} coefficients does not fit a {} x {} grid function",
            n_fft,
            s.coefficients.len(),
            n,
            d
        )));
    }
    let expected = frequency(-(n_fft as i64) / 2, n_fft, grid.dt());
    if (s.frequencies[0] - expected).abs() > 1e-9 * expected.abs() {
        return Err(Error::Shape(
            "frequency axis does not match the source grid".into(),
        ));
    }
    let ifft = FftPlanner::new().plan_fft_inverse(n_fft);
    let scale = (2.0 * PI).sqrt() / grid.dt() / n_fft as f64;
    let mut out = GridFunction::zeros(grid, d);
    let mut buf = vec![ZERO; n_fft];
    for c in 0..d {
        for (pos, chunk) in s.coefficients.chunks(d).enumerate() {
            let k = (pos + n_fft / 2) % n_fft;
            buf[k] = chunk[c];
        }
        ifft.process(&mut buf);
        for j in 0..n {
            let e = (w_rho(s) * grid.time(j)).exp();
            out.row_mut(j)[c] = buf[j] * (scale * e);
        }
    }
    if !out.is_finite() {
        return Err(Error::Range("inverse transform left floating range".into()));
    }
    Ok(out)
}

fn w_rho(s: &Spectrum) -> f64 {
    s.rho.rho()
}

// ---------------------------------------------------------------------------
// Symbols

/// One DFT bin of the calculus: angular frequency, weight and step.
#[derive(Debug, Clone, Copy)]
pub struct SpectralPoint {
    pub xi: f64,
    pub rho: f64,
    pub dt: f64,
}

impl SpectralPoint {
    /// `1/(i xi + rho)`.
    pub fn continuum_z(&self) -> C64 {
        C64::new(self.rho, self.xi).inv()
    }

    /// One-step shift factor `exp(-(rho + i xi) dt)`.
    pub fn q(&self) -> C64 {
        (-C64::new(self.rho, self.xi) * self.dt).exp()
    }

    /// Trapezoid-consistent frequency variable `(dt/2)(1+q)/(1-q)`.
    pub fn z(&self) -> C64 {
        let q = self.q();
        (1.0 + q) / (1.0 - q) * (0.5 * self.dt)
    }

    /// Discrete delay by `h >= 0`: exact shift on the grid, linear
    /// interpolation between neighbouring shifts otherwise.
    pub fn shift(&self, h: f64) -> C64 {
        let s = h / self.dt;
        let m = (s + GRID_EPS).floor();
        let mut phi = s - m;
        if phi < GRID_EPS * s.max(1.0) {
            phi = 0.0;
        }
        let e = |k: f64| (-C64::new(self.rho, self.xi) * (k * self.dt)).exp();
        if phi == 0.0 {
            e(m)
        } else {
            e(m) * (1.0 - phi) + e(m + 1.0) * phi
        }
    }
}

/// Bounded analytic `z -> M(z)` on `B(r, r)`.
pub trait Symbol: Send + Sync + fmt::Debug {
    fn label(&self) -> String;
    fn dim(&self) -> usize;
    /// Analyticity radius; `f64::INFINITY` when any `rho > 0` is admissible.
    fn radius(&self) -> f64;
    fn norm_bound(&self) -> f64;
    /// Continuum value `M(z)`.
    fn evaluate(&self, z: C64) -> CMatrix;
    /// Value used by the discrete calculus at one DFT bin.
    fn evaluate_discrete(&self, p: &SpectralPoint) -> CMatrix {
        self.evaluate(p.z())
    }
    /// Response of `M(d^{-1})` to the unit step switched on at time 0,
    /// evaluated at `t >= 0`.
    fn step_response(&self, t: f64, dt: f64) -> CMatrix;
}

fn at_or_after(t: f64, h: f64, dt: f64) -> bool {
    t >= h - GRID_EPS * dt
}

#[derive(Debug, Clone)]
pub struct ConstantSymbol {
    pub matrix: CMatrix,
}

impl Symbol for ConstantSymbol {
    fn label(&self) -> String {
        "constant".into()
    }
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn radius(&self) -> f64 {
        f64::INFINITY
    }
    fn norm_bound(&self) -> f64 {
        spectral_norm(&self.matrix)
    }
    fn evaluate(&self, _z: C64) -> CMatrix {
        self.matrix.clone()
    }
    fn step_response(&self, _t: f64, _dt: f64) -> CMatrix {
        self.matrix.clone()
    }
}

/// `exp(-h/z)`: delay by `h`.
#[derive(Debug, Clone)]
pub struct DelaySymbol {
    pub h: f64,
    pub dim: usize,
}

impl Symbol for DelaySymbol {
    fn label(&self) -> String {
        format!("delay(h={})", self.h)
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn radius(&self) -> f64 {
        f64::INFINITY
    }
    fn norm_bound(&self) -> f64 {
        1.0
    }
    fn evaluate(&self, z: C64) -> CMatrix {
        CMatrix::identity(self.dim, self.dim) * (-self.h / z).exp()
    }
    fn evaluate_discrete(&self, p: &SpectralPoint) -> CMatrix {
        CMatrix::identity(self.dim, self.dim) * p.shift(self.h)
    }
    fn step_response(&self, t: f64, dt: f64) -> CMatrix {
        let on = if at_or_after(t, self.h, dt) { 1.0 } else { 0.0 };
        CMatrix::identity(self.dim, self.dim) * C64::new(on, 0.0)
    }
}

/// `z^alpha`, principal branch: the Riemann–Liouville integral of order alpha.
#[derive(Debug, Clone)]
pub struct FractionalSymbol {
    pub alpha: f64,
    pub dim: usize,
    pub radius: f64,
}

impl Symbol for FractionalSymbol {
    fn label(&self) -> String {
        format!("fractional(alpha={})", self.alpha)
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn radius(&self) -> f64 {
        self.radius
    }
    fn norm_bound(&self) -> f64 {
        // sup of |z|^alpha over B(r, r) is (2r)^alpha
        1.1 * (2.0 * self.radius).powf(self.alpha)
    }
    fn evaluate(&self, z: C64) -> CMatrix {
        CMatrix::identity(self.dim, self.dim) * z.powf(self.alpha)
    }
    fn step_response(&self, t: f64, _dt: f64) -> CMatrix {
        let v = if self.alpha == 0.0 {
            1.0
        } else if t <= 0.0 {
            0.0
        } else {
            t.powf(self.alpha) / statrs::function::gamma::gamma(1.0 + self.alpha)
        };
        CMatrix::identity(self.dim, self.dim) * C64::new(v, 0.0)
    }
}

/// Convolution with a causal scalar kernel sampled on a grid starting at 0,
/// acting componentwise.
#[derive(Debug, Clone)]
pub struct ConvolutionSymbol {
    kernel: GridFunction,
    dim: usize,
    l1: f64,
}

impl ConvolutionSymbol {
    pub fn new(kernel: GridFunction, dim: usize) -> Result<Self> {
        if kernel.dim() != 1 {
            return Err(Error::Shape("convolution kernels are scalar".into()));
        }
        if kernel.grid().t_min() < -GRID_EPS * kernel.grid().dt() {
            return Err(Error::Domain("kernel support must start at t >= 0".into()));
        }
        let g = kernel.grid();
        let n = g.n();
        let l1 = (0..n)
            .map(|j| kernel.value(j, 0).norm() * if j == 0 || j + 1 == n { 0.5 } else { 1.0 })
            .sum::<f64>()
            * g.dt();
        Ok(ConvolutionSymbol { kernel, dim, l1 })
    }

    /// Kernel samples on `[0, T_k]` with step `dt`, trapezoid-weighted.
    fn weights(&self, dt: f64) -> Vec<C64> {
        let kg = self.kernel.grid();
        let steps = (kg.t_max() / dt + GRID_EPS).floor().max(0.0) as usize;
        let target =
            TimeGrid::new(0.0, steps.max(1) as f64 * dt, steps.max(1) + 1).expect("kernel grid");
        let k = resample(&self.kernel, &target);
        let n = target.n();
        (0..n)
            .map(|m| k.value(m, 0) * dt * if m == 0 || m + 1 == n { 0.5 } else { 1.0 })
            .collect()
    }
}

impl Symbol for ConvolutionSymbol {
    fn label(&self) -> String {
        "convolution".into()
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn radius(&self) -> f64 {
        f64::INFINITY
    }
    fn norm_bound(&self) -> f64 {
        // |k^(z)| <= |k|_{L1} on the right half-plane
        1.1 * self.l1
    }
    fn evaluate(&self, z: C64) -> CMatrix {
        let dt = self.kernel.grid().dt();
        let s = z.inv();
        let mut acc = ZERO;
        for (m, c) in self.weights(dt).iter().enumerate() {
            acc += c * (-s * (m as f64 * dt)).exp();
        }
        CMatrix::identity(self.dim, self.dim) * acc
    }
    fn evaluate_discrete(&self, p: &SpectralPoint) -> CMatrix {
        let q = p.q();
        let w = self.weights(p.dt);
        let mut acc = ZERO;
        for c in w.iter().rev() {
            acc = acc * q + c;
        }
        CMatrix::identity(self.dim, self.dim) * acc
    }
    fn step_response(&self, t: f64, _dt: f64) -> CMatrix {
        let kg = self.kernel.grid();
        let mut acc = ZERO;
        let upper = t.min(kg.t_max());
        let half = 0.5 * kg.dt();
        for j in 1..kg.n() {
            let (a, b) = (kg.time(j - 1), kg.time(j));
            if a >= upper {
                break;
            }
            if b <= upper + GRID_EPS * kg.dt() {
                acc += (self.kernel.value(j - 1, 0) + self.kernel.value(j, 0)) * half;
            } else {
                let frac = (upper - a) / kg.dt();
                let mid =
                    self.kernel.value(j - 1, 0) * (1.0 - frac) + self.kernel.value(j, 0) * frac;
                acc += (self.kernel.value(j - 1, 0) + mid) * (0.5 * (upper - a));
            }
        }
        CMatrix::identity(self.dim, self.dim) * acc
    }
}

/// `A + B exp(-h/z)`.
#[derive(Debug, Clone)]
pub struct MatrixAffineSymbol {
    pub a: CMatrix,
    pub b: CMatrix,
    pub h: f64,
}

impl Symbol for MatrixAffineSymbol {
    fn label(&self) -> String {
        format!("matrix_affine(h={})", self.h)
    }
    fn dim(&self) -> usize {
        self.a.nrows()
    }
    fn radius(&self) -> f64 {
        f64::INFINITY
    }
    fn norm_bound(&self) -> f64 {
        spectral_norm(&self.a) + spectral_norm(&self.b)
    }
    fn evaluate(&self, z: C64) -> CMatrix {
        &self.a + &self.b * (-self.h / z).exp()
    }
    fn evaluate_discrete(&self, p: &SpectralPoint) -> CMatrix {
        &self.a + &self.b * p.shift(self.h)
    }
    fn step_response(&self, t: f64, dt: f64) -> CMatrix {
        if at_or_after(t, self.h, dt) {
            &self.a + &self.b
        } else {
            self.a.clone()
        }
    }
}

/// `(I - C exp(-h/z))^{-1}`, solved per frequency.
#[derive(Debug, Clone)]
pub struct NeutralResolventSymbol {
    c: CMatrix,
    h: f64,
    rho_min: f64,
    bound: f64,
}

impl NeutralResolventSymbol {
    pub fn new(c: CMatrix, h: f64, rho_min: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::Domain(format!(
                "neutral delay h = {h} must be positive"
            )));
        }
        if !(rho_min > 0.0) {
            return Err(Error::Domain(format!(
                "rho_min = {rho_min} must be positive"
            )));
        }
        let nc = spectral_norm(&c);
        let contraction = nc * (-h * rho_min).exp();
        if contraction >= 1.0 {
            return Err(Error::NotInvertible {
                required_rho: nc.ln() / h,
            });
        }
        Ok(NeutralResolventSymbol {
            c,
            h,
            rho_min,
            bound: 1.0 / (1.0 - contraction),
        })
    }

    /// Smallest admissible weight `ln |C| / h`.
    pub fn minimal_rho(&self) -> f64 {
        spectral_norm(&self.c).ln() / self.h
    }

    fn resolve(&self, shift: C64) -> CMatrix {
        let d = self.c.nrows();
        let m = CMatrix::identity(d, d) - &self.c * shift;
        m.lu()
            .try_inverse()
            .unwrap_or_else(|| CMatrix::from_element(d, d, C64::new(f64::NAN, 0.0)))
    }
}

impl Symbol for NeutralResolventSymbol {
    fn label(&self) -> String {
        format!("neutral_resolvent(h={})", self.h)
    }
    fn dim(&self) -> usize {
        self.c.nrows()
    }
    fn radius(&self) -> f64 {
        (1.0 + 1e-9) / (2.0 * self.rho_min)
    }
    fn norm_bound(&self) -> f64 {
        self.bound
    }
    fn evaluate(&self, z: C64) -> CMatrix {
        self.resolve((-self.h / z).exp())
    }
    fn evaluate_discrete(&self, p: &SpectralPoint) -> CMatrix {
        self.resolve(p.shift(self.h))
    }
    fn step_response(&self, t: f64, dt: f64) -> CMatrix {
        // sum_k C^k chi_{t >= k h}
        let d = self.c.nrows();
        let mut acc = CMatrix::identity(d, d);
        let mut power = CMatrix::identity(d, d);
        let mut k = 1.0;
        while at_or_after(t, k * self.h, dt) {
            power = &power * &self.c;
            acc += &power;
            k += 1.0;
        }
        acc
    }
}

#[derive(Debug, Clone)]
pub enum SymbolKind {
    Identity,
    Integrate,
    Delay { h: f64 },
    Fractional { alpha: f64 },
    Convolution { kernel: GridFunction },
    MatrixAffine { a: CMatrix, b: CMatrix, h: f64 },
    NeutralResolvent { c: CMatrix, h: f64, rho_min: f64 },
}

/// State dimension and the smallest weight the symbol will be used at.
#[derive(Debug, Clone, Copy)]
pub struct SymbolContext {
    pub dim: usize,
    pub rho_min: f64,
}

impl SymbolContext {
    fn radius(&self) -> f64 {
        (1.0 + 1e-9) / (2.0 * self.rho_min)
    }
}

pub fn make_symbol(kind: SymbolKind, ctx: &SymbolContext) -> Result<Arc<dyn Symbol>> {
    if ctx.dim == 0 {
        return Err(Error::Shape("symbol dimension must be at least 1".into()));
    }
    let square = |m: &CMatrix, name: &str| {
        if m.nrows() != ctx.dim || m.ncols() != ctx.dim {
            Err(Error::Shape(format!(
                "{name} is {}x{}, expected {}x{}",
                m.nrows(),
                m.ncols(),
                ctx.dim,
                ctx.dim
            )))
        } else {
            Ok(())
        }
    };
    Ok(match kind {
        SymbolKind::Identity => Arc::new(ConstantSymbol {
            matrix: CMatrix::identity(ctx.dim, ctx.dim),
        }),
        SymbolKind::Integrate => make_symbol(SymbolKind::Fractional { alpha: 1.0 }, ctx)?,
        SymbolKind::Delay { h } => {
            if !(h >= 0.0 && h.is_finite()) {
                return Err(Error::Domain(format!("delay h = {h} must be nonnegative")));
            }
            Arc::new(DelaySymbol { h, dim: ctx.dim })
        }
        SymbolKind::Fractional { alpha } => {
            if !(0.0..=1.0).contains(&alpha) {
                return Err(Error::Domain(format!(
                    "fractional order {alpha} outside [0, 1]"
                )));
            }
            if !(ctx.rho_min > 0.0) {
                return Err(Error::Domain("fractional symbols need rho_min > 0".into()));
            }
            Arc::new(FractionalSymbol {
                alpha,
                dim: ctx.dim,
                radius: ctx.radius(),
            })
        }
        SymbolKind::Convolution { kernel } => Arc::new(ConvolutionSymbol::new(kernel, ctx.dim)?),
        SymbolKind::MatrixAffine { a, b, h } => {
            square(&a, "A")?;
            square(&b, "B")?;
            if !(h >= 0.0) {
                return Err(Error::Domain(format!("delay h = {h} must be nonnegative")));
            }
            Arc::new(MatrixAffineSymbol { a, b, h })
        }
        SymbolKind::NeutralResolvent { c, h, rho_min } => {
            square(&c, "C")?;
            Arc::new(NeutralResolventSymbol::new(c, h, rho_min)?)
        }
    })
}

// ---------------------------------------------------------------------------
// Application

#[derive(Debug, Clone, Copy)]
pub struct CalculusOptions {
    /// Required decay `exp(-rho * padding)` of wrapped-around contributions.
    pub tail_tol: f64,
    /// Cap on the padded transform length.
    pub max_len: usize,
    /// Cap on `rho * (t_max - t_min)`; beyond it, undoing the weight
    /// amplifies rounding by more than `exp(max_dynamic)`.
    pub max_dynamic: f64,
}

impl Default for CalculusOptions {
    fn default() -> Self {
        CalculusOptions {
            tail_tol: 1e-12,
            max_len: 1 << 24,
            max_dynamic: 25.0,
        }
    }
}

/// Transform length for a grid of `n` samples: at least `2n`, and long
/// enough that wrapped contributions decay below `tail_tol`.
pub fn padded_len(n: usize, rho: f64, dt: f64, opts: &CalculusOptions) -> Result<usize> {
    let extra = ((1.0 / opts.tail_tol).ln() / (rho * dt)).ceil();
    let need = if extra.is_finite() && extra < opts.max_len as f64 {
        (2 * n).max(n + extra as usize)
    } else {
        usize::MAX
    };
    if need > opts.max_len {
        return Err(Error::WindowTooSmall {
            needed: need,
            cap: opts.max_len,
        });
    }
    Ok(next_pow2(need))
}

pub fn apply_symbol(f: &GridFunction, s: &dyn Symbol, w: Weight) -> Result<GridFunction> {
    apply_symbol_with(f, s, w, &CalculusOptions::default())
}

pub fn apply_symbol_with(
    f: &GridFunction,
    s: &dyn Symbol,
    w: Weight,
    opts: &CalculusOptions,
) -> Result<GridFunction> {
    let grid = *f.grid();
    let (n, d) = (grid.n(), f.dim());
    let rho = w.rho();
    if s.dim() != d {
        return Err(Error::Shape(format!(
            "symbol of dimension {} applied to dimension {}",
            s.dim(),
            d
        )));
    }
    if !(rho > 0.0) || rho <= 0.5 / s.radius() {
        return Err(Error::Domain(format!(
            "rho = {rho} must exceed 1/(2r) = {} for {}",
            0.5 / s.radius(),
            s.label()
        )));
    }
    if rho * grid.len() > opts.max_dynamic {
        return Err(Error::Range(format!(
            "rho * window = {} exceeds {}; shorten the window or lower rho",
            rho * grid.len(),
            opts.max_dynamic
        )));
    }
    let dt = grid.dt();
    let n_fft = padded_len(n, rho, dt, opts)?;

    // split off the jump at t_min: f = f_0 chi + r with r(t_min) = 0
    let f0: Vec<C64> = f.row(0).to_vec();
    let jump = f0.iter().any(|z| *z != ZERO);

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n_fft);
    let ifft = planner.plan_fft_inverse(n_fft);
    let weights: Vec<f64> = (0..n)
        .map(|j| (-rho * (grid.time(j) - grid.t_min())).exp())
        .collect();

    let mut spectra = vec![vec![ZERO; n_fft]; d];
    for (c, buf) in spectra.iter_mut().enumerate() {
        for j in 0..n {
            buf[j] = (f.value(j, c) - f0[c]) * weights[j];
        }
        fft.process(buf);
    }
    let mut out_spec = vec![vec![ZERO; n_fft]; d];
    let mut g = vec![ZERO; d];
    for k in 0..n_fft {
        let p = SpectralPoint {
            xi: frequency(signed_index(k, n_fft), n_fft, dt),
            rho,
            dt,
        };
        let m = s.evaluate_discrete(&p);
        for (c, gc) in g.iter_mut().enumerate() {
            *gc = spectra[c][k];
        }
        for r in 0..d {
            let mut acc = ZERO;
            for (c, gc) in g.iter().enumerate() {
                acc += m[(r, c)] * gc;
            }
            out_spec[r][k] = acc;
        }
    }
    let mut out = GridFunction::zeros(grid, d);
    for (c, buf) in out_spec.iter_mut().enumerate() {
        ifft.process(buf);
        for j in 0..n {
            out.row_mut(j)[c] = buf[j] / (weights[j] * n_fft as f64);
        }
    }
    if jump {
        for j in 0..n {
            let step = s.step_response(grid.time(j) - grid.t_min(), dt);
            let row = out.row_mut(j);
            for r in 0..d {
                for c in 0..d {
                    row[r] += step[(r, c)] * f0[c];
                }
            }
        }
    }
    if !out.is_finite() {
        return Err(Error::Numeric(format!(
            "{} produced non-finite values",
            s.label()
        )));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Registry

/// Arguments of a symbol spec such as `delay:h=1`.
#[derive(Debug, Clone, Default)]
pub struct SymbolArgs {
    values: BTreeMap<String, String>,
}

impl SymbolArgs {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        let v = self
            .get(key)
            .ok_or_else(|| Error::Domain(format!("missing symbol argument {key:?}")))?;
        v.parse()
            .map_err(|_| Error::Domain(format!("symbol argument {key} = {v:?} is not a number")))
    }

    pub fn matrix(&self, key: &str, dim: usize) -> Result<CMatrix> {
        let v = self
            .get(key)
            .ok_or_else(|| Error::Domain(format!("missing symbol argument {key:?}")))?;
        parse_matrix(v, dim)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    /// Rejects keys outside `allowed`.
    pub fn only(&self, allowed: &[&str]) -> Result<()> {
        match self.keys().find(|k| !allowed.contains(k)) {
            Some(k) => Err(Error::Domain(format!("unknown symbol argument {k:?}"))),
            None => Ok(()),
        }
    }
}

/// Splits `name:k=v,k=v` into the name and its arguments.
pub fn parse_symbol_spec(spec: &str) -> Result<(String, SymbolArgs)> {
    let (name, rest) = match spec.split_once(':') {
        Some((a, b)) => (a.trim(), b.trim()),
        None => (spec.trim(), ""),
    };
    if name.is_empty() {
        return Err(Error::Domain(format!("empty symbol spec {spec:?}")));
    }
    let mut args = SymbolArgs::default();
    for part in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::Domain(format!("symbol argument {part:?} is not key=value")))?;
        args.values
            .insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok((name.to_string(), args))
}

pub trait SymbolFactory: Send + Sync {
    fn name(&self) -> &str;
    fn build(&self, args: &SymbolArgs, ctx: &SymbolContext) -> Result<Arc<dyn Symbol>>;
}

struct BuiltinFactory {
    name: &'static str,
    keys: &'static [&'static str],
    build: fn(&SymbolArgs, &SymbolContext) -> Result<SymbolKind>,
}

impl SymbolFactory for BuiltinFactory {
    fn name(&self) -> &str {
        self.name
    }

    fn build(&self, args: &SymbolArgs, ctx: &SymbolContext) -> Result<Arc<dyn Symbol>> {
        args.only(self.keys)?;
        make_symbol((self.build)(args, ctx)?, ctx)
    }
}

/// Convolution whose kernel is fetched by name (for instance from a file).
pub struct ConvolutionFactory {
    loader: Box<dyn Fn(&str) -> Result<GridFunction> + Send + Sync>,
}

impl ConvolutionFactory {
    pub fn new(loader: impl Fn(&str) -> Result<GridFunction> + Send + Sync + 'static) -> Self {
        ConvolutionFactory {
            loader: Box::new(loader),
        }
    }
}

impl SymbolFactory for ConvolutionFactory {
    fn name(&self) -> &str {
        "convolution"
    }

    fn build(&self, args: &SymbolArgs, ctx: &SymbolContext) -> Result<Arc<dyn Symbol>> {
        args.only(&["kernel"])?;
        let source = args
            .get("kernel")
            .ok_or_else(|| Error::Domain("convolution needs kernel=...".into()))?;
        make_symbol(
            SymbolKind::Convolution {
                kernel: (self.loader)(source)?,
            },
            ctx,
        )
    }
}

/// Symbol kinds selectable by name.
#[derive(Default, Clone)]
pub struct SymbolRegistry {
    factories: BTreeMap<String, Arc<dyn SymbolFactory>>,
}

impl SymbolRegistry {
    pub fn new() -> Self {
        SymbolRegistry::default()
    }

    pub fn with_builtin() -> Self {
        let mut r = SymbolRegistry::new();
        let builtin: [BuiltinFactory; 6] = [
            BuiltinFactory {
                name: "identity",
                keys: &[],
                build: |_, _| Ok(SymbolKind::Identity),
            },
            BuiltinFactory {
                name: "integrate",
                keys: &[],
                build: |_, _| Ok(SymbolKind::Integrate),
            },
            BuiltinFactory {
                name: "delay",
                keys: &["h"],
                build: |a, _| Ok(SymbolKind::Delay { h: a.f64("h")? }),
            },
            BuiltinFactory {
                name: "fractional",
                keys: &["alpha"],
                build: |a, _| {
                    Ok(SymbolKind::Fractional {
                        alpha: a.f64("alpha")?,
                    })
                },
            },
            BuiltinFactory {
                name: "matrix_affine",
                keys: &["a", "b", "h"],
                build: |a, ctx| {
                    Ok(SymbolKind::MatrixAffine {
                        a: a.matrix("a", ctx.dim)?,
                        b: a.matrix("b", ctx.dim)?,
                        h: a.f64("h")?,
                    })
                },
            },
            BuiltinFactory {
                name: "neutral_resolvent",
                keys: &["c", "h", "rho_min"],
                build: |a, ctx| {
                    let rho_min = if a.get("rho_min").is_some() {
                        a.f64("rho_min")?
                    } else {
                        ctx.rho_min
                    };
                    Ok(SymbolKind::NeutralResolvent {
                        c: a.matrix("c", ctx.dim)?,
                        h: a.f64("h")?,
                        rho_min,
                    })
                },
            },
        ];
        for f in builtin {
            r.register(Arc::new(f));
        }
        r
    }

    /// Adds or replaces the factory registered under its name.
    pub fn register(&mut self, factory: Arc<dyn SymbolFactory>) {
        self.factories.insert(factory.name().to_string(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn build(&self, spec: &str, ctx: &SymbolContext) -> Result<Arc<dyn Symbol>> {
        let (name, args) = parse_symbol_spec(spec)?;
        let factory = self.factories.get(&name).ok_or_else(|| {
            Error::Domain(format!(
                "unknown symbol {name:?}; known: {}",
                self.names().join(", ")
            ))
        })?;
        factory.build(&args, ctx)
    }
}
