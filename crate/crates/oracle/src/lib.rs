//! Method-of-steps reference solutions for retarded and neutral delay equations.
//!
//! The equation is `u'(t) = g(t, u(t), u(t - tau_1), ..., u'(t - tau_1), ...)` on
//! `[0, t_end]` with a prescribed past on `t <= 0`. Each interval of length
//! `min tau` is integrated by classical RK4 at a fine step; delayed values come from
//! cubic Hermite interpolation of earlier steps, so the right-hand side never needs
//! values from the interval being computed.
//!
//! This crate is deliberately self-contained and works in plain `f64`.

use std::fmt;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq)]
pub enum OracleError {
    /// Delays must be positive and finite.
    BadDelay(f64),
    BadHorizon(f64),
    BadStep(f64),
    Dimension { expected: usize, got: usize },
    NonFinite(f64),
}

impl fmt::Display for OracleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleError::BadDelay(d) => write!(f, "delay {d} is not positive and finite"),
            OracleError::BadHorizon(t) => write!(f, "horizon {t} is not positive and finite"),
            OracleError::BadStep(h) => write!(f, "step {h} is not positive and finite"),
            OracleError::Dimension { expected, got } => write!(f, "expected dimension {expected}, got {got}"),
            OracleError::NonFinite(t) => write!(f, "solution stopped being finite at t = {t}"),
        }
    }
}

impl std::error::Error for OracleError {}

/// Values and derivatives on `t <= 0`.
#[derive(Clone)]
pub enum History {
    /// Polynomial per component, coefficients in ascending powers of `t`.
    Polynomial(Vec<Vec<f64>>),
    /// Piecewise polynomials: breakpoints `b_0 < b_1 < ...` with one polynomial per piece,
    /// constant extension outside.
    Piecewise { breaks: Vec<f64>, pieces: Vec<Vec<Vec<f64>>> },
    /// `(t, u, du)` filled by the closure.
    Function(Arc<dyn Fn(f64, &mut [f64], &mut [f64]) + Send + Sync>),
}

impl fmt::Debug for History {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            History::Polynomial(c) => f.debug_tuple("Polynomial").field(c).finish(),
            History::Piecewise { breaks, .. } => f.debug_struct("Piecewise").field("breaks", breaks).finish(),
            History::Function(_) => f.write_str("Function(..)"),
        }
    }
}

fn poly_eval(c: &[f64], t: f64) -> (f64, f64) {
    let mut v = 0.0;
    let mut d = 0.0;
    for &a in c.iter().rev() {
        d = d * t + v;
        v = v * t + a;
    }
    (v, d)
}

impl History {
    pub fn constant(values: &[f64]) -> Self {
        History::Polynomial(values.iter().map(|&v| vec![v]).collect())
    }

    pub fn zero(dim: usize) -> Self {
        History::constant(&vec![0.0; dim])
    }

    pub fn eval(&self, t: f64, u: &mut [f64], du: &mut [f64]) {
        match self {
            History::Polynomial(c) => {
                for (k, ck) in c.iter().enumerate() {
                    (u[k], du[k]) = poly_eval(ck, t);
                }
            }
            History::Piecewise { breaks, pieces } => {
                let i = breaks.partition_point(|&b| b <= t).saturating_sub(1).min(pieces.len() - 1);
                for (k, ck) in pieces[i].iter().enumerate() {
                    (u[k], du[k]) = poly_eval(ck, t);
                }
            }
            History::Function(f) => f(t, u, du),
        }
    }
}

/// Arguments handed to the right-hand side.
pub struct Args<'a> {
    pub t: f64,
    pub u: &'a [f64],
    /// `u(t - tau_i)` for each delay, in order.
    pub delayed: &'a [Vec<f64>],
    /// `u'(t - tau_i)` for each delay, in order.
    pub delayed_derivative: &'a [Vec<f64>],
}

pub type Rhs = Arc<dyn Fn(&Args<'_>, &mut [f64]) + Send + Sync>;

#[derive(Clone)]
pub struct DelaySystem {
    pub dim: usize,
    pub delays: Vec<f64>,
    pub rhs: Rhs,
    pub history: History,
}

impl DelaySystem {
    pub fn new(dim: usize, delays: Vec<f64>, history: History, rhs: Rhs) -> Result<Self, OracleError> {
        if let Some(&d) = delays.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(OracleError::BadDelay(d));
        }
        Ok(DelaySystem { dim, delays, rhs, history })
    }

    /// `u'(t) = -sum_i c_i u(t - tau_i)`, scalar.
    pub fn linear_retarded(coeffs: &[(f64, f64)], history: History) -> Result<Self, OracleError> {
        let c: Vec<f64> = coeffs.iter().map(|p| p.0).collect();
        let rhs: Rhs = Arc::new(move |a: &Args<'_>, out: &mut [f64]| {
            out[0] = -c.iter().zip(a.delayed).map(|(c, x)| c * x[0]).sum::<f64>();
        });
        DelaySystem::new(1, coeffs.iter().map(|p| p.1).collect(), history, rhs)
    }

    /// Linear neutral system `u' = A u + B u(t-h2) + C u'(t-h1) + f(t)` (matrices row-major).
    pub fn linear_neutral(
        dim: usize,
        a: Vec<f64>,
        b: Vec<f64>,
        c: Vec<f64>,
        h1: f64,
        h2: f64,
        f: Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>,
        history: History,
    ) -> Result<Self, OracleError> {
        for m in [&a, &b, &c] {
            if m.len() != dim * dim {
                return Err(OracleError::Dimension { expected: dim * dim, got: m.len() });
            }
        }
        let rhs: Rhs = Arc::new(move |x: &Args<'_>, out: &mut [f64]| {
            f(x.t, out);
            for i in 0..dim {
                for j in 0..dim {
                    out[i] += a[i * dim + j] * x.u[j]
                        + c[i * dim + j] * x.delayed_derivative[0][j]
                        + b[i * dim + j] * x.delayed[1][j];
                }
            }
        });
        DelaySystem::new(dim, vec![h1, h2], history, rhs)
    }
}

/// Fine-step solution with cubic Hermite dense output.
#[derive(Debug, Clone)]
pub struct Trajectory {
    dim: usize,
    step: f64,
    states: Vec<Vec<f64>>,
    // one-sided derivatives: they differ at breaking points of neutral equations
    left: Vec<Vec<f64>>,
    right: Vec<Vec<f64>>,
    history: History,
}

impl Trajectory {
    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn t_end(&self) -> f64 {
        (self.states.len() - 1) as f64 * self.step
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `u(t)` and `u'(t)`; the past for `t <= 0`, the right derivative at node times.
    pub fn eval(&self, t: f64, u: &mut [f64], du: &mut [f64]) {
        if t <= 0.0 {
            self.history.eval(t, u, du);
            return;
        }
        let n = self.states.len() - 1;
        let x = t / self.step;
        let i = (x.floor() as usize).min(n - 1);
        let s = (x - i as f64).clamp(0.0, 1.0);
        let h = self.step;
        let (y0, y1) = (&self.states[i], &self.states[i + 1]);
        let (d0, d1) = (&self.right[i], &self.left[i + 1]);
        let (h00, h10, h01, h11) =
            ((1.0 + 2.0 * s) * (1.0 - s).powi(2), s * (1.0 - s).powi(2), s * s * (3.0 - 2.0 * s), s * s * (s - 1.0));
        let (g00, g10, g01, g11) =
            (6.0 * s * (s - 1.0), (1.0 - s) * (1.0 - 3.0 * s), 6.0 * s * (1.0 - s), s * (3.0 * s - 2.0));
        for k in 0..self.dim {
            u[k] = h00 * y0[k] + h10 * h * d0[k] + h01 * y1[k] + h11 * h * d1[k];
            du[k] = (g00 * y0[k] + g01 * y1[k]) / h + g10 * d0[k] + g11 * d1[k];
        }
    }

    pub fn value(&self, t: f64) -> Vec<f64> {
        let mut u = vec![0.0; self.dim];
        let mut du = vec![0.0; self.dim];
        self.eval(t, &mut u, &mut du);
        u
    }

    /// Values at `times`, one row each.
    pub fn sample(&self, times: &[f64]) -> Vec<Vec<f64>> {
        times.iter().map(|&t| self.value(t)).collect()
    }
}

/// Integrates on `[0, t_end]` at a step no larger than `max_step` that divides the
/// shortest delay exactly.
pub fn method_of_steps(sys: &DelaySystem, t_end: f64, max_step: f64) -> Result<Trajectory, OracleError> {
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(OracleError::BadHorizon(t_end));
    }
    if !(max_step.is_finite() && max_step > 0.0) {
        return Err(OracleError::BadStep(max_step));
    }
    let tau_min = sys.delays.iter().copied().fold(f64::INFINITY, f64::min);
    let span = if tau_min.is_finite() { tau_min } else { t_end };
    let per_interval = (span / max_step).ceil().max(1.0);
    let step = span / per_interval;
    let steps = (t_end / step).ceil() as usize;
    let d = sys.dim;

    let mut u0 = vec![0.0; d];
    let mut du0 = vec![0.0; d];
    sys.history.eval(0.0, &mut u0, &mut du0);
    let mut traj = Trajectory {
        dim: d,
        step,
        states: vec![u0.clone(); 2],
        left: vec![du0, vec![0.0; d]],
        right: vec![vec![0.0; d]; 2],
        history: sys.history.clone(),
    };

    let nd = sys.delays.len();
    let mut delayed = vec![vec![0.0; d]; nd];
    let mut delayed_du = vec![vec![0.0; d]; nd];
    let mut f = |traj: &Trajectory, t: f64, u: &[f64], out: &mut [f64]| {
        for (i, tau) in sys.delays.iter().enumerate() {
            traj.eval(t - tau, &mut delayed[i], &mut delayed_du[i]);
        }
        (sys.rhs)(&Args { t, u, delayed: &delayed, delayed_derivative: &delayed_du }, out);
    };
    // breaking points sit on node times, so node derivatives are taken as one-sided limits
    let eps = step * 1e-9;

    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut tmp = vec![0.0; d];
    for j in 0..steps {
        let t = j as f64 * step;
        let u = traj.states[j].clone();
        f(&traj, t + eps, &u, &mut k1);
        traj.right[j].copy_from_slice(&k1);
        for k in 0..d {
            tmp[k] = u[k] + 0.5 * step * k1[k];
        }
        f(&traj, t + 0.5 * step, &tmp, &mut k2);
        for k in 0..d {
            tmp[k] = u[k] + 0.5 * step * k2[k];
        }
        f(&traj, t + 0.5 * step, &tmp, &mut k3);
        for k in 0..d {
            tmp[k] = u[k] + step * k3[k];
        }
        f(&traj, t + step - eps, &tmp, &mut k4);
        let next: Vec<f64> = (0..d).map(|k| u[k] + step / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k])).collect();
        if next.iter().any(|x| !x.is_finite()) {
            return Err(OracleError::NonFinite(t + step));
        }
        let mut dnext = vec![0.0; d];
        f(&traj, t + step - eps, &next, &mut dnext);
        if j + 1 < traj.states.len() {
            traj.states[j + 1] = next;
            traj.left[j + 1] = dnext;
        } else {
            traj.states.push(next);
            traj.left.push(dnext);
            traj.right.push(vec![0.0; d]);
        }
    }
    let u = traj.states[steps].clone();
    f(&traj, steps as f64 * step + eps, &u, &mut k1);
    traj.right[steps] = k1;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_piecewise_polynomial() {
        let sys = DelaySystem::linear_retarded(&[(1.0, 1.0)], History::constant(&[1.0])).unwrap();
        let tr = method_of_steps(&sys, 4.0, 1e-3).unwrap();
        for t in [0.25, 0.5, 1.0] {
            assert!((tr.value(t)[0] - (1.0 - t)).abs() < 1e-12);
        }
        assert!((tr.value(2.0)[0] + 0.5).abs() < 1e-10);
        let t: f64 = 1.5;
        assert!((tr.value(t)[0] - (1.5 - 2.0 * t + t * t / 2.0)).abs() < 1e-10);
    }

    #[test]
    fn zero_dynamics_continue_constantly() {
        let rhs: Rhs = Arc::new(|_: &Args<'_>, out: &mut [f64]| out.fill(0.0));
        let sys = DelaySystem::new(2, vec![1.0], History::constant(&[2.0, -3.0]), rhs).unwrap();
        let tr = method_of_steps(&sys, 3.0, 1e-2).unwrap();
        assert_eq!(tr.value(2.7), vec![2.0, -3.0]);
    }

    #[test]
    fn ode_without_delay() {
        let rhs: Rhs = Arc::new(|a: &Args<'_>, out: &mut [f64]| out[0] = -a.u[0]);
        let sys = DelaySystem::new(1, vec![], History::constant(&[1.0]), rhs).unwrap();
        let tr = method_of_steps(&sys, 5.0, 1e-3).unwrap();
        for t in [0.3, 1.7, 4.99] {
            assert!((tr.value(t)[0] - (-t as f64).exp()).abs() < 1e-10);
        }
    }

    #[test]
    fn neutral_first_interval() {
        // u' = -u + 0.5 u'(t-1) with zero past reduces to u' = -u + 1 on [0, 1]
        let f = Arc::new(|_t: f64, out: &mut [f64]| out[0] = 1.0);
        let sys = DelaySystem::linear_neutral(1, vec![-1.0], vec![0.0], vec![0.5], 1.0, 1.0, f, History::zero(1)).unwrap();
        let tr = method_of_steps(&sys, 2.0, 1e-3).unwrap();
        let t: f64 = 0.8;
        assert!((tr.value(t)[0] - (1.0 - (-t).exp())).abs() < 1e-10);
        // on [1, 2]: u' = -u + 1 + 0.5 e^{-(t-1)}
        let t: f64 = 1.6;
        let u1 = 1.0 - (-1.0f64).exp();
        let s = t - 1.0;
        let exact = 1.0 + (u1 - 1.0) * (-s).exp() + 0.5 * s * (-s).exp();
        assert!((tr.value(t)[0] - exact).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(DelaySystem::linear_retarded(&[(1.0, -1.0)], History::zero(1)).is_err());
        let sys = DelaySystem::linear_retarded(&[(1.0, 1.0)], History::zero(1)).unwrap();
        assert!(method_of_steps(&sys, -1.0, 1e-3).is_err());
        assert!(method_of_steps(&sys, 1.0, 0.0).is_err());
    }
}
