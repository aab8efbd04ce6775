use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("incompatible grids or dimensions: {0}")]
    IncompatibleGrid(String),
    #[error("invalid weight: {0}")]
    InvalidWeight(String),
    #[error("wrong causality: rho = {rho} (the causal branch needs rho > 0, the anticausal branch rho < 0)")]
    WrongCausality { rho: f64 },
    #[error("grid too small: {n} samples, need at least {need}")]
    GridTooSmall { n: usize, need: usize },
    #[error("range error: {0}")]
    Range(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("window too small: wrap-around control needs {needed} padded samples (cap {cap})")]
    WindowTooSmall { needed: usize, cap: usize },
    #[error("not invertible: need rho > {required_rho}")]
    NotInvertible { required_rho: f64 },
    #[error("not a delay: theta = {theta} > 0 would anticipate the future")]
    NotADelay { theta: f64 },
    #[error("history underrun: memory horizon {horizon} exceeds the history window {available}")]
    HistoryUnderrun { horizon: f64, available: f64 },
    #[error("unsupported composition: {0}")]
    UnsupportedComposition(String),
    #[error("non-contraction at rho = {rho}: contraction factor {factor} is not below 1")]
    NonContraction { rho: f64, factor: f64 },
    #[error(
        "no convergence after {iterations} iterations (last relative increment {increment:e})"
    )]
    NotConverged { iterations: usize, increment: f64 },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("degenerate radius: the solution leaves the ball within one step")]
    DegenerateRadius,
}
