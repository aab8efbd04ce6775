//! Evolutionary equations with memory in exponentially weighted spaces.
//!
//! Time derivatives are inverted in `L^2_rho`, the space of functions with
//! `exp(-rho t) f` square integrable. For `rho > 0` the inverse is the causal
//! integral; analytic functions of it (delays, fractional integrals,
//! convolutions, neutral resolvents) are applied through the Fourier–Laplace
//! transform. Fixed-point problems `u = F(u)` are solved by Picard iteration
//! with `rho` chosen large enough for `F` to contract.

pub mod calculus_ops;
pub mod diagnostics;
pub mod error;
pub mod fourier_laplace;
pub mod problems;
pub mod solver;
pub mod weighted_space;

pub use calculus_ops::{
    adjoint_causal_integrate, adjoint_impulse_response, anticausal_integrate, causal_integrate,
    cutoff, derivative, integrate_impulsive, translate, CutoffSide, Impulse, ImpulsiveFunction,
};
pub use diagnostics::{
    check_amnesic, check_autonomous, check_causal, check_rho_independence, classify_memory,
    classify_memory_at_two, trace_check, Agreement, MemoryClass, ProbeSet, Verdict, Witness,
};
pub use error::{Error, Result};
pub use fourier_laplace::{
    apply_symbol, fourier_laplace_forward, fourier_laplace_inverse, make_symbol, CMatrix, Spectrum,
    Symbol, SymbolContext, SymbolKind, SymbolRegistry,
};
pub use problems::{
    add_source, discrete_delay_rhs, history_problem, integro_rhs, ivp_problem, local_rhs,
    local_solve, nemitzki_rhs, neutral_general_rhs, neutral_linear_rhs, neutral_linear_solve,
    whole_past_lift, wrapped_rhs, HistoryFunction, PastMap, PastWindow,
};
pub use solver::{picard_solve, Regime, RhoChoice, RhsOperator, SolveReport, SolverConfig};
pub use weighted_space::{
    inner_product, norm, resample, GridFunction, SobolevIndex, TimeGrid, Weight, C64,
};
