//! Limiting and prelimit fluctuation variances, weak-expansion coefficients.

mod analytic;
mod mc;
mod pde;

pub use analytic::{ou_identity_gradient, ou_identity_variance};
pub use mc::{
    agree, alpha_hat, empirical_variance, extrapolate, flatness, variance_gap,
    weak_expansion_coefficient, AlphaCurve, Estimate, Extrapolation, FlatnessReport, GapReport,
    VarianceCurve,
};
pub use pde::{limiting_variance, solve_backward_pde, BackwardPdeSolution, Linearization, PdeGrid};
