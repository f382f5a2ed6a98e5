//! Discrete Malliavin calculus along stored particle paths.
//!
//! Derivatives are taken with respect to the stored Brownian increments
//! `ΔB_k^{j,α}`; a cell `[t_k, t_{k+1}) × {j} × {α}` of the carrier space
//! carries the derivative in `ΔB_k^{j,α}`. Tangents are therefore exact
//! derivatives of the Euler map (checked against increment bumps), and the
//! functional `Δ` is a quadrature over these cells.

mod assemble;
mod bump;
mod decay;
mod delta;
mod first;
mod second;
mod step;

pub use assemble::{
    adjoint_derivatives, assemble_df_d2f, cell_grid, AdjointContext, FunctionalDerivatives,
};
pub use bump::{bump_derivative, double_bump};
pub use decay::{
    envelope_check, fit_decay, DecayFit, DecayTarget, EnvelopeCheck, MomentAccumulator, MomentCurve,
};
pub use delta::{
    compute_delta, vidotto_bound, Coverage, DeltaAccumulator, DeltaOptions, PoincareFunctional,
};
pub use first::{
    all_sources, propagate_first, strided_grid, FirstOrderFlow, Source, TangentField1,
    TangentScheme,
};
pub use second::{propagate_second, SecondOrderFlow, SourcePair, TangentField2};
