use super::Linearization;
use crate::error::{Error, Result};
use crate::model::MeanFieldOu;
use crate::simulate::InitialLaw;

/// Closed-form `σ_t²(id)` for the scalar mean-field OU model: the affine
/// ansatz `ψ_s(x) = e^{−λ(t−s)}x + g(s)` with `λ = θ − γ` (linear-functional
/// kernel) or `λ = θ` (Lions kernel).
pub fn ou_identity_variance(
    ou: &MeanFieldOu,
    init: &InitialLaw,
    t: f64,
    mode: Linearization,
) -> Result<f64> {
    if ou.dim() != 1 {
        return Err(Error::unsupported(
            "mean_field_ou",
            "closed-form variance in dimension > 1",
        ));
    }
    init.validate()?;
    let lam = match mode {
        Linearization::LinearFunctional => ou.theta - ou.gamma,
        Linearization::Lions => ou.theta,
    };
    let v0 = init.variance();
    let s2 = ou.sigma * ou.sigma;
    let decay = (-2.0 * lam * t).exp();
    let noise = if lam == 0.0 {
        s2 * t
    } else {
        -s2 * (-2.0 * lam * t).exp_m1() / (2.0 * lam)
    };
    Ok(decay * v0 + noise)
}

/// `∂ₓψ_s` of the same ansatz.
pub fn ou_identity_gradient(ou: &MeanFieldOu, t: f64, s: f64, mode: Linearization) -> f64 {
    let lam = match mode {
        Linearization::LinearFunctional => ou.theta - ou.gamma,
        Linearization::Lions => ou.theta,
    };
    (-lam * (t - s)).exp()
}
