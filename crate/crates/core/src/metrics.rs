//! Wasserstein-1 distances to Gaussians and CLT-rate fits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal::{cdf_antiderivative, quantile, sf_antiderivative};
use crate::stats::{self, LineFit};

/// `∫_a^b (Φ(x/σ) − p) dx` in whichever tail keeps precision.
fn signed_area(a: f64, b: f64, p: f64, sigma: f64) -> f64 {
    if 0.5 * (a + b) <= 0.0 {
        (cdf_antiderivative(b, sigma) - cdf_antiderivative(a, sigma)) - p * (b - a)
    } else {
        (1.0 - p) * (b - a) - (sf_antiderivative(b, sigma) - sf_antiderivative(a, sigma))
    }
}

/// `∫_a^b |p − Φ(x/σ)| dx`, split where `Φ(x/σ) = p`.
fn abs_area(a: f64, b: f64, p: f64, sigma: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let q = sigma * quantile(p);
    if q > a && q < b {
        signed_area(a, q, p, sigma).abs() + signed_area(q, b, p, sigma).abs()
    } else {
        signed_area(a, b, p, sigma).abs()
    }
}

/// Exact `W₁` between the empirical law of `samples` and `N(0, σ²)`:
/// `∫|F̂_n(x) − Φ(x/σ)|dx`, integrated in closed form between order
/// statistics.
pub fn w1_empirical_vs_gaussian(samples: &[f64], sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::DegenerateVariance(sigma2));
    }
    if samples.is_empty() {
        return Err(Error::invalid("W₁ needs at least one sample"));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("samples must be finite"));
    }
    let sigma = sigma2.sqrt();
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    let nf = n as f64;
    let mut total = cdf_antiderivative(xs[0], sigma);
    for k in 1..n {
        total += abs_area(xs[k - 1], xs[k], k as f64 / nf, sigma);
    }
    total += -sf_antiderivative(xs[n - 1], sigma);
    Ok(total)
}

/// `W₁(N(0, τ₁²), N(0, τ₂²)) = √(2/π)|τ₁ − τ₂|`.
pub fn w1_gaussians(tau1_sq: f64, tau2_sq: f64) -> Result<f64> {
    if !(tau1_sq >= 0.0) || !(tau2_sq >= 0.0) {
        return Err(Error::invalid(format!(
            "variances must be non-negative, got {tau1_sq} and {tau2_sq}"
        )));
    }
    Ok((2.0 / std::f64::consts::PI).sqrt() * (tau1_sq.sqrt() - tau2_sq.sqrt()).abs())
}

/// `W₁` with a delete-one-group jackknife standard error.
pub fn w1_with_stderr(samples: &[f64], sigma2: f64, groups: usize) -> Result<(f64, f64)> {
    let full = w1_empirical_vs_gaussian(samples, sigma2)?;
    let g = groups.min(samples.len());
    if g < 2 {
        return Ok((full, 0.0));
    }
    let loo = (0..g)
        .map(|h| {
            let kept: Vec<f64> = samples
                .iter()
                .enumerate()
                .filter(|(i, _)| i % g != h)
                .map(|(_, x)| *x)
                .collect();
            w1_empirical_vs_gaussian(&kept, sigma2)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((full, stats::jackknife_se(&loo)))
}

/// Expected `W₁` between `n` i.i.d. `N(0, σ²)` draws and their own law,
/// `≈ √(2/(πn)) ∫√(Φ(1 − Φ)) dx · σ` to leading order: the level below which
/// an estimated distance is indistinguishable from sampling noise.
pub fn w1_noise_floor(n: usize, sigma2: f64) -> f64 {
    // ∫ √(Φ(z)(1 − Φ(z))) dz over ℝ.
    const C: f64 = 1.614_743_853_429_67;
    (2.0 / (std::f64::consts::PI * n as f64)).sqrt() * C * sigma2.sqrt()
}

/// Log-log least-squares fit of a distance against N.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub n_values: Vec<usize>,
    pub w1_values: Vec<f64>,
    pub stderr: Vec<f64>,
    pub fit: LineFit,
    pub target: f64,
    pub tolerance: f64,
    pub passes: bool,
}

impl RateFit {
    pub fn slope(&self) -> f64 {
        self.fit.slope
    }

    pub fn intercept(&self) -> f64 {
        self.fit.intercept
    }
}

/// OLS of `log W₁` on `log N`, compared with `target ± tolerance`.
pub fn fit_rate(
    n_values: &[usize],
    w1_values: &[f64],
    stderr: &[f64],
    target: f64,
    tolerance: f64,
) -> Result<RateFit> {
    if n_values.len() != w1_values.len() || stderr.len() != w1_values.len() {
        return Err(Error::dims("rate fit", n_values.len(), w1_values.len()));
    }
    if n_values.len() < 3 {
        return Err(Error::invalid("rate fit needs at least 3 values of N"));
    }
    if n_values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("N values must be strictly increasing"));
    }
    if let Some(w) = w1_values.iter().find(|&&w| !(w > 0.0)) {
        return Err(Error::invalid(format!(
            "W₁ values must be positive, got {w}"
        )));
    }
    let x: Vec<f64> = n_values.iter().map(|&n| (n as f64).ln()).collect();
    let y: Vec<f64> = w1_values.iter().map(|w| w.ln()).collect();
    let fit = stats::ols(&x, &y)?;
    Ok(RateFit {
        n_values: n_values.to_vec(),
        w1_values: w1_values.to_vec(),
        stderr: stderr.to_vec(),
        passes: (fit.slope - target).abs() <= tolerance,
        target,
        tolerance,
        fit,
    })
}
