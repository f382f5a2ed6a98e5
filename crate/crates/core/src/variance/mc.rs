use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CoefficientModel, TestFunction};
use crate::simulate::{observe_averages, InitialLaw, LawFlow, TimeGrid};
use crate::stats::{self, LineFit};

/// A point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

/// `σ_{N,t}² = N · Var(⟨μ_t^N, φ⟩)` from replicate averages, with its
/// delete-one jackknife error.
pub fn empirical_variance(values: &[f64], n: usize) -> Result<Estimate> {
    if values.len() < 2 {
        return Err(Error::invalid(format!(
            "empirical variance needs at least 2 replicates, got {}",
            values.len()
        )));
    }
    let (v, se) = stats::variance_with_jackknife(values)?;
    let nf = n as f64;
    Ok(Estimate {
        value: nf * v,
        stderr: nf * se,
    })
}

/// `α̂_ℓ = N(Ê[Φ_ℓ(μ_t^N)] − Φ_ℓ(μ_t))` with `Φ₁ = ⟨·, φ⟩` and `Φ₂ = ⟨·, φ⟩²`.
pub fn alpha_hat(values: &[f64], n: usize, limit: f64, ell: u8) -> Result<Estimate> {
    if values.len() < 2 {
        return Err(Error::invalid(
            "weak-expansion estimate needs at least 2 replicates",
        ));
    }
    let nf = n as f64;
    let (obs, target): (Vec<f64>, f64) = match ell {
        1 => (values.to_vec(), limit),
        2 => (values.iter().map(|v| v * v).collect(), limit * limit),
        _ => {
            return Err(Error::invalid(format!(
                "expansion order must be 1 or 2, got {ell}"
            )))
        }
    };
    Ok(Estimate {
        value: nf * (stats::mean(&obs) - target),
        stderr: nf * stats::std_error(&obs),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaCurve {
    pub ell: u8,
    pub n: usize,
    pub t_grid: Vec<f64>,
    pub alpha: Vec<Estimate>,
}

/// Simulates `replicates` systems of size `n` and estimates `α̂_ℓ(t)` on
/// `t_grid` (times on `grid`). The law flow must be analytic.
#[allow(clippy::too_many_arguments)]
pub fn weak_expansion_coefficient(
    model: &dyn CoefficientModel,
    law: &LawFlow,
    phi: &dyn TestFunction,
    ell: u8,
    t_grid: &[f64],
    n: usize,
    replicates: usize,
    grid: &TimeGrid,
    init: &InitialLaw,
    seed: u64,
) -> Result<AlphaCurve> {
    if !law.is_analytic() {
        return Err(Error::invalid(
            "weak-expansion certification needs an analytic law flow; \
             a reference cloud is not accurate to o(1/N)",
        ));
    }
    let steps = t_grid
        .iter()
        .map(|&t| grid.index_within(t))
        .collect::<Result<Vec<_>>>()?;
    let vals = observe_averages(model, n, grid, init, seed, replicates, &[phi], &steps)?;
    let alpha = t_grid
        .iter()
        .zip(&vals)
        .map(|(&t, v)| alpha_hat(&v[0], n, law.expect(phi, t)?, ell))
        .collect::<Result<_>>()?;
    Ok(AlphaCurve {
        ell,
        n,
        t_grid: t_grid.to_vec(),
        alpha,
    })
}

/// Trend of an estimate curve over `t ≥ t_min`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatnessReport {
    pub t_min: f64,
    pub fit: LineFit,
    /// Slope confidence interval contains 0.
    pub flat: bool,
}

/// Weighted line fit of `α̂` against `t` for `t ≥ t_min`.
pub fn flatness(t_grid: &[f64], est: &[Estimate], t_min: f64) -> Result<FlatnessReport> {
    let (mut x, mut y, mut w) = (Vec::new(), Vec::new(), Vec::new());
    for (t, e) in t_grid.iter().zip(est) {
        if *t >= t_min {
            x.push(*t);
            y.push(e.value);
            w.push(1.0 / e.stderr.max(1e-300).powi(2));
        }
    }
    if x.len() < 3 {
        return Err(Error::invalid(format!(
            "flatness check needs at least 3 times ≥ {t_min}, got {}",
            x.len()
        )));
    }
    let fit = stats::wls(&x, &y, &w)?;
    // Known weights: the slope error follows from them, not from residuals.
    let sxx = {
        let sw: f64 = w.iter().sum();
        let xm = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
        x.iter()
            .zip(&w)
            .map(|(a, b)| b * (a - xm) * (a - xm))
            .sum::<f64>()
    };
    let se = (1.0 / sxx).sqrt().max(fit.slope_se);
    let flat = fit.slope.abs() <= 1.96 * se;
    Ok(FlatnessReport {
        t_min,
        fit: LineFit {
            slope_se: se,
            slope_ci: (fit.slope - 1.96 * se, fit.slope + 1.96 * se),
            ..fit
        },
        flat,
    })
}

/// Two estimates agree within `z` pooled standard errors.
pub fn agree(a: Estimate, b: Estimate, z: f64) -> bool {
    (a.value - b.value).abs() <= z * (a.stderr.powi(2) + b.stderr.powi(2)).sqrt()
}

/// σ² curves at several particle counts, with optional references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceCurve {
    pub t_grid: Vec<f64>,
    pub sigma2_pde: Option<Vec<f64>>,
    pub sigma2_mc: BTreeMap<usize, Vec<Estimate>>,
    pub sigma2_analytic: Option<Vec<f64>>,
}

impl VarianceCurve {
    /// The analytic curve if present, else the PDE curve.
    pub fn reference(&self) -> Option<&[f64]> {
        self.sigma2_analytic
            .as_deref()
            .or(self.sigma2_pde.as_deref())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub n_values: Vec<usize>,
    /// `sup_t |σ_{N,t}² − σ_t²|` per N.
    pub sup_gap: Vec<f64>,
    /// Standard error of the gap at the maximizing t.
    pub stderr: Vec<f64>,
    /// Log-log slope against N (absent when a gap is 0).
    pub fit: Option<LineFit>,
    /// Gaps not distinguishable from 0 at two standard errors.
    pub noise_dominated: Vec<bool>,
}

/// Variance gap against the curve's reference.
pub fn variance_gap(curve: &VarianceCurve) -> Result<GapReport> {
    let reference = curve
        .reference()
        .ok_or_else(|| Error::MissingDependency("no analytic or PDE variance reference".into()))?;
    let mut out = GapReport {
        n_values: Vec::new(),
        sup_gap: Vec::new(),
        stderr: Vec::new(),
        fit: None,
        noise_dominated: Vec::new(),
    };
    for (&n, est) in &curve.sigma2_mc {
        if est.len() != reference.len() {
            return Err(Error::dims("variance curve", reference.len(), est.len()));
        }
        let (k, gap) = est
            .iter()
            .zip(reference)
            .map(|(e, r)| (e.value - r).abs())
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, (k, g)| if g > acc.1 { (k, g) } else { acc },
            );
        out.n_values.push(n);
        out.sup_gap.push(gap);
        out.stderr.push(est[k].stderr);
        out.noise_dominated.push(gap <= 2.0 * est[k].stderr);
    }
    if out.n_values.len() >= 2 && out.sup_gap.iter().all(|&g| g > 0.0) {
        let x: Vec<f64> = out.n_values.iter().map(|&n| (n as f64).ln()).collect();
        let y: Vec<f64> = out.sup_gap.iter().map(|g| g.ln()).collect();
        out.fit = Some(stats::ols(&x, &y)?);
    }
    Ok(out)
}

/// `σ_{N}² = a + c/N` by weighted least squares in `1/N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extrapolation {
    pub limit: Estimate,
    pub slope: Estimate,
}

pub fn extrapolate(n_values: &[usize], est: &[Estimate]) -> Result<Extrapolation> {
    if n_values.len() != est.len() {
        return Err(Error::dims("extrapolation", n_values.len(), est.len()));
    }
    let x: Vec<f64> = n_values.iter().map(|&n| 1.0 / n as f64).collect();
    let y: Vec<f64> = est.iter().map(|e| e.value).collect();
    let w: Vec<f64> = est
        .iter()
        .map(|e| 1.0 / e.stderr.max(1e-300).powi(2))
        .collect();
    let fit = stats::wls(&x, &y, &w)?;
    // Standard errors from the known weights.
    let sw: f64 = w.iter().sum();
    let xm = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(&w).map(|(a, b)| b * (a - xm) * (a - xm)).sum();
    Ok(Extrapolation {
        limit: Estimate {
            value: fit.intercept,
            stderr: (1.0 / sw + xm * xm / sxx).sqrt(),
        },
        slope: Estimate {
            value: fit.slope,
            stderr: (1.0 / sxx).sqrt(),
        },
    })
}
