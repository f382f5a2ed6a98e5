use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{self, LineFit};

/// `E[‖D‖^p]^{1/p}` as a function of the lag `u − s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCurve {
    pub p: f64,
    pub lags: Vec<f64>,
    pub moments: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl MomentCurve {
    pub fn len(&self) -> usize {
        self.lags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lags.is_empty()
    }
}

/// Collects per-replicate values of `mean ‖D‖^p` at fixed lags.
#[derive(Debug, Clone)]
pub struct MomentAccumulator {
    p: f64,
    lags: Vec<f64>,
    /// `lags × replicates`.
    values: Vec<Vec<f64>>,
}

impl MomentAccumulator {
    pub fn new(p: f64, lags: Vec<f64>) -> Result<Self> {
        if !(p >= 1.0) {
            return Err(Error::invalid(format!(
                "moment order must be at least 1, got {p}"
            )));
        }
        let k = lags.len();
        Ok(MomentAccumulator {
            p,
            lags,
            values: vec![Vec::new(); k],
        })
    }

    /// Adds one replicate: `norms[lag]` lists the norms observed at that lag.
    pub fn push(&mut self, norms: &[Vec<f64>]) -> Result<()> {
        if norms.len() != self.lags.len() {
            return Err(Error::dims("moment lags", self.lags.len(), norms.len()));
        }
        for (acc, v) in self.values.iter_mut().zip(norms) {
            if v.is_empty() {
                return Err(Error::invalid("no entries at a lag"));
            }
            acc.push(v.iter().map(|x| x.abs().powf(self.p)).sum::<f64>() / v.len() as f64);
        }
        Ok(())
    }

    /// Moments with leave-one-replicate-out jackknife errors.
    pub fn curve(&self) -> Result<MomentCurve> {
        let mut moments = Vec::with_capacity(self.lags.len());
        let mut stderr = Vec::with_capacity(self.lags.len());
        for v in &self.values {
            let r = v.len();
            if r == 0 {
                return Err(Error::invalid("no replicates pushed"));
            }
            let s: f64 = v.iter().sum();
            moments.push((s / r as f64).powf(1.0 / self.p));
            stderr.push(if r > 1 {
                let loo: Vec<f64> = v
                    .iter()
                    .map(|x| ((s - x) / (r - 1) as f64).powf(1.0 / self.p))
                    .collect();
                stats::jackknife_se(&loo)
            } else {
                0.0
            });
        }
        Ok(MomentCurve {
            p: self.p,
            lags: self.lags.clone(),
            moments,
            stderr,
        })
    }
}

/// Which certified rate the fitted slope is compared with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecayTarget {
    /// Slope must satisfy `slope ≤ −κ_p/8 + tol`.
    First { kappa_p: f64 },
    /// Slope must satisfy `slope ≤ −ω̂ + tol`.
    Second { omega_hat: f64 },
}

impl DecayTarget {
    pub fn threshold(&self) -> f64 {
        match *self {
            DecayTarget::First { kappa_p } => -kappa_p / 8.0,
            DecayTarget::Second { omega_hat } => -omega_hat,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Slope of `log moment` against lag.
    pub slope: f64,
    /// Decay rate `−slope`.
    pub rate: f64,
    pub intercept: f64,
    pub fit: LineFit,
    pub threshold: f64,
    pub tolerance: f64,
    pub bound_holds: bool,
}

/// Log-linear fit of a moment curve and comparison with a certified rate.
/// Weighted by inverse delta-method variances when standard errors are
/// available.
pub fn fit_decay(curve: &MomentCurve, target: DecayTarget, tolerance: f64) -> Result<DecayFit> {
    if curve.len() < 4 {
        return Err(Error::invalid(format!(
            "decay fit needs moments at 4 or more lags, got {}",
            curve.len()
        )));
    }
    if let Some(k) = curve.moments.iter().position(|&m| !(m > 0.0)) {
        return Err(Error::invalid(format!(
            "non-positive moment {} at lag {}",
            curve.moments[k], curve.lags[k]
        )));
    }
    let y: Vec<f64> = curve.moments.iter().map(|m| m.ln()).collect();
    let weighted = curve.stderr.len() == curve.len() && curve.stderr.iter().all(|&s| s > 0.0);
    let fit = if weighted {
        let w: Vec<f64> = curve
            .moments
            .iter()
            .zip(&curve.stderr)
            .map(|(m, s)| (m / s).powi(2))
            .collect();
        stats::wls(&curve.lags, &y, &w)?
    } else {
        stats::ols(&curve.lags, &y)?
    };
    let threshold = target.threshold();
    Ok(DecayFit {
        slope: fit.slope,
        rate: -fit.slope,
        intercept: fit.intercept,
        threshold,
        tolerance,
        bound_holds: fit.slope <= threshold + tolerance,
        fit,
    })
}

/// Envelope `C e^{−rate·lag}` anchored at the first lag and the largest
/// excess of the curve over it, measured in standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCheck {
    pub rate: f64,
    pub constant: f64,
    pub envelope: Vec<f64>,
    /// `max (moment − envelope)/stderr` (or raw excess where stderr is 0).
    pub max_excess: f64,
    pub holds: bool,
}

/// Checks that the curve stays below its anchored envelope up to `z`
/// standard errors.
pub fn envelope_check(curve: &MomentCurve, rate: f64, z: f64) -> Result<EnvelopeCheck> {
    if curve.is_empty() {
        return Err(Error::invalid("empty moment curve"));
    }
    let constant = curve.moments[0] * (rate * curve.lags[0]).exp();
    let envelope: Vec<f64> = curve
        .lags
        .iter()
        .map(|l| constant * (-rate * l).exp())
        .collect();
    let mut max_excess = f64::NEG_INFINITY;
    let mut holds = true;
    for k in 0..curve.len() {
        let diff = curve.moments[k] - envelope[k];
        let se = curve.stderr.get(k).copied().unwrap_or(0.0);
        let excess = if se > 0.0 { diff / se } else { diff };
        max_excess = max_excess.max(excess);
        if diff > z * se + 1e-12 * envelope[k].abs() {
            holds = false;
        }
    }
    Ok(EnvelopeCheck {
        rate,
        constant,
        envelope,
        max_excess,
        holds,
    })
}
