//! Small statistical helpers: moments, least squares and jackknife errors.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance. Returns 0 for fewer than two values.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let shifted: Vec<f64> = xs.iter().map(|x| x - xs[0]).collect();
    let m = mean(&shifted);
    shifted.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

/// Standard error of the sample mean.
pub fn std_error(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Jackknife standard error from leave-one-out estimates.
pub fn jackknife_se(loo: &[f64]) -> f64 {
    let g = loo.len();
    if g < 2 {
        return 0.0;
    }
    let m = mean(loo);
    let ss: f64 = loo.iter().map(|x| (x - m) * (x - m)).sum();
    ((g - 1) as f64 / g as f64 * ss).sqrt()
}

/// Delete-one-group jackknife of an arbitrary statistic.
///
/// `stat` receives the indices of the retained groups. Returns the full
/// estimate and its jackknife standard error.
pub fn grouped_jackknife<F>(groups: usize, stat: F) -> (f64, f64)
where
    F: Fn(&[usize]) -> f64,
{
    let all: Vec<usize> = (0..groups).collect();
    let full = stat(&all);
    if groups < 2 {
        return (full, 0.0);
    }
    let loo: Vec<f64> = (0..groups)
        .map(|g| {
            let kept: Vec<usize> = all.iter().copied().filter(|&k| k != g).collect();
            stat(&kept)
        })
        .collect();
    (full, jackknife_se(&loo))
}

/// Unbiased variance together with its closed-form delete-one jackknife
/// standard error.
pub fn variance_with_jackknife(xs: &[f64]) -> Result<(f64, f64)> {
    let n = xs.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "variance needs at least 2 samples, got {n}"
        )));
    }
    if n == 2 {
        return Ok((variance(xs), variance(xs)));
    }
    let nf = n as f64;
    let xs: Vec<f64> = xs.iter().map(|x| x - xs[0]).collect();
    let m = mean(&xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    let loo: Vec<f64> = xs
        .iter()
        .map(|&x| {
            let d = x - m;
            (ss - nf / (nf - 1.0) * d * d) / (nf - 2.0)
        })
        .collect();
    Ok((ss / (nf - 1.0), jackknife_se(&loo)))
}

/// Ordinary or weighted least-squares line fit with a Student-t slope interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
    pub slope_ci: (f64, f64),
    pub residual_sd: f64,
    pub r_squared: f64,
    pub points: usize,
}

pub fn ols(x: &[f64], y: &[f64]) -> Result<LineFit> {
    wls(x, y, &vec![1.0; x.len()])
}

/// Weighted least squares with weights proportional to inverse variances.
pub fn wls(x: &[f64], y: &[f64], w: &[f64]) -> Result<LineFit> {
    let n = x.len();
    if y.len() != n || w.len() != n {
        return Err(Error::dims("line fit", n, y.len().min(w.len())));
    }
    if n < 2 {
        return Err(Error::invalid("line fit needs at least 2 points"));
    }
    if x.iter().chain(y).chain(w).any(|v| !v.is_finite()) || w.iter().any(|&v| v <= 0.0) {
        return Err(Error::invalid(
            "line fit inputs must be finite with positive weights",
        ));
    }
    let sw: f64 = w.iter().sum();
    let xm = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let ym = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = x[i] - xm;
        let dy = y[i] - ym;
        sxx += w[i] * dx * dx;
        sxy += w[i] * dx * dy;
        syy += w[i] * dy * dy;
    }
    if sxx <= 0.0 {
        return Err(Error::invalid(
            "line fit needs at least two distinct abscissae",
        ));
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let rss: f64 = (0..n)
        .map(|i| {
            let r = y[i] - intercept - slope * x[i];
            w[i] * r * r
        })
        .sum();
    let dof = n.saturating_sub(2);
    let (sigma2, t) = if dof > 0 {
        let t = StudentsT::new(0.0, 1.0, dof as f64)
            .map(|d| d.inverse_cdf(0.975))
            .unwrap_or(1.96);
        (rss / dof as f64, t)
    } else {
        (0.0, f64::INFINITY)
    };
    let slope_se = (sigma2 / sxx).sqrt();
    let intercept_se = (sigma2 * (1.0 / sw + xm * xm / sxx)).sqrt();
    let half = if slope_se > 0.0 { t * slope_se } else { 0.0 };
    Ok(LineFit {
        slope,
        intercept,
        slope_se,
        intercept_se,
        slope_ci: (slope - half, slope + half),
        residual_sd: sigma2.sqrt(),
        r_squared: if syy > 0.0 { 1.0 - rss / syy } else { 1.0 },
        points: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_recovered() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let f = ols(&x, &y).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-14);
        assert!((f.intercept - 2.0).abs() < 1e-14);
        assert!(f.slope_se < 1e-14);
    }

    #[test]
    fn closed_form_jackknife_matches_brute_force() {
        let xs = [0.3, -1.2, 2.2, 0.7, 0.0, 5.1, -0.4];
        let (v, se) = variance_with_jackknife(&xs).unwrap();
        let (v2, se2) = grouped_jackknife(xs.len(), |idx| {
            let sub: Vec<f64> = idx.iter().map(|&i| xs[i]).collect();
            variance(&sub)
        });
        assert!((v - v2).abs() < 1e-12);
        assert!((se - se2).abs() < 1e-12);
    }

    #[test]
    fn mean_se_matches_jackknife_of_mean() {
        let xs = [1.0, 4.0, 2.0, 8.0, -3.0];
        let (_, se) = grouped_jackknife(xs.len(), |idx| {
            idx.iter().map(|&i| xs[i]).sum::<f64>() / idx.len() as f64
        });
        assert!((se - std_error(&xs)).abs() < 1e-12);
    }
}
