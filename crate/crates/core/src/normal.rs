//! Standard normal density, distribution and quantile functions.

use libm::erfc;
use statrs::function::erf::erfc_inv;

pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
#[inline]
pub fn pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF, computed through `erfc` so both tails keep full
/// relative precision.
#[inline]
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile for `p` in (0, 1).
pub fn quantile(p: f64) -> f64 {
    assert!(
        p > 0.0 && p < 1.0,
        "quantile level must lie in (0, 1), got {p}"
    );
    let mut x = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    // The rational starting value is good to ~1e-11; Newton polishes it
    // against the full-precision CDF.
    for _ in 0..2 {
        // cdf(x) − p, evaluated in whichever tail keeps precision.
        let f = if x < 0.0 {
            cdf(x) - p
        } else {
            (1.0 - p) - cdf(-x)
        };
        let dens = pdf(x);
        if dens <= 0.0 {
            break;
        }
        x -= f / dens;
    }
    x
}

/// Antiderivative of the N(0, σ²) CDF: d/dx [x Φ(x/σ) + σ φ(x/σ)] = Φ(x/σ).
#[inline]
pub fn cdf_antiderivative(x: f64, sigma: f64) -> f64 {
    let z = x / sigma;
    x * cdf(z) + sigma * pdf(z)
}

/// Antiderivative of the N(0, σ²) survival function 1 − Φ(x/σ), i.e.
/// x − [x Φ(x/σ) + σ φ(x/σ)] written without cancellation in the right tail.
#[inline]
pub fn sf_antiderivative(x: f64, sigma: f64) -> f64 {
    let z = x / sigma;
    x * cdf(-z) - sigma * pdf(z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_known_values() {
        assert!((cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((cdf(1.959_963_984_540_054) - 0.975).abs() < 1e-14);
        assert!((cdf(-8.0) - 6.220_960_574_271_785e-16).abs() < 1e-28);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[1e-10, 1e-4, 0.1, 0.5, 0.77, 0.999_999] {
            let x = quantile(p);
            assert!((cdf(x) - p).abs() < 1e-13 * p.max(1e-3), "p = {p}");
        }
    }

    #[test]
    fn antiderivatives_differentiate_back() {
        let h = 1e-5;
        for &x in &[-3.0, -0.4, 0.0, 0.9, 2.5] {
            for &s in &[0.5, 1.0, 2.0] {
                let d = (cdf_antiderivative(x + h, s) - cdf_antiderivative(x - h, s)) / (2.0 * h);
                assert!((d - cdf(x / s)).abs() < 1e-9);
                let d = (sf_antiderivative(x + h, s) - sf_antiderivative(x - h, s)) / (2.0 * h);
                assert!((d - cdf(-x / s)).abs() < 1e-9);
            }
        }
    }
}
