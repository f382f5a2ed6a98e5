use mflab::metrics::{
    fit_rate, w1_empirical_vs_gaussian, w1_gaussians, w1_noise_floor, w1_with_stderr,
};
use mflab::normal::{cdf, quantile};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Brute-force `∫|F̂ − Φ|` by composite Simpson on a fine grid.
fn w1_oracle(samples: &[f64], sigma2: f64) -> f64 {
    let sigma = sigma2.sqrt();
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    let lo = xs[0].min(-12.0 * sigma);
    let hi = xs[xs.len() - 1].max(12.0 * sigma);
    let f = |x: f64| {
        let k = xs.partition_point(|&v| v <= x) as f64;
        (k / n - cdf(x / sigma)).abs()
    };
    // Integrate piecewise between order statistics so the step jumps fall on knots.
    let mut knots = vec![lo];
    knots.extend(xs.iter().copied());
    knots.push(hi);
    let mut total = 0.0;
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let m = 2000;
        let h = (b - a) / m as f64;
        let eps = 1e-12 * (b - a);
        let mut s = f(a + eps) + f(b - eps);
        for i in 1..m {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        total += s * h / 3.0;
    }
    total
}

fn normals(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

#[test]
fn single_atom_at_zero() {
    for s2 in [0.25, 1.0, 4.0] {
        let w = w1_empirical_vs_gaussian(&[0.0], s2).unwrap();
        assert!((w - s2.sqrt() * (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-12);
    }
}

#[test]
fn matches_numeric_integration() {
    for (n, seed, s2) in [(5, 1, 1.0), (40, 2, 0.3), (200, 3, 2.5)] {
        let xs: Vec<f64> = normals(n, seed).iter().map(|x| 0.7 * x + 0.2).collect();
        let exact = w1_empirical_vs_gaussian(&xs, s2).unwrap();
        let oracle = w1_oracle(&xs, s2);
        assert!((exact - oracle).abs() < 1e-8, "{exact} vs {oracle}");
    }
}

#[test]
fn quantile_sample_is_close() {
    let n = 10_000;
    let sigma = 1.5;
    let xs: Vec<f64> = (0..n)
        .map(|i| sigma * quantile((i as f64 + 0.5) / n as f64))
        .collect();
    let w = w1_empirical_vs_gaussian(&xs, sigma * sigma).unwrap();
    assert!(w < 5e-4 * sigma, "{w}");
}

#[test]
fn shift_bound_and_exactness() {
    let xs = normals(300, 9);
    let base = w1_empirical_vs_gaussian(&xs, 1.0).unwrap();
    for c in [0.1, 0.5, 2.0] {
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let w = w1_empirical_vs_gaussian(&shifted, 1.0).unwrap();
        assert!((w - base).abs() <= c + 1e-12);
    }
    // A far shift dominates: W₁ → |c| as the laws separate.
    let far: Vec<f64> = (0..1000)
        .map(|i| 50.0 + quantile((i as f64 + 0.5) / 1000.0))
        .collect();
    let w = w1_empirical_vs_gaussian(&far, 1.0).unwrap();
    assert!((w - 50.0).abs() < 1e-2);
}

#[test]
fn rejects_bad_input() {
    assert!(w1_empirical_vs_gaussian(&[], 1.0).is_err());
    assert!(w1_empirical_vs_gaussian(&[0.0], 0.0).is_err());
    assert!(w1_empirical_vs_gaussian(&[f64::NAN], 1.0).is_err());
    assert!(w1_gaussians(-1.0, 1.0).is_err());
}

#[test]
fn gaussian_pair_closed_form() {
    let w = w1_gaussians(1.0, 4.0).unwrap();
    assert!((w - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-12);
    assert_eq!(w1_gaussians(2.0, 2.0).unwrap(), 0.0);
}

#[test]
fn gaussian_pair_against_empirical() {
    // Quantile sample of N(0, 4) against N(0, 1).
    let n = 20_000;
    let xs: Vec<f64> = (0..n)
        .map(|i| 2.0 * quantile((i as f64 + 0.5) / n as f64))
        .collect();
    let w = w1_empirical_vs_gaussian(&xs, 1.0).unwrap();
    assert!((w - w1_gaussians(4.0, 1.0).unwrap()).abs() < 1e-3);
}

#[test]
fn noise_floor_matches_sampling() {
    let n = 2000;
    let reps = 200;
    let mean: f64 = (0..reps)
        .map(|r| w1_empirical_vs_gaussian(&normals(n, 100 + r), 1.0).unwrap())
        .sum::<f64>()
        / reps as f64;
    let floor = w1_noise_floor(n, 1.0);
    assert!((mean / floor - 1.0).abs() < 0.05, "{mean} vs {floor}");
}

#[test]
fn jackknife_error_is_sane() {
    let xs = normals(4000, 5);
    let (w, se) = w1_with_stderr(&xs, 1.0, 20).unwrap();
    assert!(se > 0.0 && se < w);
}

#[test]
fn rate_fit_recovers_slopes() {
    let ns = [100, 200, 400, 800, 1600];
    for slope in [-0.5, -1.0] {
        let w: Vec<f64> = ns.iter().map(|&n| 3.0 * (n as f64).powf(slope)).collect();
        let fit = fit_rate(&ns, &w, &[0.0; 5], -0.5, 0.1).unwrap();
        assert!((fit.slope() - slope).abs() < 1e-12);
        assert!((fit.intercept() - 3f64.ln()).abs() < 1e-10);
        assert_eq!(fit.passes, slope == -0.5);
    }
    assert!(fit_rate(&[1, 2], &[1.0, 1.0], &[0.0; 2], -0.5, 0.1).is_err());
    assert!(fit_rate(&[1, 3, 2], &[1.0; 3], &[0.0; 3], -0.5, 0.1).is_err());
    assert!(fit_rate(&[1, 2, 3], &[1.0, 0.0, 1.0], &[0.0; 3], -0.5, 0.1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn permutation_invariant(mut xs in prop::collection::vec(-5.0f64..5.0, 1..40), s2 in 0.1f64..4.0) {
        let a = w1_empirical_vs_gaussian(&xs, s2).unwrap();
        xs.reverse();
        let b = w1_empirical_vs_gaussian(&xs, s2).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn gaussian_triangle(a in 0.0f64..5.0, b in 0.0f64..5.0, c in 0.0f64..5.0) {
        let ab = w1_gaussians(a, b).unwrap();
        let bc = w1_gaussians(b, c).unwrap();
        let ac = w1_gaussians(a, c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-12);
    }

    #[test]
    fn empirical_triangle(xs in prop::collection::vec(-4.0f64..4.0, 1..30), s1 in 0.2f64..3.0, s2 in 0.2f64..3.0) {
        // W₁(P̂, N₂) ≤ W₁(P̂, N₁) + W₁(N₁, N₂).
        let d2 = w1_empirical_vs_gaussian(&xs, s2).unwrap();
        let d1 = w1_empirical_vs_gaussian(&xs, s1).unwrap();
        prop_assert!(d2 <= d1 + w1_gaussians(s1, s2).unwrap() + 1e-10);
    }

    #[test]
    fn nonnegative_and_finite(xs in prop::collection::vec(-30.0f64..30.0, 1..50), s2 in 0.01f64..10.0) {
        let w = w1_empirical_vs_gaussian(&xs, s2).unwrap();
        prop_assert!(w.is_finite() && w >= 0.0);
    }
}
