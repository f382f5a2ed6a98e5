use std::collections::BTreeMap;

use mflab::constants::{
    check_assumptions, compute_omega, compute_stability_constants, estimate_kappa,
    monotonicity_quotient, stability_constants, SearchSpec, Status, P_SET,
};
use mflab::model::{MeanFieldOu, TanhInteraction};
use mflab::simulate::{simulate_path, InitialLaw, TimeGrid};
use proptest::prelude::*;

// Independent re-implementations, written with exp/ln rather than powf.
fn pw(base: f64, e: f64) -> f64 {
    (e * base.ln()).exp()
}

fn omega_oracle(kappa: &[f64; 7], g: f64, ms: f64) -> f64 {
    let mut best = f64::INFINITY;
    for (i, p) in [2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0].iter().enumerate() {
        let two = pw(2.0, (p - 1.0) / p);
        let two2 = pw(2.0, 2.0 * (p - 1.0) / p);
        let v =
            kappa[i] / 2.0 - two * g - (p - 1.0) * two * ms * g - (p - 1.0) / 2.0 * two2 * g * g;
        best = best.min(v);
    }
    best
}

fn xi_oracle(p: f64, k: f64) -> f64 {
    if p == 2.0 {
        1.0
    } else {
        (p - 1.0) * pw(6.0 * (p - 1.0) * (p - 2.0) / k, (p - 2.0) / 2.0)
    }
}

fn lambda_oracle(p: f64, k: f64, m: f64) -> f64 {
    let inner = pw(12.0 * (p - 1.0) / k, p - 1.0)
        * (1.0 + if m == 0.0 { 0.0 } else { pw((p - 1.0) * m, p) });
    pw(inner + xi_oracle(p, k), 1.0 / p)
}

fn eta_oracle(p: f64, k: f64, m: f64, g: f64) -> f64 {
    pw(2.0, 1.0 / p) * lambda_oracle(p, k, m) * g * pw(8.0 / (p * k), 1.0 / p)
}

fn kmap(v: f64) -> BTreeMap<u32, f64> {
    P_SET.iter().map(|&p| (p, v)).collect()
}

#[test]
fn p2_substitution() {
    let c = stability_constants(2, 12.0, 0.0, 0.1).unwrap();
    assert_eq!(c.xi, 1.0);
    assert!((c.lambda - 2f64.sqrt()).abs() < 1e-14);
}

#[test]
fn p4_duplicate_formula() {
    let c = stability_constants(4, 8.0, 0.0, 0.05).unwrap();
    assert!((c.lambda - lambda_oracle(4.0, 8.0, 0.0)).abs() < 1e-12);
    assert!((c.xi - 3.0 * 36.0 / 8.0).abs() < 1e-12);
    assert!((c.eta - eta_oracle(4.0, 8.0, 0.0, 0.05)).abs() < 1e-12);
    let s = compute_stability_constants(8.0, 8.0, 0.0, 0.05).unwrap();
    let e2 = pw(2.0, 0.25) * lambda_oracle(4.0, 8.0, 0.0) * 0.05 * pw(2.0 / 8.0, 0.25);
    assert!((s.eta4_second - e2).abs() < 1e-12);
    assert_eq!(s.omega_hat, 1.0);
}

#[test]
fn nonzero_m_sigma_duplicate_formula() {
    for (p, k, m, g) in [
        (4, 3.0, 0.2, 0.01),
        (8, 5.0, 0.05, 0.02),
        (6, 1.5, 1.0, 0.3),
    ] {
        let c = stability_constants(p, k, m, g).unwrap();
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
        assert!(rel(c.lambda, lambda_oracle(p as f64, k, m)) < 1e-12);
        assert!(rel(c.eta, eta_oracle(p as f64, k, m, g)) < 1e-12);
    }
}

#[test]
fn zero_gamma_gives_zero_eta() {
    let s = compute_stability_constants(2.0, 2.0, 0.0, 0.0).unwrap();
    assert_eq!(s.p4.eta, 0.0);
    assert_eq!(s.p8.eta, 0.0);
    assert!(s.all_pass());
}

#[test]
fn nonpositive_kappa_rejected() {
    assert!(stability_constants(4, 0.0, 0.0, 0.1).is_err());
    assert!(stability_constants(3, 1.0, 0.0, 0.1).is_err());
}

#[test]
fn omega_examples() {
    let k = kmap(2.0);
    assert_eq!(compute_omega(&k, 0.0, 0.0).unwrap().omega, 1.0);
    let om = compute_omega(&k, 0.01, 0.0).unwrap();
    assert!((om.omega - omega_oracle(&[2.0; 7], 0.01, 0.0)).abs() < 1e-12);
    assert!(om.positive);
    let big = compute_omega(&k, 0.6, 0.0).unwrap();
    assert!(big.omega <= 0.0 && !big.positive);
    let mut partial = k.clone();
    partial.remove(&10);
    assert!(compute_omega(&partial, 0.1, 0.0).is_err());
}

#[test]
fn ou_report_matches_hand_values() {
    let ou = MeanFieldOu::new(1.0, 0.05, 1.0).unwrap();
    let r = check_assumptions(&ou, &SearchSpec::default()).unwrap();
    for p in P_SET {
        assert!((r.kappa[&p] - 2.0).abs() < 1e-10);
        assert!((r.metadata.kappa_sampled[&p] - 2.0).abs() < 1e-9);
    }
    assert!((r.gamma.unwrap() - 0.05).abs() < 1e-10);
    assert_eq!(r.m_sigma, Some(0.0));
    assert!((r.omega.unwrap() - omega_oracle(&[2.0; 7], 0.05, 0.0)).abs() < 1e-10);
    assert!((r.omega_hat.unwrap() - 0.25).abs() < 1e-12);
    for p in [4u32, 8] {
        assert!((r.eta[&p] - eta_oracle(p as f64, 2.0, 0.0, 0.05)).abs() < 1e-10);
    }
    assert_eq!(r.m2, Some(0.0));
    let status = |c: &str| r.flag(c).unwrap().status;
    for p in P_SET {
        assert_eq!(status(&format!("kappa_{p}_positive")), Status::Pass);
    }
    assert_eq!(status("omega_positive"), Status::Pass);
    assert_eq!(status("eta_4_below_one"), Status::Pass);
    assert_eq!(status("sampled_estimates_agree"), Status::Pass);
    let bounded = r.flag("drift_bounded").unwrap();
    assert_eq!(bounded.status, Status::Fail);
    assert!(!bounded.note.is_empty());
    assert_eq!(
        status("derivatives_orders_3_to_7_bounded"),
        Status::Unchecked
    );
}

#[test]
fn pure_ou_gamma_conditions_trivial() {
    let ou = MeanFieldOu::new(1.0, 0.0, 1.0).unwrap();
    let r = check_assumptions(&ou, &SearchSpec::default()).unwrap();
    assert_eq!(r.gamma, Some(0.0));
    assert_eq!(r.omega, Some(1.0));
    for c in [
        "omega_positive",
        "eta_4_below_one",
        "eta_8_below_one",
        "eta4_second_below_one",
        "gamma_at_most_one",
    ] {
        assert_eq!(r.flag(c).unwrap().status, Status::Pass, "{c}");
    }
}

#[test]
fn expansive_model_flags() {
    let m = MeanFieldOu::new(-1.0, 0.05, 1.0).unwrap();
    let k = estimate_kappa(&m, 4, &SearchSpec::default()).unwrap();
    assert!(k.value < 0.0);
    let r = check_assumptions(&m, &SearchSpec::default()).unwrap();
    assert!(!r.passes());
    assert_eq!(r.flag("kappa_2_positive").unwrap().status, Status::Fail);
    for c in [
        "omega_positive",
        "eta_4_below_one",
        "eta_8_below_one",
        "eta4_second_below_one",
    ] {
        assert_eq!(r.flag(c).unwrap().status, Status::NotApplicable, "{c}");
    }
    assert!(r.eta.is_empty());
}

fn flow_clouds(model: &TanhInteraction, spec: &SearchSpec) -> Vec<mflab::model::Cloud> {
    let steps = (5.0 / spec.dt).round() as usize;
    let path = simulate_path(
        model,
        spec.cloud_size,
        &TimeGrid::new(spec.dt, steps).unwrap(),
        &InitialLaw::default(),
        spec.seed,
        0,
    )
    .unwrap();
    spec.cloud_times
        .iter()
        .map(|t| path.snapshots[(t / spec.dt).round() as usize].clone())
        .collect()
}

#[test]
fn tanh_kappa_vs_grid_and_lower_bound() {
    let m = TanhInteraction::new(1.0, 0.2, 0.05, 1.0, 0.0).unwrap();
    let spec = SearchSpec::default();
    let est = estimate_kappa(&m, 4, &spec).unwrap();
    // Dense grid of short and long pairs on the same clouds.
    let mut oracle = f64::INFINITY;
    for cloud in flow_clouds(&m, &spec) {
        for i in 0..=2000 {
            let x = -10.0 + i as f64 * 0.01;
            for h in [1e-3, 0.05, 0.5, 3.0] {
                if let Some(q) = monotonicity_quotient(&m, &[x], &[x + h], &cloud, 4) {
                    oracle = oracle.min(-q);
                }
            }
        }
    }
    assert!(
        (est.value - oracle).abs() / oracle < 0.05,
        "{} vs {oracle}",
        est.value
    );
    assert!(est.value <= oracle + 1e-9);
    let lower = 2.0 * (1.0 - 0.2 - 0.05);
    assert!(est.value >= lower - 1e-9);
    assert!(
        (est.value - lower) / lower < 0.05,
        "{} vs {lower}",
        est.value
    );
}

#[test]
fn tanh_sups_and_monotone_kappa() {
    let m = TanhInteraction::default();
    let r = check_assumptions(&m, &SearchSpec::default()).unwrap();
    // sup |∂_μ b| = γ sup sech² = γ; sup |∂_x σ| = Σ₁ sup |sin| = Σ₁.
    assert!((r.gamma.unwrap() - 0.05).abs() < 1e-6);
    assert!((r.m_sigma.unwrap() - 0.05).abs() < 1e-6);
    let ks: Vec<f64> = r.kappa.values().cloned().collect();
    assert!(ks.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    assert!(ks[0] > ks[6]);
    assert!(r.m2.unwrap() > 0.0);
    assert!(r.omega.unwrap() <= r.kappa.values().cloned().fold(f64::INFINITY, f64::min) / 2.0);
}

#[test]
fn report_is_deterministic() {
    let m = TanhInteraction::default();
    let spec = SearchSpec {
        samples: 256,
        ..SearchSpec::default()
    };
    let a = check_assumptions(&m, &spec).unwrap().to_json().unwrap();
    let b = check_assumptions(&m, &spec).unwrap().to_json().unwrap();
    assert_eq!(a, b);
    let other = SearchSpec { seed: 7, ..spec };
    assert_ne!(a, check_assumptions(&m, &other).unwrap().to_json().unwrap());
}

#[test]
fn summary_lists_every_flag() {
    let ou = MeanFieldOu::new(1.0, 0.05, 1.0).unwrap();
    let r = check_assumptions(
        &ou,
        &SearchSpec {
            samples: 64,
            ..SearchSpec::default()
        },
    )
    .unwrap();
    let s = r.summary();
    assert_eq!(s.matches("] ").count(), r.flags.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn omega_below_half_kappa(ks in prop::array::uniform7(0.01f64..10.0), g in 0.0f64..1.0, ms in 0.0f64..2.0) {
        let map: BTreeMap<u32, f64> = P_SET.iter().cloned().zip(ks.iter().cloned()).collect();
        let om = compute_omega(&map, g, ms).unwrap();
        for k in ks {
            prop_assert!(om.omega <= k / 2.0 + 1e-15);
        }
        prop_assert!((om.omega - omega_oracle(&ks, g, ms)).abs() < 1e-12 * (1.0 + om.omega.abs()));
    }

    #[test]
    fn omega_decreasing_in_gamma(g1 in 0.0f64..1.0, dg in 0.0f64..1.0) {
        let k = kmap(3.0);
        let a = compute_omega(&k, g1, 0.1).unwrap().omega;
        let b = compute_omega(&k, g1 + dg, 0.1).unwrap().omega;
        prop_assert!(b <= a);
    }

    #[test]
    fn omega_hat_is_min_over_eight(k4 in 0.01f64..10.0, k8 in 0.01f64..10.0, g in 0.0f64..0.5) {
        let s = compute_stability_constants(k4, k8, 0.0, g).unwrap();
        prop_assert_eq!(s.omega_hat, k4.min(k8) / 8.0);
        prop_assert!(s.p4.lambda.is_finite() && s.p8.lambda.is_finite());
    }
}
