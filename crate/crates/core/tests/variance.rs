use mflab::model::{MeanFieldOu, ModelSpec, Observable, TestFunction};
use mflab::simulate::{law_flow, InitialLaw, LawFlow, LawFlowKind, ReferenceOptions, TimeGrid};
use mflab::variance::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn ou_law(theta: f64, gamma: f64, sigma: f64, init: InitialLaw) -> (MeanFieldOu, LawFlow) {
    let ou = MeanFieldOu::new(theta, gamma, sigma).unwrap();
    let spec = ModelSpec::MeanFieldOu {
        theta,
        gamma,
        sigma,
        dim: 1,
    };
    let grid = TimeGrid::new(0.01, 1).unwrap();
    let law = law_flow(
        &spec,
        &init,
        LawFlowKind::AnalyticGaussian,
        &grid,
        &ReferenceOptions::default(),
    )
    .unwrap();
    (ou, law)
}

#[test]
fn brownian_motion_keeps_the_identity_harmonic() {
    let init = InitialLaw::Gaussian {
        mean: 0.3,
        variance: 0.5,
    };
    let (bm, law) = ou_law(0.0, 0.0, 1.0, init);
    let sol = solve_backward_pde(
        &bm,
        &law,
        &Observable::coordinate(),
        &PdeGrid::new(0.01),
        1.0,
        Linearization::default(),
    )
    .unwrap();
    for k in [0, 50, 100] {
        for (i, &x) in sol.x_grid.iter().enumerate() {
            assert!((sol.psi[k][i] - x).abs() < 1e-10);
        }
    }
    let v = limiting_variance(&sol, &law, &bm, &init).unwrap();
    assert!((v - 1.5).abs() < 1e-9, "{v}");
}

#[test]
fn ou_identity_gradient_matches_affine_ansatz_in_both_modes() {
    let (theta, gamma) = (1.0, 0.3);
    let init = InitialLaw::default();
    let (ou, law) = ou_law(theta, gamma, 1.0, init);
    let t = 2.0;
    for (mode, lam) in [
        (Linearization::LinearFunctional, theta - gamma),
        (Linearization::Lions, theta),
    ] {
        let sol = solve_backward_pde(
            &ou,
            &law,
            &Observable::coordinate(),
            &PdeGrid::new(0.01),
            t,
            mode,
        )
        .unwrap();
        for (k, &s) in sol.s_grid.iter().enumerate().step_by(20) {
            let want = (-lam * (t - s)).exp();
            let got = sol.dpsi_at(k, 0.4);
            assert!(
                (got - want).abs() < 1e-4 * want,
                "{mode:?} s={s}: {got} vs {want}"
            );
        }
    }
}

#[test]
fn ou_identity_variance_closed_form() {
    let init = InitialLaw::Gaussian {
        mean: 0.0,
        variance: 0.7,
    };
    let (ou, law) = ou_law(1.0, 0.0, 1.4, init);
    let t = 1.5;
    let sol = solve_backward_pde(
        &ou,
        &law,
        &Observable::coordinate(),
        &PdeGrid::new(0.01),
        t,
        Linearization::default(),
    )
    .unwrap();
    let v = limiting_variance(&sol, &law, &ou, &init).unwrap();
    let want = (-2.0 * t).exp() * 0.7 + 1.96 * (1.0 - (-2.0 * t).exp()) / 2.0;
    assert!((v - want).abs() < 1e-4 * want, "{v} vs {want}");

    let (ou, law) = ou_law(1.0, 0.05, 1.0, InitialLaw::default());
    for t in [0.5, 1.0, 2.0, 5.0] {
        let sol = solve_backward_pde(
            &ou,
            &law,
            &Observable::coordinate(),
            &PdeGrid::new(0.01),
            t,
            Linearization::default(),
        )
        .unwrap();
        let v = limiting_variance(&sol, &law, &ou, &InitialLaw::default()).unwrap();
        let lam: f64 = 0.95;
        let want = (-2.0 * lam * t).exp() + (1.0 - (-2.0 * lam * t).exp()) / (2.0 * lam);
        assert!((v - want).abs() < 1e-4 * want, "t={t}: {v} vs {want}");
        let lib = ou_identity_variance(
            &ou,
            &InitialLaw::default(),
            t,
            Linearization::LinearFunctional,
        )
        .unwrap();
        assert!((lib - want).abs() < 1e-14);
    }
}

#[test]
fn constant_observable_has_zero_limiting_variance() {
    let (ou, law) = ou_law(1.0, 0.05, 1.0, InitialLaw::default());
    let phi = Observable::Constant { value: 3.0 };
    let sol = solve_backward_pde(
        &ou,
        &law,
        &phi,
        &PdeGrid::new(0.02),
        1.0,
        Linearization::default(),
    )
    .unwrap();
    assert!(limiting_variance(&sol, &law, &ou, &InitialLaw::default()).unwrap() < 1e-20);
}

fn trapz_normal(mean: f64, sd: f64, f: impl Fn(f64) -> f64) -> f64 {
    if sd == 0.0 {
        return f(mean);
    }
    let k = 400;
    let h = 20.0 / k as f64;
    (0..=k)
        .map(|i| {
            let z = -10.0 + h * i as f64;
            let w = if i == 0 || i == k { 0.5 } else { 1.0 };
            w * h * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt() * f(mean + sd * z)
        })
        .sum()
}

/// Mean-field OU from a centred Gaussian, linear-functional kernel, smooth φ:
/// `ψ'_s(y) = e^{−θτ}E[φ'(ye^{−θτ} + √v_τ Z)] + κ(e^{−(θ−γ)τ} − e^{−θτ})`,
/// `κ = E_{μ_t}[φ']`, `τ = t − s`, `v_τ = Σ²(1 − e^{−2θτ})/(2θ)`.
fn ou_semi_analytic(
    theta: f64,
    gamma: f64,
    sig: f64,
    v0: f64,
    t: f64,
    phi: &dyn Fn(f64) -> f64,
    dphi: &dyn Fn(f64) -> f64,
) -> f64 {
    let var_t = |s: f64| {
        v0 * (-2.0 * theta * s).exp() + sig * sig * (1.0 - (-2.0 * theta * s).exp()) / (2.0 * theta)
    };
    let kappa = trapz_normal(0.0, var_t(t).sqrt(), dphi);
    let vtau = |tau: f64| sig * sig * (1.0 - (-2.0 * theta * tau).exp()) / (2.0 * theta);
    let grad = |s: f64, y: f64| {
        let tau = t - s;
        let e = (-theta * tau).exp();
        e * trapz_normal(y * e, vtau(tau).sqrt(), dphi)
            + kappa * ((-(theta - gamma) * tau).exp() - e)
    };
    let beta = kappa * ((-(theta - gamma) * t).exp() - (-theta * t).exp());
    let e = (-theta * t).exp();
    let psi0 = |y: f64| trapz_normal(y * e, vtau(t).sqrt(), phi) + beta * y;
    let m1 = trapz_normal(0.0, v0.sqrt(), psi0);
    let m2 = trapz_normal(0.0, v0.sqrt(), |y| psi0(y).powi(2));
    let ks = 200;
    let ds = t / ks as f64;
    let mut integral = 0.0;
    for k in 0..=ks {
        let s = k as f64 * ds;
        let w = if k == 0 || k == ks { 0.5 } else { 1.0 };
        let sd = var_t(s).sqrt();
        integral += w * ds * sig * sig * trapz_normal(0.0, sd, |y| grad(s, y).powi(2));
    }
    m2 - m1 * m1 + integral
}

#[test]
fn ou_tanh_variance_matches_semi_analytic_oracle() {
    let (theta, gamma) = (1.0, 0.3);
    let (ou, law) = ou_law(theta, gamma, 1.0, InitialLaw::default());
    for t in [0.5, 2.0] {
        let sol = solve_backward_pde(
            &ou,
            &law,
            &Observable::tanh(),
            &PdeGrid::new(0.01),
            t,
            Linearization::default(),
        )
        .unwrap();
        let v = limiting_variance(&sol, &law, &ou, &InitialLaw::default()).unwrap();
        let want = ou_semi_analytic(theta, gamma, 1.0, 1.0, t, &|x| x.tanh(), &|x| {
            1.0 / x.cosh().powi(2)
        });
        assert!((v - want).abs() < 2e-4 * want, "t={t}: {v} vs {want}");
    }
}

#[test]
fn affine_invariance_and_quadratic_scaling() {
    let (ou, law) = ou_law(1.0, 0.05, 1.0, InitialLaw::default());
    let g = PdeGrid::new(0.02);
    let var = |phi: &Observable| {
        let sol = solve_backward_pde(&ou, &law, phi, &g, 1.0, Linearization::default()).unwrap();
        limiting_variance(&sol, &law, &ou, &InitialLaw::default()).unwrap()
    };
    let base = var(&Observable::tanh());
    let shifted = var(&Observable::Linear {
        offset: 2.0,
        terms: vec![(1.0, Observable::tanh())],
    });
    let scaled = var(&Observable::Linear {
        offset: 0.0,
        terms: vec![(-3.0, Observable::tanh())],
    });
    assert!((shifted - base).abs() < 1e-10 * base);
    assert!((scaled - 9.0 * base).abs() < 1e-10 * base);
}

#[test]
fn pde_refinement_is_stable_on_tanh_interaction() {
    let spec = ModelSpec::tanh_interaction();
    let model = spec.build().unwrap();
    let grid = TimeGrid::new(0.01, 100).unwrap();
    let opts = ReferenceOptions {
        n_ref: 8192,
        ..Default::default()
    };
    let law = law_flow(
        &spec,
        &InitialLaw::default(),
        LawFlowKind::ReferenceCloud,
        &grid,
        &opts,
    )
    .unwrap();
    let coarse = PdeGrid {
        points: 201,
        ds: 0.02,
        ..PdeGrid::new(0.02)
    };
    let phi = Observable::tanh();
    let a = limiting_variance(
        &solve_backward_pde(
            model.as_ref(),
            &law,
            &phi,
            &coarse,
            1.0,
            Linearization::default(),
        )
        .unwrap(),
        &law,
        model.as_ref(),
        &InitialLaw::default(),
    )
    .unwrap();
    let b = limiting_variance(
        &solve_backward_pde(
            model.as_ref(),
            &law,
            &phi,
            &coarse.refined(),
            1.0,
            Linearization::default(),
        )
        .unwrap(),
        &law,
        model.as_ref(),
        &InitialLaw::default(),
    )
    .unwrap();
    assert!(a > 0.0 && ((a - b) / b).abs() < 0.01, "{a} vs {b}");
}

#[test]
fn narrow_domain_is_rejected() {
    let (ou, law) = ou_law(1.0, 0.05, 1.0, InitialLaw::default());
    let g = PdeGrid {
        bounds: Some((-3.0, 3.0)),
        ..PdeGrid::new(0.05)
    };
    let err = solve_backward_pde(
        &ou,
        &law,
        &Observable::tanh(),
        &g,
        1.0,
        Linearization::default(),
    )
    .unwrap_err();
    assert!(matches!(err, mflab::Error::Grid(_)));
}

#[test]
fn empirical_variance_properties() {
    assert_eq!(empirical_variance(&[0.4; 10], 16).unwrap().value, 0.0);
    assert!(empirical_variance(&[1.0], 16).is_err());

    let (n, c) = (64usize, 2.5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dist = Normal::new(0.0, (c / n as f64).sqrt()).unwrap();
    let xs: Vec<f64> = (0..20000).map(|_| dist.sample(&mut rng)).collect();
    let e = empirical_variance(&xs, n).unwrap();
    assert!((e.value - c).abs() < 3.0 * e.stderr, "{e:?}");
    let shifted: Vec<f64> = xs.iter().map(|x| x + 7.0).collect();
    let s = empirical_variance(&shifted, n).unwrap();
    assert!((s.value - e.value).abs() < 1e-9 * e.value);
}

#[test]
fn weak_expansion_on_linear_dynamics() {
    let (theta, gamma) = (1.0, 0.0);
    let init = InitialLaw::Gaussian {
        mean: 0.5,
        variance: 1.0,
    };
    let spec = ModelSpec::MeanFieldOu {
        theta,
        gamma,
        sigma: 1.0,
        dim: 1,
    };
    let ou = MeanFieldOu::new(theta, gamma, 1.0).unwrap();
    let grid = TimeGrid::new(0.01, 200).unwrap();
    let law = law_flow(
        &spec,
        &init,
        LawFlowKind::AnalyticDiscrete,
        &grid,
        &ReferenceOptions::default(),
    )
    .unwrap();
    let ts = [0.5, 1.0, 2.0];
    let phi = Observable::coordinate();
    let a1 =
        weak_expansion_coefficient(&ou, &law, &phi, 1, &ts, 16, 4000, &grid, &init, 3).unwrap();
    for e in &a1.alpha {
        assert!(e.value.abs() < 3.0 * e.stderr, "{e:?}");
    }
    let a2 =
        weak_expansion_coefficient(&ou, &law, &phi, 2, &ts, 16, 4000, &grid, &init, 3).unwrap();
    let cont = law_flow(
        &spec,
        &init,
        LawFlowKind::AnalyticGaussian,
        &grid,
        &ReferenceOptions::default(),
    )
    .unwrap();
    for (e, &t) in a2.alpha.iter().zip(&ts) {
        let sol = solve_backward_pde(
            &ou,
            &cont,
            &phi,
            &PdeGrid::new(0.01),
            t,
            Linearization::default(),
        )
        .unwrap();
        let s2 = limiting_variance(&sol, &cont, &ou, &init).unwrap();
        // α₂ = σ² + 2⟨μ_t, φ⟩α₁ with α₁ = 0; Euler bias O(dt) is far below the CI.
        assert!(
            (e.value - s2).abs() < 3.0 * e.stderr + 0.01 * s2,
            "t={t}: {e:?} vs {s2}"
        );
    }
}

#[test]
fn reference_law_is_rejected_for_weak_expansion() {
    let spec = ModelSpec::tanh_interaction();
    let model = spec.build().unwrap();
    let grid = TimeGrid::new(0.05, 4).unwrap();
    let opts = ReferenceOptions {
        n_ref: 256,
        ..Default::default()
    };
    let law = law_flow(
        &spec,
        &InitialLaw::default(),
        LawFlowKind::ReferenceCloud,
        &grid,
        &opts,
    )
    .unwrap();
    let phi: &dyn TestFunction = &Observable::tanh();
    assert!(weak_expansion_coefficient(
        model.as_ref(),
        &law,
        phi,
        1,
        &[0.2],
        4,
        10,
        &grid,
        &InitialLaw::default(),
        0
    )
    .is_err());
}

#[test]
fn gap_and_extrapolation_self_tests() {
    let ts = vec![0.5, 1.0, 2.0];
    let reference = vec![1.0, 1.2, 1.3];
    let mut curve = VarianceCurve {
        t_grid: ts.clone(),
        sigma2_pde: Some(reference.clone()),
        sigma2_mc: Default::default(),
        sigma2_analytic: None,
    };
    for n in [32usize, 64, 128] {
        let est = reference
            .iter()
            .map(|r| Estimate {
                value: r + 3.0 / n as f64,
                stderr: 1e-3,
            })
            .collect();
        curve.sigma2_mc.insert(n, est);
    }
    let gap = variance_gap(&curve).unwrap();
    let fit = gap.fit.unwrap();
    assert!((fit.slope + 1.0).abs() < 1e-12);
    assert!((fit.intercept.exp() - 3.0).abs() < 1e-10);

    let ns = [32usize, 64, 128];
    let est: Vec<Estimate> = ns
        .iter()
        .map(|&n| Estimate {
            value: 1.3 + 3.0 / n as f64,
            stderr: 1e-3,
        })
        .collect();
    let ex = extrapolate(&ns, &est).unwrap();
    assert!((ex.limit.value - 1.3).abs() < 1e-12 && (ex.slope.value - 3.0).abs() < 1e-10);

    for n in [32usize, 64, 128] {
        let est = reference
            .iter()
            .map(|r| Estimate {
                value: *r,
                stderr: 1e-3,
            })
            .collect();
        curve.sigma2_mc.insert(n, est);
    }
    let gap = variance_gap(&curve).unwrap();
    assert!(gap.sup_gap.iter().all(|g| *g == 0.0) && gap.fit.is_none());
}

#[test]
fn flatness_and_agreement() {
    let ts = [4.0, 5.0, 6.0, 7.0, 8.0];
    let flat: Vec<Estimate> = [0.01, -0.02, 0.0, 0.015, -0.01]
        .iter()
        .map(|&v| Estimate {
            value: v,
            stderr: 0.05,
        })
        .collect();
    assert!(flatness(&ts, &flat, 4.0).unwrap().flat);
    let trend: Vec<Estimate> = ts
        .iter()
        .map(|t| Estimate {
            value: 0.5 * t,
            stderr: 0.05,
        })
        .collect();
    assert!(!flatness(&ts, &trend, 4.0).unwrap().flat);
    assert!(agree(
        Estimate {
            value: 1.0,
            stderr: 0.1
        },
        Estimate {
            value: 1.2,
            stderr: 0.1
        },
        2.0
    ));
    assert!(!agree(
        Estimate {
            value: 1.0,
            stderr: 0.01
        },
        Estimate {
            value: 1.2,
            stderr: 0.01
        },
        2.0
    ));
}
