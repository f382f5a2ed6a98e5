use mflab::malliavin::*;
use mflab::model::{CoefficientModel, MeanFieldOu, Observable, TanhInteraction, TestFunction};
use mflab::simulate::{simulate_path, InitialLaw, PathRecord, TimeGrid};
use nalgebra::DMatrix;

fn path(model: &dyn CoefficientModel, n: usize, dt: f64, steps: usize, seed: u64) -> PathRecord {
    let grid = TimeGrid::new(dt, steps).unwrap();
    simulate_path(model, n, &grid, &InitialLaw::default(), seed, 0).unwrap()
}

fn ou_generator(n: usize, theta: f64, gamma: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        gamma / n as f64 - if i == j { theta } else { 0.0 }
    })
}

#[test]
fn exponential_scheme_matches_matrix_exponential_on_ou() {
    let (n, steps, dt) = (8, 200, 1e-3);
    let ou = MeanFieldOu::new(1.0, 0.05, 0.7).unwrap();
    let p = path(&ou, n, dt, steps, 3);
    let mut flow = propagate_first(&p, &ou, &[0, 50], TangentScheme::ExponentialEuler).unwrap();
    flow.advance_to(steps).unwrap();
    let field = flow.field();
    let a = ou_generator(n, 1.0, 0.05);
    for (k, src) in field.sources.iter().enumerate() {
        let tau = (steps - src.step) as f64 * dt;
        let e = (&a * tau).exp();
        for i in 0..n {
            let want = 0.7 * e[(i, src.particle)];
            let got = field.value(k, i)[0];
            assert!(
                (got - want).abs() <= 1e-10 * want.abs().max(1e-3),
                "{got} vs {want}"
            );
        }
    }
}

#[test]
fn euler_tangent_matches_discrete_propagator_on_ou() {
    let (n, steps, dt) = (5, 40, 0.01);
    let ou = MeanFieldOu::new(1.2, 0.3, 1.0).unwrap();
    let p = path(&ou, n, dt, steps, 4);
    let mut flow = propagate_first(&p, &ou, &[7], TangentScheme::Euler).unwrap();
    let step = DMatrix::identity(n, n) + ou_generator(n, 1.2, 0.3) * dt;
    flow.advance_to(7).unwrap();
    let f = flow.field();
    for (k, s) in f.sources.iter().enumerate() {
        for i in 0..n {
            let want = if i == s.particle { 1.0 } else { 0.0 };
            assert_eq!(f.value(k, i)[0], want);
        }
    }
    flow.advance_to(steps).unwrap();
    let f = flow.field();
    let prop = step.pow((steps - 8) as u32);
    for (k, s) in f.sources.iter().enumerate() {
        for i in 0..n {
            let want = prop[(i, s.particle)];
            assert!((f.value(k, i)[0] - want).abs() < 1e-13);
        }
    }
}

#[test]
fn decoupled_particles_have_exactly_zero_cross_tangents() {
    let ou = MeanFieldOu::new(1.0, 0.0, 1.0).unwrap();
    let p = path(&ou, 4, 0.01, 30, 1);
    let mut flow = propagate_first(&p, &ou, &[0, 10], TangentScheme::Euler).unwrap();
    for u in 0..=30 {
        if u > 0 {
            flow.advance().unwrap();
        }
        let f = flow.field();
        for (k, s) in f.sources.iter().enumerate() {
            for i in 0..4 {
                if i != s.particle || u < s.step {
                    assert_eq!(f.value(k, i)[0], 0.0);
                }
            }
        }
    }
}

#[test]
fn initial_condition_equals_sigma_on_tanh() {
    let m = TanhInteraction::default();
    let p = path(&m, 3, 0.05, 10, 2);
    let mut flow = propagate_first(&p, &m, &[4], TangentScheme::Euler).unwrap();
    flow.advance_to(4).unwrap();
    let f = flow.field();
    for (k, s) in f.sources.iter().enumerate() {
        let mut sig = [0.0];
        let cloud = &p.snapshots[4];
        m.diffusion(cloud.particle(s.particle), cloud, &mut sig);
        for i in 0..3 {
            let want = if i == s.particle { sig[0] } else { 0.0 };
            assert_eq!(f.value(k, i)[0], want);
        }
    }
}

#[test]
fn second_order_vanishes_identically_on_ou() {
    let ou = MeanFieldOu::new(1.0, 0.05, 1.0).unwrap();
    let p = path(&ou, 4, 0.05, 12, 5);
    let srcs = all_sources(&[0, 3, 6], 4, 1);
    let pairs: Vec<SourcePair> = srcs
        .iter()
        .flat_map(|a| srcs.iter().map(move |b| SourcePair::new(*a, *b)))
        .collect();
    let first = FirstOrderFlow::new(&p, &ou, srcs.clone(), TangentScheme::Euler).unwrap();
    let mut flow = propagate_second(first, pairs).unwrap();
    for _ in 0..12 {
        let f = flow.field().unwrap();
        assert!(f.values.iter().all(|v| *v == 0.0));
        flow.advance().unwrap();
    }
    let f = flow.field().unwrap();
    assert!(f.values.iter().all(|v| *v == 0.0));
}

#[test]
fn missing_first_order_coverage_is_a_dependency_error() {
    let m = TanhInteraction::default();
    let p = path(&m, 2, 0.1, 4, 0);
    let srcs = all_sources(&[0], 2, 1);
    let first = FirstOrderFlow::new(&p, &m, srcs.clone(), TangentScheme::Euler).unwrap();
    let other = Source {
        step: 2,
        particle: 0,
        noise: 0,
    };
    let err = propagate_second(first, vec![SourcePair::new(srcs[0], other)])
        .err()
        .unwrap();
    assert!(matches!(err, mflab::Error::MissingDependency(_)));
}

fn bump_errors(h: f64) -> (f64, f64) {
    let m = TanhInteraction::default();
    let p = path(&m, 4, 0.01, 100, 9);
    let srcs = vec![
        Source {
            step: 20,
            particle: 1,
            noise: 0,
        },
        Source {
            step: 55,
            particle: 1,
            noise: 0,
        },
    ];
    let first = FirstOrderFlow::new(&p, &m, srcs.clone(), TangentScheme::Euler).unwrap();
    let pair = SourcePair::new(srcs[0], srcs[1]);
    let mut flow = propagate_second(first, vec![pair]).unwrap();
    flow.advance_to(100).unwrap();
    let t1 = flow.first().field();
    let t2 = flow.field().unwrap();
    let fd = bump_derivative(&m, &p, srcs[0], h, 100).unwrap();
    let e1 = (0..4)
        .map(|i| (fd[i] - t1.value(0, i)[0]).abs())
        .fold(0.0, f64::max);
    let dd = double_bump(&m, &p, srcs[0], srcs[1], h, h, 100).unwrap();
    let e2 = (0..4)
        .map(|i| (dd[i] - t2.value(0, i)[0]).abs())
        .fold(0.0, f64::max);
    (e1, e2)
}

#[test]
fn tangents_agree_with_increment_bumps_at_first_order_in_h() {
    let (a1, a2) = bump_errors(1e-3);
    let (b1, b2) = bump_errors(5e-4);
    assert!(a1 < 1e-3 && a2 < 1e-2, "{a1} {a2}");
    assert!((a1 / b1 - 2.0).abs() < 0.2, "first-order ratio {}", a1 / b1);
    assert!(
        (a2 / b2 - 2.0).abs() < 0.2,
        "second-order ratio {}",
        a2 / b2
    );
}

#[test]
fn second_order_is_symmetric_in_its_directions() {
    let m = TanhInteraction::default();
    let p = path(&m, 3, 0.05, 16, 11);
    let srcs = all_sources(&[1, 5, 9], 3, 1);
    let pairs: Vec<SourcePair> = srcs
        .iter()
        .flat_map(|a| srcs.iter().map(move |b| SourcePair::new(*a, *b)))
        .collect();
    let first = FirstOrderFlow::new(&p, &m, srcs.clone(), TangentScheme::Euler).unwrap();
    let mut flow = propagate_second(first, pairs.clone()).unwrap();
    flow.advance_to(16).unwrap();
    let f = flow.field().unwrap();
    for (a, pa) in pairs.iter().enumerate() {
        let b = pairs.iter().position(|q| *q == pa.swapped()).unwrap();
        for i in 0..3 {
            let (x, y) = (f.value(a, i)[0], f.value(b, i)[0]);
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }
}

#[test]
fn adjoint_route_matches_forward_chain_rule() {
    let m = TanhInteraction::default();
    let (n, steps, dt) = (3, 10, 0.05);
    let p = path(&m, n, dt, steps, 21);
    let phi = Observable::tanh();
    let t = steps as f64 * dt;
    let adj = adjoint_derivatives(&p, &m, &phi, t, 1, true).unwrap();

    let srcs = adj.cells.clone();
    let pairs: Vec<SourcePair> = srcs
        .iter()
        .flat_map(|a| srcs.iter().map(move |b| SourcePair::new(*a, *b)))
        .collect();
    let first = FirstOrderFlow::new(&p, &m, srcs.clone(), TangentScheme::Euler).unwrap();
    let mut flow = propagate_second(first, pairs).unwrap();
    flow.advance_to(steps).unwrap();
    let tf1 = flow.first().field();
    let tf2 = flow.field().unwrap();
    let (df, d2f) = assemble_df_d2f(&tf1, Some(&tf2), &p, &phi, t).unwrap();
    let d2f = d2f.unwrap();
    let c = srcs.len();
    for k in 0..c {
        assert!(
            (df[k] - adj.df[k]).abs() < 1e-13,
            "DF {k}: {} vs {}",
            df[k],
            adj.df[k]
        );
    }
    let mat = adj.d2f.unwrap();
    for r in 0..c {
        for s in 0..c {
            let (x, y) = (d2f[r * c + s], mat[(r, s)]);
            assert!((x - y).abs() < 1e-12, "D2F ({r},{s}): {x} vs {y}");
        }
    }
}

#[test]
fn constant_observable_has_zero_derivatives() {
    let m = TanhInteraction::default();
    let p = path(&m, 3, 0.1, 5, 2);
    let phi = Observable::Constant { value: 2.5 };
    let f = adjoint_derivatives(&p, &m, &phi, 0.5, 1, true).unwrap();
    assert!(f.df.iter().all(|v| *v == 0.0));
    assert!(f.d2f.unwrap().iter().all(|v| *v == 0.0));
}

#[test]
fn single_ou_particle_has_exponential_df() {
    let (theta, sigma, dt, steps) = (0.8, 1.3, 1e-3, 500);
    let ou = MeanFieldOu::new(theta, 0.0, sigma).unwrap();
    let p = path(&ou, 1, dt, steps, 1);
    let s_grid: Vec<usize> = (0..steps).step_by(50).collect();
    let mut flow = propagate_first(&p, &ou, &s_grid, TangentScheme::ExponentialEuler).unwrap();
    flow.advance_to(steps).unwrap();
    let phi = Observable::coordinate();
    let (df, _) = assemble_df_d2f(&flow.field(), None, &p, &phi, 0.5).unwrap();
    for (k, s) in s_grid.iter().enumerate() {
        let want = sigma * (-theta * (0.5 - *s as f64 * dt)).exp();
        assert!((df[k] - want).abs() < 1e-12);
    }
}

#[test]
fn df_is_linear_in_the_observable() {
    let m = TanhInteraction::default();
    let p = path(&m, 4, 0.05, 8, 7);
    let (a, b) = (1.7, -0.4);
    let phi = Observable::Linear {
        offset: 0.3,
        terms: vec![(a, Observable::tanh()), (b, Observable::cos())],
    };
    let f = adjoint_derivatives(&p, &m, &phi, 0.4, 1, true).unwrap();
    let f1 = adjoint_derivatives(&p, &m, &Observable::tanh(), 0.4, 1, true).unwrap();
    let f2 = adjoint_derivatives(&p, &m, &Observable::cos(), 0.4, 1, true).unwrap();
    for k in 0..f.df.len() {
        assert!((f.df[k] - (a * f1.df[k] + b * f2.df[k])).abs() < 1e-14);
    }
    let (m0, m1, m2) = (f.d2f.unwrap(), f1.d2f.unwrap(), f2.d2f.unwrap());
    let lin = m1 * a + m2 * b;
    assert!((m0 - lin).amax() < 1e-14);
}

fn tanh_samples(
    n: usize,
    steps: usize,
    dt: f64,
    reps: u64,
    phi: &dyn TestFunction,
) -> Vec<FunctionalDerivatives> {
    let m = TanhInteraction::default();
    let grid = TimeGrid::new(dt, steps).unwrap();
    (0..reps)
        .map(|r| {
            let p = simulate_path(&m, n, &grid, &InitialLaw::default(), 77, r).unwrap();
            adjoint_derivatives(&p, &m, phi, steps as f64 * dt, 1, true).unwrap()
        })
        .collect()
}

#[test]
fn delta_matches_nested_loop_evaluation() {
    let (n, steps, dt) = (2, 4, 0.1);
    let samples = tanh_samples(n, steps, dt, 12, &Observable::tanh());
    let w = dt;
    let pf = compute_delta(
        &samples,
        w,
        DeltaOptions {
            groups: 4,
            ..Default::default()
        },
    )
    .unwrap();
    let r = samples.len() as f64;
    let idx = |k: usize, j: usize| k * n + j;
    let mut want = 0.0;
    for kx in 0..steps {
        for jx in 0..n {
            for ky in 0..steps {
                for jy in 0..n {
                    let (x, y) = (idx(kx, jx), idx(ky, jy));
                    let mut ek2 = 0.0;
                    let mut edd = 0.0;
                    for s in &samples {
                        let m = s.d2f.as_ref().unwrap();
                        let mut k = 0.0;
                        for kz in 0..steps {
                            for jz in 0..n {
                                let z = idx(kz, jz);
                                k += m[(x, z)] * m[(z, y)] * w;
                            }
                        }
                        ek2 += k * k / r;
                        edd += s.df[x].powi(2) * s.df[y].powi(2) / r;
                    }
                    want += w * w * ek2.sqrt() * edd.sqrt();
                }
            }
        }
    }
    assert!(
        (pf.delta - want).abs() <= 1e-12 * want,
        "{} vs {want}",
        pf.delta
    );
    assert!(pf.delta > 0.0 && pf.stderr.is_finite());
}

#[test]
fn delta_scales_quartically_with_the_observable() {
    let phi = Observable::tanh();
    let c = 3.0;
    let scaled = Observable::Linear {
        offset: 0.0,
        terms: vec![(c, Observable::tanh())],
    };
    let a = compute_delta(
        &tanh_samples(3, 6, 0.1, 8, &phi),
        0.1,
        DeltaOptions {
            groups: 4,
            ..Default::default()
        },
    )
    .unwrap();
    let b = compute_delta(
        &tanh_samples(3, 6, 0.1, 8, &scaled),
        0.1,
        DeltaOptions {
            groups: 4,
            ..Default::default()
        },
    )
    .unwrap();
    assert!((b.delta / a.delta - c.powi(4)).abs() < 1e-9);
}

#[test]
fn delta_vanishes_for_a_linear_model() {
    let ou = MeanFieldOu::new(1.0, 0.05, 1.0).unwrap();
    let grid = TimeGrid::new(0.1, 5).unwrap();
    let samples: Vec<_> = (0..4)
        .map(|r| {
            let p = simulate_path(&ou, 3, &grid, &InitialLaw::default(), 1, r).unwrap();
            adjoint_derivatives(&p, &ou, &Observable::coordinate(), 0.5, 1, true).unwrap()
        })
        .collect();
    let pf = compute_delta(
        &samples,
        0.1,
        DeltaOptions {
            groups: 2,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(pf.delta, 0.0);
}

#[test]
fn sampled_coverage_is_unbiased_and_flags_weak_designs() {
    let samples = tanh_samples(3, 8, 0.1, 10, &Observable::tanh());
    let full = compute_delta(
        &samples,
        0.1,
        DeltaOptions {
            groups: 5,
            ..Default::default()
        },
    )
    .unwrap();
    let opts = DeltaOptions {
        coverage: Coverage::Sampled {
            cells: 12,
            subsets: 40,
            seed: 5,
        },
        groups: 5,
        ..Default::default()
    };
    let sampled = compute_delta(&samples, 0.1, opts).unwrap();
    let sd = sampled.estimator_variance.sqrt();
    assert!(
        (sampled.delta - full.delta).abs() < 4.0 * sd,
        "{} {} {sd}",
        sampled.delta,
        full.delta
    );

    let single = DeltaOptions {
        coverage: Coverage::Sampled {
            cells: 4,
            subsets: 1,
            seed: 5,
        },
        groups: 5,
        ..Default::default()
    };
    assert!(compute_delta(&samples, 0.1, single)
        .unwrap()
        .warning
        .is_some());
    let strict = DeltaOptions {
        strict: true,
        ..single
    };
    assert!(matches!(
        compute_delta(&samples, 0.1, strict),
        Err(mflab::Error::InsufficientCoverage(_))
    ));
}

#[test]
fn vidotto_bound_examples() {
    use std::f64::consts::PI;
    assert_eq!(vidotto_bound(0.0, 1.0).unwrap(), 0.0);
    assert!((vidotto_bound(PI * 2.0 / 8.0, 2.0).unwrap() - 1.0).abs() < 1e-15);
    assert!((vidotto_bound(2.0, 1.0).unwrap() - (16.0 / PI).sqrt()).abs() < 1e-15);
    assert!(((16.0f64 / PI).sqrt() - 2.2568).abs() < 1e-4);
    assert!(matches!(
        vidotto_bound(1.0, 0.0),
        Err(mflab::Error::DegenerateVariance(_))
    ));
}

fn curve(lags: &[f64], f: impl Fn(f64) -> f64) -> MomentCurve {
    MomentCurve {
        p: 4.0,
        lags: lags.to_vec(),
        moments: lags.iter().map(|&l| f(l)).collect(),
        stderr: vec![0.0; lags.len()],
    }
}

#[test]
fn decay_fit_recovers_exact_exponentials() {
    let lags = [0.0, 0.5, 1.0, 1.5, 2.0, 3.0];
    let c = curve(&lags, |l| 2.0 * (-0.9 * l).exp());
    let fit = fit_decay(&c, DecayTarget::First { kappa_p: 2.0 }, 0.0).unwrap();
    assert!((fit.rate - 0.9).abs() < 1e-12);
    assert!(fit.bound_holds);

    let flat = curve(&lags, |_| 1.0);
    let fit = fit_decay(&flat, DecayTarget::First { kappa_p: 2.0 }, 0.01).unwrap();
    assert!(fit.slope.abs() < 1e-14 && !fit.bound_holds);

    let bad = curve(&lags, |l| if l > 2.0 { 0.0 } else { 1.0 });
    assert!(fit_decay(&bad, DecayTarget::Second { omega_hat: 0.25 }, 0.0).is_err());
    assert!(fit_decay(
        &curve(&lags[..3], |_| 1.0),
        DecayTarget::First { kappa_p: 2.0 },
        0.0
    )
    .is_err());
}

#[test]
fn ou_decay_rates_of_diagonal_and_averaged_tangents() {
    let (theta, gamma, n) = (1.0, 0.4, 8usize);
    let a = ou_generator(n, theta, gamma);
    let lags = [0.5, 1.0, 2.0, 3.0, 4.0];
    // Particle average of a tangent column: projection on 𝟙, eigenvalue γ − θ.
    let avg = curve(&lags, |l| (&a * l).exp().column(0).sum() / n as f64);
    let fit = fit_decay(&avg, DecayTarget::First { kappa_p: 2.0 }, 0.0).unwrap();
    assert!((fit.rate - (theta - gamma)).abs() < 1e-10, "{}", fit.rate);

    let ou = MeanFieldOu::new(theta, 0.0, 1.0).unwrap();
    let p = path(&ou, 2, 1e-3, 4000, 1);
    let mut flow = propagate_first(&p, &ou, &[0], TangentScheme::ExponentialEuler).unwrap();
    let mut moments = Vec::new();
    for &l in &lags {
        flow.advance_to((l * 1000.0).round() as usize).unwrap();
        moments.push(flow.field().value(0, 0)[0]);
    }
    let c = MomentCurve {
        p: 4.0,
        lags: lags.to_vec(),
        moments,
        stderr: vec![0.0; 5],
    };
    let fit = fit_decay(
        &c,
        DecayTarget::First {
            kappa_p: 2.0 * theta,
        },
        0.0,
    )
    .unwrap();
    assert!((fit.rate - theta).abs() < 0.01 * theta);
}

#[test]
fn envelope_anchored_at_first_lag() {
    let lags = [0.5, 1.0, 2.0, 4.0];
    let c = curve(&lags, |l| (-0.5 * l).exp());
    assert!(envelope_check(&c, 0.25, 2.0).unwrap().holds);
    assert!(!envelope_check(&c, 1.0, 2.0).unwrap().holds);
}
