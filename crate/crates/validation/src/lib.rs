//! End-to-end acceptance criteria of the laboratory. Each criterion runs at
//! its stated size and tolerance and reports its sub-checks.

use std::time::Instant;

use mflab::constants::{check_assumptions, SearchSpec, P_SET};
use mflab::experiments::{run_experiment, Check, ExperimentConfig, ExperimentKind, ExperimentResult};
use mflab::malliavin::{
    adjoint_derivatives, all_sources, bump_derivative, double_bump, propagate_first, propagate_second,
    FirstOrderFlow, Source, SourcePair, TangentScheme,
};
use mflab::metrics::{w1_empirical_vs_gaussian, w1_gaussians};
use mflab::model::{ModelSpec, MeanFieldOu, Observable, TanhInteraction};
use mflab::normal;
use mflab::simulate::{simulate_path, InitialLaw, PathRecord, TimeGrid};
use mflab::Result;
use nalgebra::DMatrix;

/// One sub-check of a criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub passed: bool,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub number: u8,
    pub title: &'static str,
    pub lines: Vec<Line>,
    pub seconds: f64,
    pub limit_seconds: f64,
}

impl Outcome {
    pub fn within_time(&self) -> bool {
        self.seconds < self.limit_seconds
    }

    pub fn passed(&self) -> bool {
        self.within_time() && !self.lines.is_empty() && self.lines.iter().all(|l| l.passed)
    }
}

pub struct Criterion {
    pub number: u8,
    pub title: &'static str,
    pub limit_seconds: f64,
    pub run: fn() -> Result<Vec<Line>>,
}

impl Criterion {
    /// Runs the criterion; an error becomes a failed line.
    pub fn evaluate(&self) -> Outcome {
        let start = Instant::now();
        let lines = (self.run)().unwrap_or_else(|e| {
            vec![Line {
                passed: false,
                text: format!("error: {e}"),
            }]
        });
        Outcome {
            number: self.number,
            title: self.title,
            lines,
            seconds: start.elapsed().as_secs_f64(),
            limit_seconds: self.limit_seconds,
        }
    }
}

pub const CRITERIA: [Criterion; 10] = [
    Criterion { number: 1, title: "Malliavin oracle equivalence", limit_seconds: 10.0, run: malliavin_oracle },
    Criterion { number: 2, title: "second-derivative vanishing", limit_seconds: 5.0, run: second_vanishing },
    Criterion { number: 3, title: "bump consistency", limit_seconds: 60.0, run: bump_consistency },
    Criterion { number: 4, title: "CLT rate", limit_seconds: 900.0, run: clt_rate },
    Criterion { number: 5, title: "decay rates", limit_seconds: 300.0, run: decay_rates },
    Criterion { number: 6, title: "variance triangulation", limit_seconds: 600.0, run: variance_triangulation },
    Criterion { number: 7, title: "weak-expansion boundedness", limit_seconds: 600.0, run: weak_expansion },
    Criterion { number: 8, title: "Poincaré inequality check", limit_seconds: 1200.0, run: poincare },
    Criterion { number: 9, title: "constants engine", limit_seconds: 1.0, run: constants_engine },
    Criterion { number: 10, title: "metric exactness", limit_seconds: 1.0, run: metric_exactness },
];

fn line(passed: bool, text: impl Into<String>) -> Line {
    Line { passed, text: text.into() }
}

fn from_check(c: &Check) -> Line {
    line(c.passed, format!("{}: {}", c.name, c.detail))
}

fn ou_default() -> MeanFieldOu {
    MeanFieldOu::new(1.0, 0.05, 1.0).expect("valid parameters")
}

fn path(model: &dyn mflab::model::CoefficientModel, n: usize, dt: f64, steps: usize, seed: u64) -> Result<PathRecord> {
    let grid = TimeGrid::new(dt, steps)?;
    simulate_path(model, n, &grid, &InitialLaw::default(), seed, 0)
}

/// `A` of the coupled linear tangent system `dY = A Y du` of the OU model.
fn ou_generator(ou: &MeanFieldOu, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| ou.gamma / n as f64 - if i == j { ou.theta } else { 0.0 })
}

fn malliavin_oracle() -> Result<Vec<Line>> {
    let (n, steps, dt) = (8, 200, 1e-3);
    let ou = ou_default();
    let p = path(&ou, n, dt, steps, 101)?;
    let s_grid: Vec<usize> = (0..steps).collect();
    let a = ou_generator(&ou, n);
    let mut out = Vec::new();

    let mut flow = propagate_first(&p, &ou, &s_grid, TangentScheme::ExponentialEuler)?;
    let mut worst = 0.0f64;
    let mut entries = 0usize;
    for u in [steps / 2, steps] {
        flow.advance_to(u)?;
        let f = flow.field();
        for (k, s) in f.sources.iter().enumerate().filter(|(_, s)| s.step <= u) {
            let e = (&a * ((u - s.step) as f64 * dt)).exp();
            for i in 0..n {
                let want = ou.sigma * e[(i, s.particle)];
                worst = worst.max((f.value(k, i)[0] - want).abs() / want.abs());
                entries += 1;
            }
        }
    }
    out.push(line(
        worst <= 1e-6,
        format!("exponential tangent vs exp(A(u−s))σ: max relative error {worst:.2e} over {entries} entries (≤ 1e-6)"),
    ));

    // The default Euler tangent is the exact derivative of the Euler map.
    let mut flow = propagate_first(&p, &ou, &s_grid, TangentScheme::Euler)?;
    flow.advance_to(steps)?;
    let f = flow.field();
    let step = DMatrix::identity(n, n) + &a * dt;
    let mut worst = 0.0f64;
    for (k, s) in f.sources.iter().enumerate() {
        let prop = step.pow((steps - s.step - 1) as u32);
        for i in 0..n {
            let want = ou.sigma * prop[(i, s.particle)];
            worst = worst.max((f.value(k, i)[0] - want).abs() / want.abs());
        }
    }
    out.push(line(
        worst <= 1e-6,
        format!("Euler tangent vs (I + A dt)^(u−s−dt)σ: max relative error {worst:.2e} (≤ 1e-6)"),
    ));
    Ok(out)
}

fn second_vanishing() -> Result<Vec<Line>> {
    let (n, steps, dt) = (8, 200, 1e-3);
    let ou = ou_default();
    let p = path(&ou, n, dt, steps, 202)?;
    let srcs = all_sources(&[0, 50, 100, 150], n, 1);
    let pairs: Vec<SourcePair> = srcs
        .iter()
        .flat_map(|a| srcs.iter().map(move |b| SourcePair::new(*a, *b)))
        .collect();
    let first = FirstOrderFlow::new(&p, &ou, srcs.clone(), TangentScheme::Euler)?;
    let mut flow = propagate_second(first, pairs)?;
    let mut nonzero = 0usize;
    let mut total = 0usize;
    for u in 0..=steps {
        if u > 0 {
            flow.advance()?;
        }
        let f = flow.field()?;
        nonzero += f.values.iter().filter(|v| **v != 0.0).count();
        total += f.values.len();
    }
    let mut out = vec![line(
        nonzero == 0,
        format!("forward D²X: {nonzero} nonzero of {total} entries"),
    )];
    let d = adjoint_derivatives(&p, &ou, &Observable::coordinate(), steps as f64 * dt, 10, true)?;
    let m = d.d2f.expect("requested");
    let nz = m.iter().filter(|v| **v != 0.0).count();
    out.push(line(
        nz == 0,
        format!("adjoint D²F of the coordinate average: {nz} nonzero of {} entries", m.len()),
    ));
    Ok(out)
}

/// Largest errors of the first- and second-order tangents against increment
/// bumps of size `h`.
fn bump_errors(h: f64) -> Result<(f64, f64)> {
    let m = TanhInteraction::default();
    let (n, steps) = (4, 100);
    let p = path(&m, n, 0.01, steps, 303)?;
    let a = Source { step: 20, particle: 1, noise: 0 };
    let b = Source { step: 55, particle: 2, noise: 0 };
    let first = FirstOrderFlow::new(&p, &m, vec![a, b], TangentScheme::Euler)?;
    let mut flow = propagate_second(first, vec![SourcePair::new(a, b)])?;
    flow.advance_to(steps)?;
    let t1 = flow.first().field();
    let t2 = flow.field()?;
    let fd = bump_derivative(&m, &p, a, h, steps)?;
    let dd = double_bump(&m, &p, a, b, h, h, steps)?;
    let e1 = (0..n).map(|i| (fd[i] - t1.value(0, i)[0]).abs()).fold(0.0, f64::max);
    let e2 = (0..n).map(|i| (dd[i] - t2.value(0, i)[0]).abs()).fold(0.0, f64::max);
    Ok((e1, e2))
}

fn bump_consistency() -> Result<Vec<Line>> {
    let (a1, a2) = bump_errors(1e-3)?;
    let (b1, b2) = bump_errors(5e-4)?;
    let (r1, r2) = (a1 / b1, a2 / b2);
    Ok(vec![
        line(
            (r1 - 2.0).abs() <= 0.2,
            format!("first order: errors {a1:.3e} → {b1:.3e}, ratio {r1:.3} (2 ± 0.2)"),
        ),
        line(
            (r2 - 2.0).abs() <= 0.2,
            format!("second order: errors {a2:.3e} → {b2:.3e}, ratio {r2:.3} (2 ± 0.2)"),
        ),
    ])
}

fn experiment(kind: ExperimentKind, seed: u64, edit: impl FnOnce(&mut ExperimentConfig)) -> Result<ExperimentResult> {
    let mut c = ExperimentConfig::defaults(kind, seed);
    edit(&mut c);
    run_experiment(&c)
}

fn all_checks(r: &ExperimentResult) -> Vec<Line> {
    r.verdicts.iter().map(from_check).collect()
}

fn clt_rate() -> Result<Vec<Line>> {
    let r = experiment(ExperimentKind::Rate, 4, |c| {
        c.model = ModelSpec::mean_field_ou(1.0, 0.05, 1.0);
        c.phi = Observable::tanh();
        c.n_values = vec![16, 32, 64, 128, 256];
        c.t_grid = vec![0.5, 1.0, 2.0, 4.0, 8.0];
        c.replicates = 10_000;
    })?;
    let mut out = all_checks(&r);
    let sup = r.table("rate")?;
    for row in &sup.rows {
        out.push(line(
            true,
            format!("N = {}: sup W1 {:.5} (se {:.5}), noise floor {:.5}", row[0], row[1], row[2], row[4]),
        ));
    }
    Ok(out)
}

fn named(r: &ExperimentResult, name: &str, prefix: &str) -> Line {
    match r.check(name) {
        Some(c) => line(c.passed, format!("{prefix}{}: {}", c.name, c.detail)),
        None => line(false, format!("{prefix}{name}: missing")),
    }
}

fn decay_rates() -> Result<Vec<Line>> {
    let ou = experiment(ExperimentKind::Decay, 5, |c| {
        c.n_values = vec![8];
        c.replicates = 16;
    })?;
    let tanh = experiment(ExperimentKind::Decay, 6, |c| {
        c.model = ModelSpec::tanh_interaction();
        c.n_values = vec![8];
        c.replicates = 64;
    })?;
    let mut out = vec![
        named(&ou, "first_order_rate_theta", "OU "),
        named(&ou, "first_order_bound", "OU "),
        named(&tanh, "first_order_envelope", "tanh "),
    ];
    // Reported, not part of the criterion.
    let graded = [(&ou, "first_order_rate_theta"), (&ou, "first_order_bound"), (&tanh, "first_order_envelope")];
    for (tag, r) in [("OU ", &ou), ("tanh ", &tanh)] {
        for c in &r.verdicts {
            if graded.iter().any(|(g, name)| std::ptr::eq(*g, r) && *name == c.name) {
                continue;
            }
            let state = if c.passed { "holds" } else { "does not hold" };
            out.push(line(true, format!("{tag}(informative) {}: {} [{state}]", c.name, c.detail)));
        }
    }
    Ok(out)
}

fn variance_triangulation() -> Result<Vec<Line>> {
    let r = experiment(ExperimentKind::Variance, 7, |c| {
        c.n_values = vec![32, 64, 128];
        c.t_grid = vec![0.5, 1.0, 2.0, 5.0];
    })?;
    Ok(all_checks(&r))
}

fn weak_expansion() -> Result<Vec<Line>> {
    let r = experiment(ExperimentKind::WeakExpansion, 8, |c| {
        c.n_values = vec![64, 128];
    })?;
    Ok(all_checks(&r))
}

fn poincare() -> Result<Vec<Line>> {
    let r = experiment(ExperimentKind::Poincare, 9, |c| {
        c.model = ModelSpec::tanh_interaction();
        c.n_values = vec![4, 8, 16];
    })?;
    let mut out = all_checks(&r);
    for n in &r.notes {
        out.push(line(true, format!("note: {n}")));
    }
    Ok(out)
}

fn pw(x: f64, e: f64) -> f64 {
    (e * x.ln()).exp()
}

/// Hand-derived values for OU(θ = 1, γ = 0.05, Σ = 1): κ_p = 2θ, M_σ = 0.
fn oracle_omega() -> f64 {
    P_SET
        .iter()
        .map(|&p| {
            let p = f64::from(p);
            1.0 - pw(2.0, (p - 1.0) / p) * 0.05 - (p - 1.0) / 2.0 * pw(2.0, 2.0 * (p - 1.0) / p) * 0.0025
        })
        .fold(f64::INFINITY, f64::min)
}

fn oracle_eta(p: f64, kappa: f64, gamma: f64) -> f64 {
    let xi = (p - 1.0) * pw(6.0 * (p - 1.0) * (p - 2.0) / kappa, (p - 2.0) / 2.0);
    let lambda = pw(pw(12.0 * (p - 1.0) / kappa, p - 1.0) + xi, 1.0 / p);
    pw(2.0, 1.0 / p) * lambda * gamma * pw(8.0 / (p * kappa), 1.0 / p)
}

fn constants_engine() -> Result<Vec<Line>> {
    let ou = ou_default();
    let r = check_assumptions(&ou, &SearchSpec::default())?;
    let close = |a: Option<f64>, b: f64| a.is_some_and(|a| (a - b).abs() <= 1e-10);
    let mut out = Vec::new();
    let kappa_ok = P_SET.iter().all(|p| close(r.kappa.get(p).copied(), 2.0));
    out.push(line(kappa_ok, format!("κ_p = 2 for p in {P_SET:?}: {:?}", r.kappa)));
    out.push(line(close(r.gamma, 0.05), format!("γ = {:?} (0.05)", r.gamma)));
    out.push(line(close(r.m_sigma, 0.0), format!("M_σ = {:?} (0)", r.m_sigma)));
    let w = oracle_omega();
    out.push(line(close(r.omega, w), format!("ω = {:?} (oracle {w:.12})", r.omega)));
    for p in [4u32, 8] {
        let e = r.eta.get(&p).copied();
        let want = oracle_eta(f64::from(p), 2.0, 0.05);
        out.push(line(close(e, want), format!("η_{p} = {e:?} (oracle {want:.12})")));
        out.push(line(e.is_some_and(|e| e < 1.0), format!("η_{p} < 1")));
    }
    out.push(line(close(r.omega_hat, 0.25), format!("ω̂ = {:?} (0.25)", r.omega_hat)));
    Ok(out)
}

fn metric_exactness() -> Result<Vec<Line>> {
    let w = w1_gaussians(1.0, 4.0)?;
    let want = (2.0 / std::f64::consts::PI).sqrt();
    let n = 10_000;
    let q: Vec<f64> = (0..n).map(|i| normal::quantile((i as f64 + 0.5) / n as f64)).collect();
    let e = w1_empirical_vs_gaussian(&q, 1.0)?;
    Ok(vec![
        line((w - want).abs() <= 1e-12, format!("W1(N(0,1), N(0,4)) = {w:.15} vs √(2/π), error {:.1e}", (w - want).abs())),
        line(e < 5e-4, format!("W1 of {n} exact Gaussian quantiles = {e:.3e} (< 5e-4)")),
    ])
}
