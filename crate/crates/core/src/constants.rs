//! Stability constants and numerically checked assumption predicates.
//!
//! Global suprema and infima are estimated by seeded random search over a box
//! of states and over clouds taken from the model's own particle flow, followed
//! by compass-search refinement of the best candidates. The certification is
//! therefore restricted to the searched domain, which the report records.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    eval_coefficients, eval_first_derivatives, eval_second_derivatives, Cloud, CoefficientModel,
};
use crate::simulate::{replicate_rng, simulate_path, InitialLaw, TimeGrid};

/// Exponents at which dissipativity is required.
pub const P_SET: [u32; 7] = [2, 4, 6, 8, 10, 12, 14];

/// Relative tolerance within which sampled estimates must agree with
/// model-declared constants.
pub const DECLARATION_TOLERANCE: f64 = 1e-6;

/// Search domain and effort for the sampled sups and infs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpec {
    pub seed: u64,
    /// Random candidates per cloud and per quantity.
    pub samples: usize,
    /// States are drawn from `[−half_width, half_width]^d`.
    pub half_width: f64,
    pub cloud_size: usize,
    /// Times of the particle flow at which clouds are taken.
    pub cloud_times: Vec<f64>,
    pub dt: f64,
    pub initial: InitialLaw,
    /// Number of best random candidates refined by compass search.
    pub refine: usize,
}

impl Default for SearchSpec {
    fn default() -> Self {
        SearchSpec {
            seed: 20_240_917,
            samples: 2048,
            half_width: 10.0,
            cloud_size: 64,
            cloud_times: vec![0.0, 0.5, 1.0, 2.0, 5.0],
            dt: 0.01,
            initial: InitialLaw::default(),
            refine: 6,
        }
    }
}

impl SearchSpec {
    fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.cloud_size == 0 || self.cloud_times.is_empty() {
            return Err(Error::invalid(
                "search needs samples, a cloud size and cloud times",
            ));
        }
        if !(self.half_width > 0.0) || !self.half_width.is_finite() {
            return Err(Error::invalid("search half-width must be positive"));
        }
        if !(self.dt > 0.0) || self.cloud_times.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::invalid("cloud times must be ≥ 0 and dt > 0"));
        }
        self.initial.validate()
    }
}

/// Clouds from the model's particle flow at the requested times. Falls back
/// to the initial cloud if the flow leaves the finite range.
fn search_clouds(model: &dyn CoefficientModel, spec: &SearchSpec) -> Result<(Vec<Cloud>, String)> {
    let horizon = spec.cloud_times.iter().cloned().fold(0.0, f64::max);
    let steps = (horizon / spec.dt).round() as usize;
    let grid = TimeGrid::new(spec.dt, steps.max(1))?;
    match simulate_path(model, spec.cloud_size, &grid, &spec.initial, spec.seed, 0) {
        Ok(path) => {
            let clouds = spec
                .cloud_times
                .iter()
                .map(|&t| path.snapshots[((t / spec.dt).round() as usize).min(steps)].clone())
                .collect();
            Ok((clouds, "particle flow".into()))
        }
        Err(Error::Diverged { .. }) => {
            let path = simulate_path(
                model,
                spec.cloud_size,
                &TimeGrid::new(spec.dt, 1)?,
                &spec.initial,
                spec.seed,
                0,
            )?;
            Ok((
                vec![path.snapshots[0].clone()],
                "initial law (particle flow diverged)".into(),
            ))
        }
        Err(e) => Err(e),
    }
}

/// Best value of a maximization together with its argument.
#[derive(Debug, Clone, PartialEq)]
struct Extremum {
    value: f64,
    point: Vec<f64>,
    cloud: usize,
    evaluations: usize,
}

/// Maximizes `f(z, cloud)` over `z ∈ box^(blocks·d)`. Half of the random
/// candidates place blocks after the first close to the first block, where
/// pair quotients and kernels tend to peak.
fn maximize<F>(
    spec: &SearchSpec,
    clouds: &[Cloud],
    d: usize,
    blocks: usize,
    tag: u64,
    f: F,
) -> Option<Extremum>
where
    F: Fn(&[f64], &Cloud) -> Option<f64> + Sync,
{
    let zdim = d * blocks;
    let hw = spec.half_width;
    let keep = spec.refine.max(1);
    let candidates: Vec<Vec<(f64, Vec<f64>, usize)>> = (0..clouds.len())
        .into_par_iter()
        .map(|c| {
            let mut rng = replicate_rng(
                spec.seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15),
                c as u64,
            );
            let mut best: Vec<(f64, Vec<f64>, usize)> = Vec::with_capacity(keep + 1);
            let mut z = vec![0.0; zdim];
            for _ in 0..spec.samples {
                for v in z[..d].iter_mut() {
                    *v = rng.gen_range(-hw..hw);
                }
                let near = rng.gen_bool(0.5);
                for b in 1..blocks {
                    for a in 0..d {
                        z[b * d + a] = if near {
                            let scale = 10f64.powf(rng.gen_range(-3.0..0.0));
                            (z[a] + scale * rng.gen_range(-1.0..1.0)).clamp(-hw, hw)
                        } else {
                            rng.gen_range(-hw..hw)
                        };
                    }
                }
                if let Some(v) = f(&z, &clouds[c]).filter(|v| v.is_finite()) {
                    if best.len() < keep || v > best[best.len() - 1].0 {
                        let at = best.partition_point(|e| e.0 >= v);
                        best.insert(at, (v, z.clone(), c));
                        best.truncate(keep);
                    }
                }
            }
            best
        })
        .collect();
    let mut pool: Vec<(f64, Vec<f64>, usize)> = candidates.into_iter().flatten().collect();
    pool.sort_by(|a, b| b.0.total_cmp(&a.0));
    pool.truncate(keep);
    let sampled = spec.samples * clouds.len();
    let refined: Vec<Extremum> = pool
        .into_par_iter()
        .map(|(v, z, c)| compass(&f, &clouds[c], z, v, hw, c))
        .collect();
    refined
        .into_iter()
        .reduce(|a, b| if b.value > a.value { b } else { a })
        .map(|mut e| {
            e.evaluations += sampled;
            e
        })
}

fn compass<F>(f: &F, cloud: &Cloud, mut z: Vec<f64>, mut best: f64, hw: f64, c: usize) -> Extremum
where
    F: Fn(&[f64], &Cloud) -> Option<f64>,
{
    let mut step = 0.05 * hw;
    let mut evaluations = 0;
    let mut trial = z.clone();
    for _ in 0..2000 {
        if step < 1e-9 {
            break;
        }
        let mut improved = false;
        for a in 0..z.len() {
            for sign in [1.0, -1.0] {
                trial.copy_from_slice(&z);
                trial[a] = (z[a] + sign * step).clamp(-hw, hw);
                evaluations += 1;
                if let Some(v) = f(&trial, cloud).filter(|v| v.is_finite()) {
                    if v > best {
                        best = v;
                        z.copy_from_slice(&trial);
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Extremum {
        value: best,
        point: z,
        cloud: c,
        evaluations,
    }
}

fn frobenius(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Sampled dissipativity constant at exponent `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaEstimate {
    pub p: u32,
    /// Infimum of the monotonicity quotient over the searched pairs.
    pub sampled: f64,
    /// Model-declared value, when available.
    pub declared: Option<f64>,
    /// The value used downstream: the declaration when consistent, else the sample.
    pub value: f64,
    pub argmin: Vec<f64>,
    pub evaluations: usize,
}

/// Monotonicity quotient `[2⟨x−y, b(x,μ)−b(y,μ)⟩ + (p−1)‖σ(x,μ)−σ(y,μ)‖²]/|x−y|²`.
pub fn monotonicity_quotient(
    model: &dyn CoefficientModel,
    x: &[f64],
    y: &[f64],
    cloud: &Cloud,
    p: u32,
) -> Option<f64> {
    let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    let scale = 1.0 + x.iter().chain(y).map(|v| v * v).sum::<f64>().sqrt();
    if r2.sqrt() < 1e-6 * scale {
        return None;
    }
    let (bx, sx) = eval_coefficients(model, x, cloud).ok()?;
    let (by, sy) = eval_coefficients(model, y, cloud).ok()?;
    let inner: f64 = x
        .iter()
        .zip(y)
        .zip(bx.iter().zip(&by))
        .map(|((a, b), (c, e))| (a - b) * (c - e))
        .sum();
    let ds: f64 = sx.iter().zip(&sy).map(|(a, b)| (a - b) * (a - b)).sum();
    Some((2.0 * inner + (p as f64 - 1.0) * ds) / r2)
}

fn kappa_on(
    model: &dyn CoefficientModel,
    p: u32,
    spec: &SearchSpec,
    clouds: &[Cloud],
) -> Result<KappaEstimate> {
    if !P_SET.contains(&p) {
        return Err(Error::invalid(format!("p = {p} is not in {{2, 4, …, 14}}")));
    }
    let d = model.dims().state;
    let ext = maximize(spec, clouds, d, 2, 100 + p as u64, |z, cloud| {
        monotonicity_quotient(model, &z[..d], &z[d..], cloud, p)
    })
    .ok_or_else(|| Error::Numerical("monotonicity search found no admissible pair".into()))?;
    let sampled = -ext.value;
    let declared = model.declared_constants().and_then(|c| c.kappa);
    let value = match declared {
        Some(k) if sampled >= k - DECLARATION_TOLERANCE * k.abs().max(1.0) => k,
        _ => sampled,
    };
    Ok(KappaEstimate {
        p,
        sampled,
        declared,
        value,
        argmin: ext.point,
        evaluations: ext.evaluations,
    })
}

/// κ̂_p: infimum over sampled `(x, y, μ)` of minus the monotonicity quotient.
/// A non-positive value signals that dissipativity fails at `p`.
pub fn estimate_kappa(
    model: &dyn CoefficientModel,
    p: u32,
    spec: &SearchSpec,
) -> Result<KappaEstimate> {
    spec.validate()?;
    let (clouds, _) = search_clouds(model, spec)?;
    kappa_on(model, p, spec, &clouds)
}

/// Aggregate rate `ω` and its per-exponent terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaSummary {
    pub omega: f64,
    pub terms: BTreeMap<u32, f64>,
    pub positive: bool,
}

/// `ω = min_p [κ_p/2 − 2^{(p−1)/p}γ − (p−1)2^{(p−1)/p}M_σγ − ((p−1)/2)2^{2(p−1)/p}γ²]`.
pub fn compute_omega(kappa: &BTreeMap<u32, f64>, gamma: f64, m_sigma: f64) -> Result<OmegaSummary> {
    let mut terms = BTreeMap::new();
    for p in P_SET {
        let k = *kappa
            .get(&p)
            .ok_or_else(|| Error::invalid(format!("κ map is missing p = {p}")))?;
        let pf = p as f64;
        let c = 2f64.powf((pf - 1.0) / pf);
        let term = k / 2.0
            - c * gamma
            - (pf - 1.0) * c * m_sigma * gamma
            - 0.5 * (pf - 1.0) * c * c * gamma * gamma;
        terms.insert(p, term);
    }
    let omega = terms.values().cloned().fold(f64::INFINITY, f64::min);
    Ok(OmegaSummary {
        omega,
        terms,
        positive: omega > 0.0,
    })
}

/// Λ, Ξ and η at one exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityConstants {
    pub p: u32,
    pub kappa: f64,
    pub lambda: f64,
    pub xi: f64,
    pub eta: f64,
    pub eta_below_one: bool,
}

/// `Ξ_{p,κ}`: 1 at p = 2, else `(p−1)(6(p−1)(p−2)/κ)^{(p−2)/2}`.
pub fn xi(p: u32, kappa: f64) -> f64 {
    if p == 2 {
        return 1.0;
    }
    let pf = p as f64;
    (pf - 1.0) * (6.0 * (pf - 1.0) * (pf - 2.0) / kappa).powf((pf - 2.0) / 2.0)
}

/// `Λ_{p,κ,M} = ((12(p−1)/κ)^{p−1}(1 + ((p−1)M)^p) + Ξ_{p,κ})^{1/p}`.
pub fn lambda(p: u32, kappa: f64, m_sigma: f64) -> f64 {
    let pf = p as f64;
    let a = (12.0 * (pf - 1.0) / kappa).powf(pf - 1.0);
    let b = 1.0 + ((pf - 1.0) * m_sigma).powf(pf);
    (a * b + xi(p, kappa)).powf(1.0 / pf)
}

/// Λ, Ξ and `η_p = 2^{1/p}Λγ(8/(pκ_p))^{1/p}` for `p ≥ 2`.
pub fn stability_constants(
    p: u32,
    kappa: f64,
    m_sigma: f64,
    gamma: f64,
) -> Result<StabilityConstants> {
    if p < 2 || p % 2 != 0 {
        return Err(Error::invalid(format!(
            "stability constants need an even p ≥ 2, got {p}"
        )));
    }
    if !(kappa > 0.0) {
        return Err(Error::invalid(format!(
            "κ_{p} must be positive, got {kappa}"
        )));
    }
    let pf = p as f64;
    let lam = lambda(p, kappa, m_sigma);
    let eta = 2f64.powf(1.0 / pf) * lam * gamma * (8.0 / (pf * kappa)).powf(1.0 / pf);
    Ok(StabilityConstants {
        p,
        kappa,
        lambda: lam,
        xi: xi(p, kappa),
        eta,
        eta_below_one: eta < 1.0,
    })
}

/// Constants closing the first- and second-order particle Malliavin estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilitySummary {
    pub p4: StabilityConstants,
    pub p8: StabilityConstants,
    /// `2^{1/4}Λ₄γ(2/κ₄)^{1/4}`.
    pub eta4_second: f64,
    /// `min{κ₄, κ₈}/8`.
    pub omega_hat: f64,
    pub eta4_second_below_one: bool,
}

impl StabilitySummary {
    pub fn all_pass(&self) -> bool {
        self.p4.eta_below_one && self.p8.eta_below_one && self.eta4_second_below_one
    }
}

pub fn compute_stability_constants(
    kappa4: f64,
    kappa8: f64,
    m_sigma: f64,
    gamma: f64,
) -> Result<StabilitySummary> {
    let p4 = stability_constants(4, kappa4, m_sigma, gamma)?;
    let p8 = stability_constants(8, kappa8, m_sigma, gamma)?;
    let eta4_second = 2f64.powf(0.25) * p4.lambda * gamma * (2.0 / kappa4).powf(0.25);
    Ok(StabilitySummary {
        omega_hat: kappa4.min(kappa8) / 8.0,
        eta4_second,
        eta4_second_below_one: eta4_second < 1.0,
        p4,
        p8,
    })
}

/// Outcome of one predicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    NotApplicable,
    Unchecked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub assumption: String,
    pub check: String,
    pub status: Status,
    pub value: Option<f64>,
    pub note: String,
}

fn verdict(
    assumption: &str,
    check: &str,
    status: Status,
    value: Option<f64>,
    note: impl Into<String>,
) -> Verdict {
    Verdict {
        assumption: assumption.into(),
        check: check.into(),
        status,
        value,
        note: note.into(),
    }
}

fn pass_fail(ok: bool) -> Status {
    if ok {
        Status::Pass
    } else {
        Status::Fail
    }
}

/// Sampled values and declarations behind the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchMetadata {
    pub spec: SearchSpec,
    pub cloud_source: String,
    pub state_dim: usize,
    pub evaluations: BTreeMap<String, usize>,
    pub kappa_sampled: BTreeMap<u32, f64>,
    pub gamma_sampled: Option<f64>,
    pub m_sigma_sampled: Option<f64>,
    pub declared_kappa: Option<f64>,
    pub declared_gamma: Option<f64>,
    pub declared_m_sigma: Option<f64>,
    pub norm: String,
}

/// Constants and predicate verdicts for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub model: String,
    pub kappa: BTreeMap<u32, f64>,
    pub gamma: Option<f64>,
    pub m_sigma: Option<f64>,
    pub m2: Option<f64>,
    /// Sup of the first-order derivative norms, a Lipschitz constant on the domain.
    pub lipschitz: Option<f64>,
    pub omega: Option<f64>,
    pub lambda: BTreeMap<u32, f64>,
    pub xi: BTreeMap<u32, f64>,
    pub eta: BTreeMap<u32, f64>,
    pub eta4_second: Option<f64>,
    pub omega_hat: Option<f64>,
    pub flags: Vec<Verdict>,
    pub caveats: Vec<String>,
    pub metadata: SearchMetadata,
}

impl AssumptionReport {
    /// True when no verdict failed.
    pub fn passes(&self) -> bool {
        self.flags.iter().all(|v| v.status != Status::Fail)
    }

    pub fn flag(&self, check: &str) -> Option<&Verdict> {
        self.flags.iter().find(|v| v.check == check)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Plain-text summary for terminals.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.6}"));
        let _ = writeln!(s, "model: {}", self.model);
        for (p, k) in &self.kappa {
            let _ = writeln!(s, "  kappa_{p:<2} = {k:.6}");
        }
        let _ = writeln!(s, "  gamma    = {}", fmt(self.gamma));
        let _ = writeln!(s, "  M_sigma  = {}", fmt(self.m_sigma));
        let _ = writeln!(s, "  M2       = {}", fmt(self.m2));
        let _ = writeln!(s, "  omega    = {}", fmt(self.omega));
        for (p, e) in &self.eta {
            let _ = writeln!(s, "  eta_{p}    = {e:.6}");
        }
        let _ = writeln!(s, "  eta4_2nd = {}", fmt(self.eta4_second));
        let _ = writeln!(s, "  omega_hat= {}", fmt(self.omega_hat));
        for v in &self.flags {
            let tag = match v.status {
                Status::Pass => "PASS",
                Status::Fail => "FAIL",
                Status::NotApplicable => "N/A ",
                Status::Unchecked => "----",
            };
            let _ = write!(s, "[{tag}] {}: {}", v.assumption, v.check);
            if !v.note.is_empty() {
                let _ = write!(s, " ({})", v.note);
            }
            s.push('\n');
        }
        for c in &self.caveats {
            let _ = writeln!(s, "caveat: {c}");
        }
        s
    }
}

fn sup_first(
    model: &dyn CoefficientModel,
    spec: &SearchSpec,
    clouds: &[Cloud],
    tag: u64,
    pick: fn(&crate::model::FirstDerivatives) -> f64,
) -> Option<Extremum> {
    let d = model.dims().state;
    maximize(spec, clouds, d, 2, tag, |z, cloud| {
        eval_first_derivatives(model, &z[..d], cloud, &z[d..])
            .ok()
            .map(|fd| pick(&fd))
    })
}

/// Sampled sups of the drift and diffusion second-order aggregates.
fn sup_second(
    model: &dyn CoefficientModel,
    spec: &SearchSpec,
    clouds: &[Cloud],
) -> Option<(f64, usize)> {
    let d = model.dims().state;
    let part = |from: usize, tag: u64| {
        maximize(spec, clouds, d, 3, tag, |z, cloud| {
            eval_second_derivatives(model, &z[..d], cloud, &z[d..2 * d], &z[2 * d..])
                .ok()
                .map(|sd| {
                    sd.blocks()[from..from + 5]
                        .iter()
                        .map(|(_, b)| frobenius(b))
                        .sum()
                })
        })
    };
    let drift = part(0, 40)?;
    let diffusion = part(5, 41)?;
    Some((
        drift.value + diffusion.value,
        drift.evaluations + diffusion.evaluations,
    ))
}

/// Estimates every constant of the dissipative framework for `model` and
/// evaluates the assumption predicates. Never fails on violated assumptions;
/// those are reported as verdicts.
pub fn check_assumptions(
    model: &dyn CoefficientModel,
    spec: &SearchSpec,
) -> Result<AssumptionReport> {
    spec.validate()?;
    let (clouds, cloud_source) = search_clouds(model, spec)?;
    let declared = model.declared_constants();
    let tol = |v: f64| DECLARATION_TOLERANCE * v.abs().max(1.0);
    let mut evaluations = BTreeMap::new();
    let mut flags = Vec::new();
    let mut caveats = model.caveats();
    caveats.push(format!(
        "sups and infs are sampled over states in [-{hw}, {hw}]^d and {n} clouds from the {src}; they certify that domain only",
        hw = spec.half_width,
        n = clouds.len(),
        src = cloud_source
    ));

    // Dissipativity.
    let mut kappa = BTreeMap::new();
    let mut kappa_sampled = BTreeMap::new();
    let mut kappa_consistent = true;
    for p in P_SET {
        let est = kappa_on(model, p, spec, &clouds)?;
        evaluations.insert(format!("kappa_{p}"), est.evaluations);
        if let Some(k) = est.declared {
            kappa_consistent &= est.sampled >= k - tol(k);
        }
        kappa.insert(p, est.value);
        kappa_sampled.insert(p, est.sampled);
        flags.push(verdict(
            "dissipative_regime",
            &format!("kappa_{p}_positive"),
            pass_fail(est.value > 0.0),
            Some(est.value),
            "",
        ));
    }
    let kappa_ok = kappa.values().all(|&k| k > 0.0);

    // First-order derivative sups.
    let gamma_ext = sup_first(model, spec, &clouds, 10, |fd| {
        frobenius(&fd.lions_drift) + frobenius(&fd.lions_diffusion)
    });
    let m_sigma_ext = sup_first(model, spec, &clouds, 11, |fd| frobenius(&fd.dx_diffusion));
    let lip_ext = sup_first(model, spec, &clouds, 12, |fd| {
        frobenius(&fd.dx_drift)
            + frobenius(&fd.dx_diffusion)
            + frobenius(&fd.lions_drift)
            + frobenius(&fd.lions_diffusion)
    });
    for (name, e) in [
        ("gamma", &gamma_ext),
        ("m_sigma", &m_sigma_ext),
        ("lipschitz", &lip_ext),
    ] {
        if let Some(e) = e {
            evaluations.insert(name.into(), e.evaluations);
        }
    }
    let gamma_sampled = gamma_ext.as_ref().map(|e| e.value);
    let m_sigma_sampled = m_sigma_ext.as_ref().map(|e| e.value);
    let resolve = |sampled: Option<f64>, declared: Option<f64>, consistent: &mut bool| match (
        sampled, declared,
    ) {
        (Some(s), Some(dv)) if s <= dv + tol(dv) => Some(dv),
        (Some(s), Some(_)) => {
            *consistent = false;
            Some(s)
        }
        (s, dv) => s.or(dv),
    };
    let mut sup_consistent = true;
    let gamma = resolve(
        gamma_sampled,
        declared.and_then(|c| c.gamma),
        &mut sup_consistent,
    );
    let m_sigma = resolve(
        m_sigma_sampled,
        declared.and_then(|c| c.m_sigma),
        &mut sup_consistent,
    );
    let lipschitz = lip_ext.map(|e| e.value);
    if declared.is_some() {
        let ok = kappa_consistent && sup_consistent;
        flags.push(verdict(
            "declared_constants",
            "sampled_estimates_agree",
            pass_fail(ok),
            None,
            if ok {
                ""
            } else {
                "a sampled estimate contradicts a declared constant; sampled values are used"
            },
        ));
    }

    // Well-posedness and regularity.
    let lip_note = "bounded first derivatives on the searched domain";
    match lipschitz {
        Some(l) => {
            flags.push(verdict(
                "global_lipschitz",
                "first_derivatives_bounded",
                Status::Pass,
                Some(l),
                lip_note,
            ));
            flags.push(verdict(
                "coefficient_regularity",
                "first_order_bounded",
                Status::Pass,
                Some(l),
                lip_note,
            ));
        }
        None => {
            flags.push(verdict(
                "global_lipschitz",
                "first_derivatives_bounded",
                Status::Unchecked,
                None,
                "model has no first derivatives",
            ));
            flags.push(verdict(
                "coefficient_regularity",
                "first_order_bounded",
                Status::Unchecked,
                None,
                "model has no first derivatives",
            ));
        }
    }
    let second = if model.supports_second_order() {
        sup_second(model, spec, &clouds)
    } else {
        None
    };
    let m2 = second.map(|(v, n)| {
        evaluations.insert("m2".into(), n);
        v
    });
    flags.push(match m2 {
        Some(v) => verdict(
            "coefficient_regularity",
            "second_order_bounded",
            pass_fail(v.is_finite()),
            Some(v),
            "M2 on the searched domain",
        ),
        None => verdict(
            "coefficient_regularity",
            "second_order_bounded",
            Status::Unchecked,
            None,
            "model has no second derivatives",
        ),
    });
    flags.push(verdict(
        "dissipative_regime",
        "derivatives_orders_3_to_7_bounded",
        Status::Unchecked,
        None,
        "only derivatives up to order 2 are checked",
    ));
    flags.push(verdict(
        "dissipative_regime",
        "drift_bounded",
        pass_fail(model.bounded_drift()),
        None,
        if model.bounded_drift() { "" } else { "drift is unbounded; dissipativity checks remain meaningful but the bounded-coefficient hypothesis fails" },
    ));
    flags.push(verdict(
        "particle_flow_malliavin_stability",
        "diffusion_bounded",
        pass_fail(model.bounded_diffusion()),
        None,
        "",
    ));

    // Small measure dependence and aggregates.
    flags.push(match gamma {
        Some(g) => verdict(
            "dissipative_regime",
            "gamma_at_most_one",
            pass_fail(g <= 1.0),
            Some(g),
            "",
        ),
        None => verdict(
            "dissipative_regime",
            "gamma_at_most_one",
            Status::Unchecked,
            None,
            "model has no Lions derivatives",
        ),
    });
    let (mut omega, mut omega_hat, mut eta4_second) = (None, None, None);
    let (mut lambda_map, mut xi_map, mut eta_map) =
        (BTreeMap::new(), BTreeMap::new(), BTreeMap::new());
    let na = |check: &str, why: &str| verdict("", check, Status::NotApplicable, None, why);
    match (gamma, m_sigma) {
        (Some(g), Some(ms)) => {
            let om = compute_omega(&kappa, g, ms)?;
            omega = Some(om.omega);
            flags.push(if kappa_ok {
                verdict(
                    "dissipative_regime",
                    "omega_positive",
                    pass_fail(om.positive),
                    Some(om.omega),
                    "",
                )
            } else {
                Verdict {
                    assumption: "dissipative_regime".into(),
                    ..na("omega_positive", "some κ_p ≤ 0")
                }
            });
            let (k4, k8) = (kappa[&4], kappa[&8]);
            if k4 > 0.0 && k8 > 0.0 {
                let st = compute_stability_constants(k4, k8, ms, g)?;
                for c in [&st.p4, &st.p8] {
                    lambda_map.insert(c.p, c.lambda);
                    xi_map.insert(c.p, c.xi);
                    eta_map.insert(c.p, c.eta);
                    flags.push(verdict(
                        "particle_flow_malliavin_stability",
                        &format!("eta_{}_below_one", c.p),
                        pass_fail(c.eta_below_one),
                        Some(c.eta),
                        "",
                    ));
                }
                flags.push(verdict(
                    "particle_flow_malliavin_stability",
                    "eta4_second_below_one",
                    pass_fail(st.eta4_second_below_one),
                    Some(st.eta4_second),
                    "",
                ));
                eta4_second = Some(st.eta4_second);
                omega_hat = Some(st.omega_hat);
            } else {
                for check in [
                    "eta_4_below_one",
                    "eta_8_below_one",
                    "eta4_second_below_one",
                ] {
                    flags.push(Verdict {
                        assumption: "particle_flow_malliavin_stability".into(),
                        ..na(check, "κ₄ or κ₈ ≤ 0")
                    });
                }
            }
        }
        _ => {
            for check in [
                "omega_positive",
                "eta_4_below_one",
                "eta_8_below_one",
                "eta4_second_below_one",
            ] {
                flags.push(Verdict {
                    assumption: "dissipative_regime".into(),
                    ..na(check, "γ or M_σ unavailable")
                });
            }
        }
    }

    let report = AssumptionReport {
        model: model.name().to_string(),
        kappa,
        gamma,
        m_sigma,
        m2,
        lipschitz,
        omega,
        lambda: lambda_map,
        xi: xi_map,
        eta: eta_map,
        eta4_second,
        omega_hat,
        flags,
        caveats,
        metadata: SearchMetadata {
            spec: spec.clone(),
            cloud_source,
            state_dim: model.dims().state,
            evaluations,
            kappa_sampled,
            gamma_sampled,
            m_sigma_sampled,
            declared_kappa: declared.and_then(|c| c.kappa),
            declared_gamma: declared.and_then(|c| c.gamma),
            declared_m_sigma: declared.and_then(|c| c.m_sigma),
            norm: "Frobenius".into(),
        },
    };
    let finite = |v: &f64| v.is_finite();
    let all_finite = report.kappa.values().all(finite)
        && report.lambda.values().all(finite)
        && report.eta.values().all(finite)
        && [
            report.gamma,
            report.m_sigma,
            report.m2,
            report.omega,
            report.eta4_second,
            report.omega_hat,
        ]
        .iter()
        .flatten()
        .all(finite);
    if !all_finite {
        return Err(Error::Numerical(
            "assumption report contains a non-finite value".into(),
        ));
    }
    Ok(report)
}
