use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::constants::SearchSpec;
use crate::error::{Error, Result};
use crate::malliavin::Coverage;
use crate::model::{ModelSpec, Observable};
use crate::simulate::{InitialLaw, LawFlowKind, TimeGrid};
use crate::variance::Linearization;

/// Named pipelines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Rate,
    Decay,
    Variance,
    WeakExpansion,
    Poincare,
    Assumptions,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Rate => "rate",
            ExperimentKind::Decay => "decay",
            ExperimentKind::Variance => "variance",
            ExperimentKind::WeakExpansion => "weak-expansion",
            ExperimentKind::Poincare => "poincare",
            ExperimentKind::Assumptions => "assumptions",
        }
    }
}

/// Thresholds of the pass/fail checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Target log-log slope of the fluctuation distance and its tolerance.
    pub rate_target: f64,
    pub rate: f64,
    /// Pairwise relative agreement of variance estimates.
    pub relative_variance: f64,
    pub gap_target: f64,
    pub gap: f64,
    /// Relative agreement of the fitted OU tangent decay rate with θ.
    pub theta_rate: f64,
    /// Allowance on `rate ≤ −κ₄/8` and `rate ≤ −ω̂`.
    pub decay_bound: f64,
    /// Standard errors allowed above an envelope.
    pub envelope_z: f64,
    /// Standard errors on each side of the Gaussian-approximation inequality.
    pub poincare_z: f64,
    /// Largest admissible slope of `log Δ` against `log N`.
    pub delta_slope_max: f64,
    /// Simultaneous confidence level of N-stability bands.
    pub stability_level: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rate_target: -0.5,
            rate: 0.15,
            relative_variance: 0.02,
            gap_target: -1.0,
            gap: 0.3,
            theta_rate: 0.02,
            decay_bound: 0.05,
            envelope_z: 2.0,
            poincare_z: 2.0,
            delta_slope_max: -0.8,
            stability_level: 0.95,
        }
    }
}

/// Pipeline-specific knobs. Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentOptions {
    /// Law flow representation; `None` picks an analytic flow for OU
    /// (the Euler-discrete one for weak expansion) and a reference cloud
    /// otherwise.
    pub law: Option<LawFlowKind>,
    pub reference_particles: usize,
    /// Time step of the backward PDE.
    pub pde_ds: f64,
    /// Paths used for the `Δ` functional.
    pub delta_replicates: usize,
    /// Cell stride of the `Δ` quadrature.
    pub stride: usize,
    pub coverage: Coverage,
    /// Source time of the decay curves.
    pub decay_source: f64,
    pub moment_order: f64,
    pub second_order: bool,
    /// Start of the flatness window of weak-expansion coefficients.
    pub flat_from: f64,
    pub search: SearchSpec,
    pub tolerances: Tolerances,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            law: None,
            reference_particles: 1 << 14,
            pde_ds: 0.01,
            delta_replicates: 128,
            stride: 1,
            coverage: Coverage::Full,
            decay_source: 0.0,
            moment_order: 4.0,
            second_order: true,
            flat_from: 4.0,
            search: SearchSpec::default(),
            tolerances: Tolerances::default(),
        }
    }
}

/// Fully resolved experiment description. Its JSON serialization is the
/// canonical form of a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub model: ModelSpec,
    pub phi: Observable,
    pub initial: InitialLaw,
    pub n_values: Vec<usize>,
    pub t_grid: Vec<f64>,
    pub dt: f64,
    pub replicates: usize,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub pde_mode: Linearization,
    /// Hard-fail on estimator-variance warnings.
    pub strict: bool,
    pub options: ExperimentOptions,
}

/// Config as written by a user: everything but the experiment and the seed
/// may be omitted.
#[derive(Debug, Deserialize)]
struct RawConfig {
    experiment: ExperimentKind,
    seed: u64,
    model: Option<ModelSpec>,
    phi: Option<Observable>,
    initial: Option<InitialLaw>,
    n_values: Option<Vec<usize>>,
    t_grid: Option<Vec<f64>>,
    dt: Option<f64>,
    replicates: Option<usize>,
    output_dir: Option<PathBuf>,
    pde_mode: Option<Linearization>,
    strict: Option<bool>,
    options: Option<ExperimentOptions>,
}

impl ExperimentConfig {
    /// Documented defaults of each pipeline.
    pub fn defaults(kind: ExperimentKind, seed: u64) -> Self {
        let ou = ModelSpec::mean_field_ou(1.0, 0.05, 1.0);
        let (model, phi, n_values, t_grid, dt, replicates): (_, _, Vec<usize>, Vec<f64>, _, _) = match kind {
            ExperimentKind::Rate => (
                ou,
                Observable::tanh(),
                vec![16, 32, 64, 128, 256],
                vec![0.5, 1.0, 2.0, 4.0, 8.0],
                0.01,
                10_000,
            ),
            ExperimentKind::Decay => (
                ou,
                Observable::coordinate(),
                vec![8],
                vec![0.5, 1.0, 1.5, 2.0, 3.0, 4.0],
                0.01,
                16,
            ),
            ExperimentKind::Variance => (
                ou,
                Observable::coordinate(),
                vec![32, 64, 128],
                vec![0.5, 1.0, 2.0, 5.0],
                0.01,
                100_000,
            ),
            ExperimentKind::WeakExpansion => (
                ou,
                Observable::coordinate(),
                vec![64, 128],
                vec![1.0, 2.0, 4.0, 5.0, 6.0, 7.0, 8.0],
                0.01,
                50_000,
            ),
            ExperimentKind::Poincare => (
                ModelSpec::tanh_interaction(),
                Observable::tanh(),
                vec![4, 8, 16],
                vec![0.5, 1.0, 2.0],
                0.05,
                100_000,
            ),
            ExperimentKind::Assumptions => (ou, Observable::coordinate(), vec![1], vec![1.0], 0.01, 1),
        };
        ExperimentConfig {
            experiment: kind,
            model,
            phi,
            initial: InitialLaw::default(),
            n_values,
            t_grid,
            dt,
            replicates,
            seed,
            output_dir: None,
            pde_mode: Linearization::LinearFunctional,
            strict: false,
            options: ExperimentOptions::default(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Checks every field, naming the first offending one.
    pub fn validate(&self) -> Result<()> {
        let model = self
            .model
            .build()
            .map_err(|e| Error::config("model", e.to_string()))?;
        let d = model.dims().state;
        if self.phi.max_index() >= d {
            return Err(Error::config(
                "phi",
                format!("coordinate {} outside the state dimension {d}", self.phi.max_index()),
            ));
        }
        self.initial
            .validate()
            .map_err(|e| Error::config("initial", e.to_string()))?;
        if self.n_values.is_empty() {
            return Err(Error::config("n_values", "at least one particle count is required"));
        }
        for (i, &n) in self.n_values.iter().enumerate() {
            if n == 0 {
                return Err(Error::config(&format!("n_values[{i}]"), "particle count must be at least 1"));
            }
            if i > 0 && n <= self.n_values[i - 1] {
                return Err(Error::config(&format!("n_values[{i}]"), "particle counts must be strictly increasing"));
            }
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::config("dt", "time step must be positive and finite"));
        }
        if self.t_grid.is_empty() {
            return Err(Error::config("t_grid", "at least one time is required"));
        }
        let grid = TimeGrid::new(self.dt, 0).map_err(|e| Error::config("dt", e.to_string()))?;
        for (i, &t) in self.t_grid.iter().enumerate() {
            let field = format!("t_grid[{i}]");
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::config(&field, "times must be positive and finite"));
            }
            if i > 0 && t <= self.t_grid[i - 1] {
                return Err(Error::config(&field, "times must be strictly increasing"));
            }
            grid.step_of(t).map_err(|e| Error::config(&field, e.to_string()))?;
        }
        if self.replicates < 1 {
            return Err(Error::config("replicates", "replicate count must be at least 1"));
        }
        let o = &self.options;
        if o.delta_replicates < 1 {
            return Err(Error::config("options.delta_replicates", "must be at least 1"));
        }
        if o.stride < 1 {
            return Err(Error::config("options.stride", "must be at least 1"));
        }
        if o.reference_particles < 2 {
            return Err(Error::config("options.reference_particles", "must be at least 2"));
        }
        if !(o.pde_ds > 0.0) {
            return Err(Error::config("options.pde_ds", "must be positive"));
        }
        if !(o.moment_order >= 1.0) {
            return Err(Error::config("options.moment_order", "must be at least 1"));
        }
        if !(o.decay_source >= 0.0) {
            return Err(Error::config("options.decay_source", "must be non-negative"));
        }
        grid.step_of(o.decay_source)
            .map_err(|e| Error::config("options.decay_source", e.to_string()))?;
        if !(o.tolerances.stability_level > 0.0 && o.tolerances.stability_level < 1.0) {
            return Err(Error::config("options.tolerances.stability_level", "must lie in (0, 1)"));
        }
        if matches!(o.law, Some(LawFlowKind::AnalyticGaussian | LawFlowKind::AnalyticDiscrete))
            && self.model.as_ou().is_none()
        {
            return Err(Error::config("options.law", "analytic law flows exist only for the mean-field OU model"));
        }
        let needs_two = |field: &str, v: usize| {
            if v < 2 {
                Err(Error::config(field, "at least two replicates are needed for standard errors"))
            } else {
                Ok(())
            }
        };
        match self.experiment {
            ExperimentKind::Rate => {
                needs_two("replicates", self.replicates)?;
                if self.n_values.len() < 3 {
                    return Err(Error::config("n_values", "a rate fit needs at least three particle counts"));
                }
                if d != 1 {
                    return Err(Error::config("model", "the variance reference needs a scalar model"));
                }
            }
            ExperimentKind::Variance => {
                needs_two("replicates", self.replicates)?;
                if self.n_values.len() < 2 {
                    return Err(Error::config("n_values", "extrapolation needs at least two particle counts"));
                }
                if d != 1 {
                    return Err(Error::config("model", "the backward PDE is implemented for scalar models"));
                }
            }
            ExperimentKind::WeakExpansion => {
                needs_two("replicates", self.replicates)?;
                if self.model.as_ou().is_none() {
                    return Err(Error::config("model", "weak-expansion coefficients need an analytic law flow (mean-field OU)"));
                }
                if matches!(o.law, Some(LawFlowKind::ReferenceCloud)) {
                    return Err(Error::config("options.law", "a reference cloud is not accurate to o(1/N)"));
                }
            }
            ExperimentKind::Poincare => {
                needs_two("replicates", self.replicates)?;
                needs_two("options.delta_replicates", o.delta_replicates)?;
                if !model.supports_second_order() {
                    return Err(Error::config("model", "the Δ functional needs second derivatives"));
                }
            }
            ExperimentKind::Decay => {
                needs_two("replicates", self.replicates)?;
                if self.t_grid.len() < 4 {
                    return Err(Error::config("t_grid", "a decay fit needs at least four lags"));
                }
            }
            ExperimentKind::Assumptions => {}
        }
        Ok(())
    }
}

/// Outcome of parsing: the validated config and the unknown keys that were
/// ignored in lenient mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedConfig {
    pub config: ExperimentConfig,
    pub warnings: Vec<String>,
}

fn collect_unknown(input: &Value, canonical: &Value, path: &str, out: &mut Vec<String>) {
    if let (Value::Object(a), Value::Object(b)) = (input, canonical) {
        for (k, v) in a {
            let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
            match b.get(k) {
                None => out.push(p),
                Some(c) => collect_unknown(v, c, &p, out),
            }
        }
    }
}

/// Parses a JSON config, fills the documented defaults and validates it.
/// Unknown keys are an error when `strict`, otherwise reported as warnings.
pub fn parse_config(text: &str, strict: bool) -> Result<ParsedConfig> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::config("<root>", e.to_string()))?;
    let obj: &Map<String, Value> = value
        .as_object()
        .ok_or_else(|| Error::config("<root>", "config must be a JSON object"))?;
    for field in ["experiment", "seed"] {
        if !obj.contains_key(field) {
            return Err(Error::config(field, "required field is missing"));
        }
    }
    let raw: RawConfig = serde_path_to_error::deserialize(&value).map_err(|e| {
        let path = e.path().to_string();
        Error::config(if path == "." { "<root>" } else { &path }, e.into_inner().to_string())
    })?;
    let base = ExperimentConfig::defaults(raw.experiment, raw.seed);
    let config = ExperimentConfig {
        experiment: raw.experiment,
        seed: raw.seed,
        model: raw.model.unwrap_or(base.model),
        phi: raw.phi.unwrap_or(base.phi),
        initial: raw.initial.unwrap_or(base.initial),
        n_values: raw.n_values.unwrap_or(base.n_values),
        t_grid: raw.t_grid.unwrap_or(base.t_grid),
        dt: raw.dt.unwrap_or(base.dt),
        replicates: raw.replicates.unwrap_or(base.replicates),
        output_dir: raw.output_dir.or(base.output_dir),
        pde_mode: raw.pde_mode.unwrap_or(base.pde_mode),
        strict: raw.strict.unwrap_or(base.strict),
        options: raw.options.unwrap_or(base.options),
    };
    let canonical = serde_json::to_value(&config)?;
    let mut unknown = Vec::new();
    collect_unknown(&value, &canonical, "", &mut unknown);
    if strict {
        if let Some(k) = unknown.first() {
            return Err(Error::config(k, "unknown key"));
        }
    }
    config.validate()?;
    Ok(ParsedConfig {
        config,
        warnings: unknown.into_iter().map(|k| format!("unknown key `{k}` ignored")).collect(),
    })
}
