//! Named experiments over the library, with persisted tables and verdicts
//! that can be recomputed from the tables alone.

mod assumptions;
mod config;
mod decay;
mod output;
mod poincare;
mod rate;
mod triangulation;
mod weak;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CoefficientModel;
use crate::simulate::{law_flow, LawFlow, LawFlowKind, ReferenceOptions, TimeGrid};

pub use config::{parse_config, ExperimentConfig, ExperimentKind, ExperimentOptions, ParsedConfig, Tolerances};
pub use output::{load_result, render_plot, render_plots, PlotSpec, Series, Table};

/// Environment variable holding the worker-pool size.
pub const WORKERS_ENV: &str = "MFLAB_WORKERS";

/// One pass/fail check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: Option<f64>,
    pub target: Option<f64>,
    pub detail: String,
}

impl Check {
    pub(crate) fn new(name: impl Into<String>, passed: bool, value: f64, target: f64, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            value: value.is_finite().then_some(value),
            target: target.is_finite().then_some(target),
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub version: String,
    pub wall_clock_seconds: f64,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub tables: BTreeMap<String, Table>,
    pub verdicts: Vec<Check>,
    pub plots: Vec<PlotSpec>,
    pub notes: Vec<String>,
    /// Structured side outputs (written as `<name>.json`).
    pub attachments: BTreeMap<String, serde_json::Value>,
    pub metadata: RunMetadata,
}

impl ExperimentResult {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.verdicts.iter().find(|c| c.name == name)
    }

    pub fn table(&self, name: &str) -> Result<&Table> {
        self.tables
            .get(name)
            .ok_or_else(|| Error::MissingDependency(format!("no table `{name}`")))
    }
}

/// Seed of an independent unit of work, derived from the master seed by
/// splitmix64 so that schedules never affect results.
pub fn unit_seed(master: u64, stage: u64, unit: u64) -> u64 {
    let mut z = master
        .wrapping_add(stage.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(unit.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    for _ in 0..2 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut x = z;
        x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z = x ^ (x >> 31);
    }
    z
}

/// Pipeline state: tables are written as soon as they exist so that a
/// failure still leaves the finished ones on disk.
pub(crate) struct Run<'a> {
    pub config: &'a ExperimentConfig,
    pub model: std::sync::Arc<dyn CoefficientModel>,
    dir: Option<PathBuf>,
    stage: String,
    pub tables: BTreeMap<String, Table>,
    pub plots: Vec<PlotSpec>,
    pub notes: Vec<String>,
    pub attachments: BTreeMap<String, serde_json::Value>,
}

impl<'a> Run<'a> {
    pub fn at(&mut self, stage: impl Into<String>) {
        self.stage = stage.into();
    }

    pub fn table(&mut self, name: &str, table: Table) -> Result<()> {
        if let Some(dir) = &self.dir {
            table.write_csv(&dir.join("tables").join(format!("{name}.csv")))?;
        }
        self.tables.insert(name.to_string(), table);
        Ok(())
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    pub fn grid_to(&self, horizon: f64) -> Result<TimeGrid> {
        TimeGrid::to_horizon(self.config.dt, horizon)
    }

    /// Law flow over `[0, horizon]` in the configured representation.
    pub fn law(&mut self, horizon: f64, default: LawFlowKind) -> Result<LawFlow> {
        let c = self.config;
        let kind = c.options.law.unwrap_or(default);
        self.at(format!("law flow ({kind:?})"));
        let grid = self.grid_to(horizon)?;
        let opts = ReferenceOptions {
            n_ref: c.options.reference_particles,
            seed: unit_seed(c.seed, 0, 0),
            ..ReferenceOptions::default()
        };
        law_flow(&c.model, &c.initial, kind, &grid, &opts)
    }

    pub fn default_law(&self) -> LawFlowKind {
        if self.config.model.as_ou().is_some() {
            LawFlowKind::AnalyticGaussian
        } else {
            LawFlowKind::ReferenceCloud
        }
    }
}

/// Worker count from the value of [`WORKERS_ENV`]; `None` keeps rayon's
/// default.
pub fn parse_workers(value: Option<&str>) -> Result<Option<usize>> {
    match value {
        None => Ok(None),
        Some(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::config(WORKERS_ENV, format!("expected a positive integer, got `{v}`"))),
        },
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// Recomputes every verdict from the config and the tables.
pub fn recheck(result: &ExperimentResult) -> Result<Vec<Check>> {
    verdicts(&result.config, &result.tables)
}

pub fn verdicts(config: &ExperimentConfig, tables: &BTreeMap<String, Table>) -> Result<Vec<Check>> {
    match config.experiment {
        ExperimentKind::Rate => rate::verdicts(config, tables),
        ExperimentKind::Decay => decay::verdicts(config, tables),
        ExperimentKind::Variance => triangulation::verdicts(config, tables),
        ExperimentKind::WeakExpansion => weak::verdicts(config, tables),
        ExperimentKind::Poincare => poincare::verdicts(config, tables),
        ExperimentKind::Assumptions => assumptions::verdicts(config, tables),
    }
}

fn execute(run: &mut Run) -> Result<()> {
    match run.config.experiment {
        ExperimentKind::Rate => rate::run(run),
        ExperimentKind::Decay => decay::run(run),
        ExperimentKind::Variance => triangulation::run(run),
        ExperimentKind::WeakExpansion => weak::run(run),
        ExperimentKind::Poincare => poincare::run(run),
        ExperimentKind::Assumptions => assumptions::run(run),
    }
}

/// Runs the configured pipeline. With an output directory, writes
/// `config.json`, `tables/*.csv`, attachments, `report.json` and SVG plots;
/// on failure the finished tables and an `error.json` are left behind.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let workers = parse_workers(std::env::var(WORKERS_ENV).ok().as_deref())?;
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = workers {
            b = b.num_threads(n);
        }
        b.build().map_err(|e| Error::config(WORKERS_ENV, e.to_string()))?
    };
    let start = Instant::now();
    let dir = config.output_dir.clone();
    if let Some(d) = &dir {
        fs::create_dir_all(d.join("tables"))?;
        write_json(&d.join("config.json"), config)?;
    }
    let model = config.model.build()?;
    let mut run = Run {
        config,
        model,
        dir: dir.clone(),
        stage: "setup".into(),
        tables: BTreeMap::new(),
        plots: Vec::new(),
        notes: Vec::new(),
        attachments: BTreeMap::new(),
    };
    let outcome = pool.install(|| execute(&mut run)).and_then(|_| {
        run.at("verdicts");
        verdicts(config, &run.tables)
    });
    let verdicts = match outcome {
        Ok(v) => v,
        Err(e) => {
            let err = Error::Experiment {
                experiment: config.experiment.name().into(),
                stage: run.stage.clone(),
                source: Box::new(e),
            };
            if let Some(d) = &dir {
                let body = serde_json::json!({
                    "experiment": config.experiment.name(),
                    "stage": run.stage,
                    "error": err.to_string(),
                    "tables": run.tables.keys().collect::<Vec<_>>(),
                });
                write_json(&d.join("error.json"), &body)?;
            }
            return Err(err);
        }
    };
    let result = ExperimentResult {
        config: config.clone(),
        tables: run.tables,
        verdicts,
        plots: run.plots,
        notes: run.notes,
        attachments: run.attachments,
        metadata: RunMetadata {
            version: env!("CARGO_PKG_VERSION").into(),
            wall_clock_seconds: start.elapsed().as_secs_f64(),
            workers: pool.current_num_threads(),
        },
    };
    if let Some(d) = &dir {
        for (name, value) in &result.attachments {
            write_json(&d.join(format!("{name}.json")), value)?;
        }
        write_json(&d.join("report.json"), &result)?;
        render_plots(&result, &d.join("plots"))?;
    }
    Ok(result)
}

/// `n` in a check name or label.
pub(crate) fn tag(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

pub(crate) fn table<'t>(tables: &'t BTreeMap<String, Table>, name: &str) -> Result<&'t Table> {
    tables
        .get(name)
        .ok_or_else(|| Error::MissingDependency(format!("no table `{name}`")))
}
