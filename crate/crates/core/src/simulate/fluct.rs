use rayon::prelude::*;

use super::{simulate_observed, InitialLaw, LawFlow, PathRecord, TimeGrid};
use crate::error::{Error, Result};
use crate::model::{Cloud, CoefficientModel, TestFunction};

/// Per-replicate empirical averages and fluctuations at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct FluctuationSamples {
    pub n: usize,
    pub t: f64,
    /// ⟨μ_t, φ⟩ from the law flow.
    pub limit_mean: f64,
    /// ⟨μ_t^N, φ⟩ per replicate.
    pub values: Vec<f64>,
    /// √N(⟨μ_t^N, φ⟩ − ⟨μ_t, φ⟩).
    pub g: Vec<f64>,
    /// √N(⟨μ_t^N, φ⟩ − mean over replicates).
    pub f: Vec<f64>,
}

/// ⟨μ^N, φ⟩ for the empirical measure of `cloud`.
pub fn empirical_average(cloud: &Cloud, phi: &dyn TestFunction) -> f64 {
    (0..cloud.len())
        .map(|i| phi.value(cloud.particle(i)))
        .sum::<f64>()
        / cloud.len() as f64
}

pub fn fluctuations_from_values(
    n: usize,
    t: f64,
    values: Vec<f64>,
    limit_mean: f64,
) -> Result<FluctuationSamples> {
    if values.is_empty() {
        return Err(Error::invalid("no replicate values"));
    }
    let sq = (n as f64).sqrt();
    let avg = crate::stats::mean(&values);
    let g = values.iter().map(|v| sq * (v - limit_mean)).collect();
    let f = values.iter().map(|v| sq * (v - avg)).collect();
    Ok(FluctuationSamples {
        n,
        t,
        limit_mean,
        values,
        g,
        f,
    })
}

/// Fluctuation samples of `φ` at grid time `t` across stored paths.
pub fn fluctuation_samples(
    paths: &[PathRecord],
    law: &LawFlow,
    phi: &dyn TestFunction,
    t: f64,
) -> Result<FluctuationSamples> {
    let first = paths
        .first()
        .ok_or_else(|| Error::invalid("no paths supplied"))?;
    let n = first.particles();
    let values = paths
        .iter()
        .map(|p| {
            let k = p.grid.index_within(t)?;
            Ok(empirical_average(&p.snapshots[k], phi))
        })
        .collect::<Result<Vec<f64>>>()?;
    let limit_mean = law.expect(phi, t)?;
    fluctuations_from_values(n, t, values, limit_mean)
}

/// `⟨μ_t^N, φ_q⟩` for every replicate, observable and requested grid step,
/// streamed without storing paths. Result is indexed `[step][observable]`
/// and holds one value per replicate in replicate order.
pub fn observe_averages(
    model: &dyn CoefficientModel,
    n: usize,
    grid: &TimeGrid,
    init: &InitialLaw,
    master_seed: u64,
    replicates: usize,
    phis: &[&dyn TestFunction],
    steps: &[usize],
) -> Result<Vec<Vec<Vec<f64>>>> {
    if replicates == 0 {
        return Err(Error::invalid("replicate count must be at least 1"));
    }
    if let Some(&k) = steps.iter().find(|&&k| k > grid.steps) {
        return Err(Error::Grid(format!("step {k} beyond the horizon")));
    }
    let per_rep: Vec<Vec<f64>> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let mut vals = vec![0.0; steps.len() * phis.len()];
            simulate_observed(model, n, grid, init, master_seed, r, |k, cloud| {
                for (a, &sk) in steps.iter().enumerate() {
                    if sk == k {
                        for (b, phi) in phis.iter().enumerate() {
                            vals[a * phis.len() + b] = empirical_average(cloud, *phi);
                        }
                    }
                }
                Ok(())
            })?;
            Ok(vals)
        })
        .collect::<Result<_>>()?;
    Ok((0..steps.len())
        .map(|a| {
            (0..phis.len())
                .map(|b| per_rep.iter().map(|v| v[a * phis.len() + b]).collect())
                .collect()
        })
        .collect())
}
