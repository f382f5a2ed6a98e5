use std::collections::BTreeMap;

use super::{table, tag, unit_seed, Check, ExperimentConfig, PlotSpec, Run, Table};
use crate::error::{Error, Result};
use crate::normal;
use crate::simulate::{observe_averages, LawFlowKind};
use crate::variance::{alpha_hat, flatness, Estimate};

pub(super) fn run(run: &mut Run) -> Result<()> {
    let c = run.config;
    let model = run.model.clone();
    let horizon = *c.t_grid.last().expect("validated");
    let law = run.law(horizon, LawFlowKind::AnalyticDiscrete)?;
    if !law.is_analytic() {
        return Err(Error::invalid("weak-expansion coefficients need an analytic law flow"));
    }
    let limits = c
        .t_grid
        .iter()
        .map(|&t| law.expect(&c.phi, t))
        .collect::<Result<Vec<_>>>()?;
    let grid = run.grid_to(horizon)?;
    let steps = c
        .t_grid
        .iter()
        .map(|&t| grid.step_of(t))
        .collect::<Result<Vec<_>>>()?;
    let mut alpha = Table::new(&["n", "t", "alpha1", "alpha1_se", "alpha2", "alpha2_se", "limit"]);
    for &n in &c.n_values {
        run.at(format!("simulation at N = {n}"));
        let vals = observe_averages(
            model.as_ref(),
            n,
            &grid,
            &c.initial,
            unit_seed(c.seed, 4, n as u64),
            c.replicates,
            &[&c.phi],
            &steps,
        )?;
        for ((&t, v), &m) in c.t_grid.iter().zip(&vals).zip(&limits) {
            let a1 = alpha_hat(&v[0], n, m, 1)?;
            let a2 = alpha_hat(&v[0], n, m, 2)?;
            alpha.push(vec![n as f64, t, a1.value, a1.stderr, a2.value, a2.stderr, m]);
        }
        run.table("alpha", alpha.clone())?;
    }
    for ell in [1, 2] {
        let col = format!("alpha{ell}");
        run.plots.push(c.n_values.iter().fold(
            PlotSpec::new(&format!("alpha{ell}"), &format!("weak-expansion coefficient α̂{ell}"), ("t", false), (&col, false)),
            |p, &n| p.line(&format!("N = {n}"), "alpha", "t", &col, Some(("n", n as f64))),
        ));
    }
    Ok(())
}

fn estimates(rows: &Table, ell: u8) -> Result<Vec<Estimate>> {
    Ok(rows
        .column(&format!("alpha{ell}"))?
        .into_iter()
        .zip(rows.column(&format!("alpha{ell}_se"))?)
        .map(|(value, stderr)| Estimate { value, stderr })
        .collect())
}

/// Two-sided per-comparison quantile keeping a family of `k` comparisons at
/// simultaneous level `level` (Šidák).
pub(crate) fn sidak_z(level: f64, k: usize) -> f64 {
    let per = 1.0 - level.powf(1.0 / k.max(1) as f64);
    normal::quantile(1.0 - per / 2.0)
}

pub(super) fn verdicts(c: &ExperimentConfig, tables: &BTreeMap<String, Table>) -> Result<Vec<Check>> {
    let tol = &c.options.tolerances;
    let alpha = table(tables, "alpha")?;
    let n_values = alpha.distinct("n")?;
    let mut out = Vec::new();
    for &n in &n_values {
        let rows = alpha.filter("n", n)?;
        let t = rows.column("t")?;
        for ell in [1u8, 2] {
            let f = flatness(&t, &estimates(&rows, ell)?, c.options.flat_from)?;
            out.push(Check::new(
                format!("alpha{ell}_flat_n{}", tag(n)),
                f.flat,
                f.fit.slope,
                0.0,
                format!(
                    "slope over t ≥ {} is {:.4} with 95% CI [{:.4}, {:.4}]",
                    c.options.flat_from, f.fit.slope, f.fit.slope_ci.0, f.fit.slope_ci.1
                ),
            ));
        }
    }
    let k = (n_values.len().saturating_sub(1)) * 2 * c.t_grid.len();
    let z = sidak_z(tol.stability_level, k);
    for w in n_values.windows(2) {
        let (a, b) = (alpha.filter("n", w[0])?, alpha.filter("n", w[1])?);
        let t = a.column("t")?;
        for ell in [1u8, 2] {
            let (ea, eb) = (estimates(&a, ell)?, estimates(&b, ell)?);
            let mut worst = 0.0f64;
            let mut at = f64::NAN;
            for (k, (x, y)) in ea.iter().zip(&eb).enumerate() {
                let s = (x.value - y.value).abs() / (x.stderr.powi(2) + y.stderr.powi(2)).sqrt();
                if !(s <= worst) {
                    worst = s;
                    at = t[k];
                }
            }
            out.push(Check::new(
                format!("alpha{ell}_stable_n{}_n{}", tag(w[0]), tag(w[1])),
                worst <= z,
                worst,
                z,
                format!(
                    "largest standardized difference {worst:.3} at t = {at} vs simultaneous {:.0}% band z = {z:.3}",
                    100.0 * tol.stability_level
                ),
            ));
        }
    }
    Ok(out)
}
