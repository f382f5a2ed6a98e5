use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{table, tag, unit_seed, Check, ExperimentConfig, PlotSpec, Run, Table};
use crate::error::Result;
use crate::malliavin::{cell_grid, vidotto_bound, AdjointContext, DeltaAccumulator, DeltaOptions};
use crate::metrics::{w1_noise_floor, w1_with_stderr};
use crate::simulate::{observe_averages, simulate_path};
use crate::stats;

const W1_GROUPS: usize = 20;
const DELTA_GROUPS: usize = 10;
/// Paths whose derivatives are held in memory at once.
const CHUNK: usize = 8;

pub(super) fn run(run: &mut Run) -> Result<()> {
    let c = run.config;
    let model = run.model.clone();
    let horizon = *c.t_grid.last().expect("validated");
    let grid = run.grid_to(horizon)?;
    let steps = c
        .t_grid
        .iter()
        .map(|&t| grid.step_of(t))
        .collect::<Result<Vec<_>>>()?;
    let m = model.dims().noise;
    let mut out = Table::new(&[
        "n",
        "t",
        "sigma2",
        "w1",
        "w1_se",
        "noise_floor",
        "delta",
        "delta_se",
        "bound",
        "bound_se",
    ]);
    for &n in &c.n_values {
        run.at(format!("fluctuation sample at N = {n}"));
        let vals = observe_averages(
            model.as_ref(),
            n,
            &grid,
            &c.initial,
            unit_seed(c.seed, 5, n as u64),
            c.replicates,
            &[&c.phi],
            &steps,
        )?;
        let sq = (n as f64).sqrt();
        let mut w1 = Vec::with_capacity(c.t_grid.len());
        for v in &vals {
            let centre = stats::mean(&v[0]);
            let f: Vec<f64> = v[0].iter().map(|x| sq * (x - centre)).collect();
            let s2 = stats::variance(&f);
            let (d, se) = w1_with_stderr(&f, s2, W1_GROUPS)?;
            w1.push((s2, d, se, w1_noise_floor(c.replicates, s2)));
        }

        run.at(format!("Δ functional at N = {n}"));
        let opts = DeltaOptions {
            coverage: c.options.coverage,
            groups: DELTA_GROUPS,
            strict: c.strict,
            ..DeltaOptions::default()
        };
        let mut accs = c
            .t_grid
            .iter()
            .zip(&steps)
            .map(|(&t, &k)| {
                let cells = cell_grid(k, c.options.stride, n, m);
                DeltaAccumulator::new(t, n, cells, c.options.stride as f64 * c.dt, opts)
            })
            .collect::<Result<Vec<_>>>()?;
        let plan: Vec<(Vec<_>, Vec<usize>)> = accs
            .iter()
            .map(|a| (a.cells().to_vec(), a.rows_needed().to_vec()))
            .collect();
        let seed = unit_seed(c.seed, 6, n as u64);
        let reps: Vec<u64> = (0..c.options.delta_replicates as u64).collect();
        for chunk in reps.chunks(CHUNK) {
            let derivs: Vec<Vec<(Vec<f64>, DMatrix<f64>)>> = chunk
                .par_iter()
                .map(|&r| {
                    let path = simulate_path(model.as_ref(), n, &grid, &c.initial, seed, r)?;
                    c.t_grid
                        .iter()
                        .zip(&plan)
                        .map(|(&t, (cells, rows))| {
                            let ctx = AdjointContext::new(&path, model.as_ref(), &c.phi, t, cells.clone(), true)?;
                            Ok((ctx.df(), ctx.d2f_rows(rows)?))
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?;
            for per_t in derivs {
                for (acc, (df, rows)) in accs.iter_mut().zip(per_t) {
                    acc.push(&df, &rows)?;
                }
            }
        }
        for (k, acc) in accs.into_iter().enumerate() {
            let t = c.t_grid[k];
            let pf = acc.finish()?;
            if let Some(w) = &pf.warning {
                run.note(format!("N = {n}, t = {t}: {w}"));
            }
            let (s2, d, se, floor) = w1[k];
            let delta_se = pf.estimator_variance.sqrt();
            let bound = vidotto_bound(pf.delta, s2)?;
            let scale = (8.0 / (std::f64::consts::PI * s2)).sqrt();
            let bound_se = if pf.delta > 0.0 {
                bound * delta_se / (2.0 * pf.delta)
            } else {
                scale * delta_se.sqrt()
            };
            out.push(vec![n as f64, t, s2, d, se, floor, pf.delta, delta_se, bound, bound_se]);
        }
        run.table("poincare", out.clone())?;
    }
    run.plots.push(c.t_grid.iter().fold(
        PlotSpec::new("delta", "Δ against N", ("N", true), ("Δ", true)),
        |p, &t| p.line(&format!("t = {t}"), "poincare", "n", "delta", Some(("t", t))),
    ));
    run.plots.push(c.n_values.iter().fold(
        PlotSpec::new("poincare", "Gaussian-approximation bound and empirical W1", ("t", false), ("distance", true)),
        |p, &n| {
            p.line(&format!("bound, N = {n}"), "poincare", "t", "bound", Some(("n", n as f64)))
                .line(&format!("W1, N = {n}"), "poincare", "t", "w1", Some(("n", n as f64)))
        },
    ));
    Ok(())
}

pub(super) fn verdicts(c: &ExperimentConfig, tables: &BTreeMap<String, Table>) -> Result<Vec<Check>> {
    let tol = &c.options.tolerances;
    let z = tol.poincare_z;
    let p = table(tables, "poincare")?;
    let col = |name: &str| p.column_index(name);
    let (kn, kt, kw, kws, kf, kb, kbs) = (
        col("n")?,
        col("t")?,
        col("w1")?,
        col("w1_se")?,
        col("noise_floor")?,
        col("bound")?,
        col("bound_se")?,
    );
    let mut out = Vec::new();
    for r in &p.rows {
        // W₁(law, γ) ≥ W₁(sample, γ) − W₁(sample, law); the last term is
        // replaced by its expected size, the replicate noise floor.
        let lower = r[kw] - r[kf] - z * r[kws];
        let upper = r[kb] + z * r[kbs];
        out.push(Check::new(
            format!("inequality_n{}_t{}", tag(r[kn]), tag(r[kt])),
            upper >= lower,
            lower,
            upper,
            format!(
                "bound {:.5} (se {:.5}) vs W1 {:.5} (se {:.5}, noise floor {:.5})",
                r[kb], r[kbs], r[kw], r[kws], r[kf]
            ),
        ));
    }
    for t in p.distinct("t")? {
        let rows = p.filter("t", t)?;
        let n = rows.column("n")?;
        let delta = rows.column("delta")?;
        let name = format!("delta_slope_t{}", tag(t));
        if delta.iter().all(|&d| d == 0.0) {
            out.push(Check::new(name, true, f64::NAN, tol.delta_slope_max, "Δ vanishes at every N"));
        } else if n.len() < 2 || delta.iter().any(|&d| !(d > 0.0)) {
            out.push(Check::new(
                name,
                false,
                f64::NAN,
                tol.delta_slope_max,
                format!("no log-log fit for Δ = {delta:?}"),
            ));
        } else {
            let x: Vec<f64> = n.iter().map(|v| v.ln()).collect();
            let y: Vec<f64> = delta.iter().map(|v| v.ln()).collect();
            let fit = stats::ols(&x, &y)?;
            out.push(Check::new(
                name,
                fit.slope <= tol.delta_slope_max,
                fit.slope,
                tol.delta_slope_max,
                format!("log Δ against log N: slope {:.3} (se {:.3})", fit.slope, fit.slope_se),
            ));
        }
    }
    Ok(out)
}
