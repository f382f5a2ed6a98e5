use std::collections::BTreeMap;

use super::{table, tag, unit_seed, Check, ExperimentConfig, PlotSpec, Run, Table};
use crate::error::Result;
use crate::metrics::{fit_rate, w1_noise_floor, w1_with_stderr};
use crate::simulate::observe_averages;
use crate::variance::{limiting_variance, solve_backward_pde, PdeGrid};

const W1_GROUPS: usize = 20;

pub(super) fn run(run: &mut Run) -> Result<()> {
    let c = run.config;
    let horizon = *c.t_grid.last().expect("validated");
    let law = run.law(horizon, run.default_law())?;
    let model = run.model.clone();

    let mut reference = Table::new(&["t", "mean", "sigma2"]);
    let mut limits = Vec::new();
    for &t in &c.t_grid {
        run.at(format!("limiting variance at t = {t}"));
        let sol = solve_backward_pde(model.as_ref(), &law, &c.phi, &PdeGrid::new(c.options.pde_ds), t, c.pde_mode)?;
        let s2 = limiting_variance(&sol, &law, model.as_ref(), &c.initial)?;
        let m = law.expect(&c.phi, t)?;
        reference.push(vec![t, m, s2]);
        limits.push((m, s2));
    }
    run.table("reference", reference)?;

    let grid = run.grid_to(horizon)?;
    let steps = c
        .t_grid
        .iter()
        .map(|&t| grid.step_of(t))
        .collect::<Result<Vec<_>>>()?;
    let mut w1 = Table::new(&["n", "t", "w1", "w1_se", "sigma2", "noise_floor"]);
    for &n in &c.n_values {
        run.at(format!("simulation at N = {n}"));
        let vals = observe_averages(
            model.as_ref(),
            n,
            &grid,
            &c.initial,
            unit_seed(c.seed, 1, n as u64),
            c.replicates,
            &[&c.phi],
            &steps,
        )?;
        run.at(format!("W1 at N = {n}"));
        let sq = (n as f64).sqrt();
        for ((&t, v), &(m, s2)) in c.t_grid.iter().zip(&vals).zip(&limits) {
            let g: Vec<f64> = v[0].iter().map(|x| sq * (x - m)).collect();
            let (d, se) = w1_with_stderr(&g, s2, W1_GROUPS)?;
            w1.push(vec![n as f64, t, d, se, s2, w1_noise_floor(c.replicates, s2)]);
        }
        // Written per N so that an abort keeps the finished rows.
        run.table("w1", w1.clone())?;
    }
    let sup = sup_table(&w1)?;
    run.table("rate", sup)?;
    run.plots.push(
        PlotSpec::new("rate", "sup over t of W1(G, N(0, σ²))", ("N", true), ("W1", true))
            .line("sup W1", "rate", "n", "sup_w1", None)
            .line("noise floor", "rate", "n", "noise_floor", None),
    );
    run.plots.push(
        c.n_values.iter().fold(
            PlotSpec::new("w1_by_time", "W1(G, N(0, σ²)) by time", ("t", false), ("W1", true)),
            |p, &n| p.line(&format!("N = {n}"), "w1", "t", "w1", Some(("n", n as f64))),
        ),
    );
    Ok(())
}

/// Per N: the largest W₁ over t, its standard error and the noise floor at
/// the maximizing time.
fn sup_table(w1: &Table) -> Result<Table> {
    let mut out = Table::new(&["n", "sup_w1", "sup_w1_se", "t_max", "noise_floor"]);
    let (kn, kt, kw, ks, kf) = (
        w1.column_index("n")?,
        w1.column_index("t")?,
        w1.column_index("w1")?,
        w1.column_index("w1_se")?,
        w1.column_index("noise_floor")?,
    );
    for n in w1.distinct("n")? {
        let best = w1
            .rows
            .iter()
            .filter(|r| r[kn] == n)
            .max_by(|a, b| a[kw].total_cmp(&b[kw]))
            .expect("distinct value present");
        out.push(vec![n, best[kw], best[ks], best[kt], best[kf]]);
    }
    Ok(out)
}

pub(super) fn verdicts(c: &ExperimentConfig, tables: &BTreeMap<String, Table>) -> Result<Vec<Check>> {
    let tol = &c.options.tolerances;
    let sup = sup_table(table(tables, "w1")?)?;
    let n: Vec<usize> = sup.column("n")?.iter().map(|&x| x as usize).collect();
    let w = sup.column("sup_w1")?;
    let se = sup.column("sup_w1_se")?;
    let floor = sup.column("noise_floor")?;
    let fit = fit_rate(&n, &w, &se, tol.rate_target, tol.rate)?;
    let above: Vec<String> = n
        .iter()
        .zip(w.iter().zip(&floor))
        .map(|(n, (w, f))| format!("N={}: {:.2}x", tag(*n as f64), w / f))
        .collect();
    Ok(vec![Check::new(
        "rate_slope",
        fit.passes,
        fit.slope(),
        tol.rate_target,
        format!(
            "log-log slope {:.3} (se {:.3}) vs {} ± {}; sup W1 over the replicate noise floor: {}",
            fit.slope(),
            fit.fit.slope_se,
            tol.rate_target,
            tol.rate,
            above.join(", ")
        ),
    )])
}
