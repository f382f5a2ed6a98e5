use std::collections::BTreeMap;

use super::{table, tag, unit_seed, Check, ExperimentConfig, PlotSpec, Run, Table};
use crate::error::Result;
use crate::model::Observable;
use crate::simulate::observe_averages;
use crate::variance::{
    empirical_variance, extrapolate, limiting_variance, ou_identity_variance, solve_backward_pde, variance_gap,
    Estimate, PdeGrid, VarianceCurve,
};

fn is_identity(phi: &Observable) -> bool {
    *phi == Observable::coordinate()
}

pub(super) fn run(run: &mut Run) -> Result<()> {
    let c = run.config;
    let model = run.model.clone();
    let horizon = *c.t_grid.last().expect("validated");
    let law = run.law(horizon, run.default_law())?;

    let analytic: Vec<f64> = match c.model.as_ou() {
        Some(ou) if is_identity(&c.phi) => {
            run.at("closed-form variance");
            c.t_grid
                .iter()
                .map(|&t| ou_identity_variance(&ou, &c.initial, t, c.pde_mode))
                .collect::<Result<_>>()?
        }
        _ => {
            run.note("no closed-form variance for this model and observable");
            vec![f64::NAN; c.t_grid.len()]
        }
    };
    let mut pde = Vec::with_capacity(c.t_grid.len());
    for &t in &c.t_grid {
        run.at(format!("backward PDE at t = {t}"));
        let sol = solve_backward_pde(model.as_ref(), &law, &c.phi, &PdeGrid::new(c.options.pde_ds), t, c.pde_mode)?;
        pde.push(limiting_variance(&sol, &law, model.as_ref(), &c.initial)?);
    }

    let grid = run.grid_to(horizon)?;
    let steps = c
        .t_grid
        .iter()
        .map(|&t| grid.step_of(t))
        .collect::<Result<Vec<_>>>()?;
    let mut mc = Table::new(&["n", "t", "sigma2", "stderr"]);
    for &n in &c.n_values {
        run.at(format!("Monte Carlo variance at N = {n}"));
        let vals = observe_averages(
            model.as_ref(),
            n,
            &grid,
            &c.initial,
            unit_seed(c.seed, 3, n as u64),
            c.replicates,
            &[&c.phi],
            &steps,
        )?;
        for (&t, v) in c.t_grid.iter().zip(&vals) {
            let e = empirical_variance(&v[0], n)?;
            mc.push(vec![n as f64, t, e.value, e.stderr]);
        }
        run.table("mc", mc.clone())?;
    }

    run.at("extrapolation");
    let mut sigma2 = Table::new(&["t", "analytic", "pde", "mc_limit", "mc_limit_se"]);
    for (k, &t) in c.t_grid.iter().enumerate() {
        let ex = extrapolate_at(&mc, t)?;
        sigma2.push(vec![t, analytic[k], pde[k], ex.value, ex.stderr]);
    }
    run.table("sigma2", sigma2)?;
    run.plots.push(
        PlotSpec::new("variance", "limiting variance", ("t", false), ("σ²", false))
            .line("closed form", "sigma2", "t", "analytic", None)
            .line("backward PDE", "sigma2", "t", "pde", None)
            .line("Monte Carlo, N → ∞", "sigma2", "t", "mc_limit", None),
    );
    run.plots.push(
        PlotSpec::new("variance_gap", "sup over t of |σ²_N − σ²|", ("N", true), ("gap", true))
            .line("gap", "gap", "n", "sup_gap", None),
    );
    let curve = curve_from(c, &run.tables["sigma2"], &mc)?;
    let gap = variance_gap(&curve)?;
    let mut g = Table::new(&["n", "sup_gap", "stderr", "noise_dominated"]);
    for k in 0..gap.n_values.len() {
        g.push(vec![
            gap.n_values[k] as f64,
            gap.sup_gap[k],
            gap.stderr[k],
            f64::from(u8::from(gap.noise_dominated[k])),
        ]);
    }
    run.table("gap", g)?;
    Ok(())
}

fn extrapolate_at(mc: &Table, t: f64) -> Result<Estimate> {
    let rows = mc.filter("t", t)?;
    let n: Vec<usize> = rows.column("n")?.iter().map(|&x| x as usize).collect();
    let est: Vec<Estimate> = rows
        .column("sigma2")?
        .into_iter()
        .zip(rows.column("stderr")?)
        .map(|(value, stderr)| Estimate { value, stderr })
        .collect();
    Ok(extrapolate(&n, &est)?.limit)
}

fn curve_from(c: &ExperimentConfig, sigma2: &Table, mc: &Table) -> Result<VarianceCurve> {
    let analytic = sigma2.column("analytic")?;
    let mut sigma2_mc = BTreeMap::new();
    for n in mc.distinct("n")? {
        let rows = mc.filter("n", n)?;
        let est = rows
            .column("sigma2")?
            .into_iter()
            .zip(rows.column("stderr")?)
            .map(|(value, stderr)| Estimate { value, stderr })
            .collect();
        sigma2_mc.insert(n as usize, est);
    }
    Ok(VarianceCurve {
        t_grid: c.t_grid.clone(),
        sigma2_pde: Some(sigma2.column("pde")?),
        sigma2_analytic: analytic.iter().all(|v| v.is_finite()).then_some(analytic),
        sigma2_mc,
    })
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().min(b.abs())
}

pub(super) fn verdicts(c: &ExperimentConfig, tables: &BTreeMap<String, Table>) -> Result<Vec<Check>> {
    let tol = &c.options.tolerances;
    let sigma2 = table(tables, "sigma2")?;
    let mc = table(tables, "mc")?;
    let mut out = Vec::new();
    let (kt, ka, kp, km) = (
        sigma2.column_index("t")?,
        sigma2.column_index("analytic")?,
        sigma2.column_index("pde")?,
        sigma2.column_index("mc_limit")?,
    );
    for row in &sigma2.rows {
        let t = tag(row[kt]);
        let mut pair = |name: &str, a: f64, b: f64| {
            let r = relative(a, b);
            out.push(Check::new(
                format!("{name}_t{t}"),
                r <= tol.relative_variance,
                r,
                tol.relative_variance,
                format!("{a:.6} vs {b:.6}"),
            ));
        };
        if row[ka].is_finite() {
            pair("analytic_vs_pde", row[ka], row[kp]);
            pair("analytic_vs_mc", row[ka], row[km]);
        }
        pair("pde_vs_mc", row[kp], row[km]);
    }
    let gap = variance_gap(&curve_from(c, sigma2, mc)?)?;
    let (passed, slope, detail) = match &gap.fit {
        Some(fit) => (
            (fit.slope - tol.gap_target).abs() <= tol.gap,
            fit.slope,
            format!(
                "slope {:.3} (se {:.3}) vs {} ± {}; gaps {:?}, noise-dominated {:?}",
                fit.slope, fit.slope_se, tol.gap_target, tol.gap, gap.sup_gap, gap.noise_dominated
            ),
        ),
        None => (false, f64::NAN, format!("no log-log fit: gaps {:?}", gap.sup_gap)),
    };
    out.push(Check::new("variance_gap_slope", passed, slope, tol.gap_target, detail));
    Ok(out)
}
