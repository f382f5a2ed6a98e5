use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{table, Check, ExperimentConfig, PlotSpec, Run, Table};
use crate::constants::check_assumptions;
use crate::error::Result;
use crate::malliavin::{
    envelope_check, fit_decay, DecayTarget, FirstOrderFlow, MomentAccumulator, MomentCurve, SecondOrderFlow, Source,
    SourcePair, TangentScheme,
};
use crate::simulate::simulate_path;

use super::unit_seed;

fn frobenius(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(super) fn run(run: &mut Run) -> Result<()> {
    let c = run.config;
    let model = run.model.clone();
    run.at("assumption constants");
    let report = check_assumptions(model.as_ref(), &c.options.search)?;
    let k4 = report.kappa.get(&4).copied().unwrap_or(f64::NAN);
    let k8 = report.kappa.get(&8).copied().unwrap_or(f64::NAN);
    let omega_hat = report.omega_hat.unwrap_or(f64::NAN);
    let mut constants = Table::new(&["kappa4", "kappa8", "omega_hat"]);
    constants.push(vec![k4, k8, omega_hat]);
    run.table("constants", constants)?;

    let source_t = c.options.decay_source;
    let horizon = source_t + c.t_grid.last().expect("validated");
    let grid = run.grid_to(horizon)?;
    let s0 = grid.step_of(source_t)?;
    let u_steps = c
        .t_grid
        .iter()
        .map(|&lag| grid.step_of(source_t + lag))
        .collect::<Result<Vec<_>>>()?;
    let n = c.n_values[0];
    let dims = model.dims();
    let m = dims.noise;
    let sources: Vec<Source> = (0..n)
        .flat_map(|j| (0..m).map(move |a| Source { step: s0, particle: j, noise: a }))
        .collect();
    let second = c.options.second_order && model.supports_second_order();
    let pairs: Vec<SourcePair> = if second {
        (0..n)
            .flat_map(|j| {
                (0..m).flat_map(move |a| {
                    (0..m).map(move |b| {
                        SourcePair::new(
                            Source { step: s0, particle: j, noise: a },
                            Source { step: s0, particle: j, noise: b },
                        )
                    })
                })
            })
            .collect()
    } else {
        Vec::new()
    };

    run.at(format!("tangent propagation at N = {n}"));
    let seed = unit_seed(c.seed, 2, n as u64);
    let per_rep: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)> = (0..c.replicates as u64)
        .into_par_iter()
        .map(|r| {
            let path = simulate_path(model.as_ref(), n, &grid, &c.initial, seed, r)?;
            let first = FirstOrderFlow::new(&path, model.as_ref(), sources.clone(), TangentScheme::Euler)?;
            let mut d1 = Vec::with_capacity(u_steps.len());
            let mut d2 = Vec::with_capacity(u_steps.len());
            if second {
                let mut flow = SecondOrderFlow::new(first, pairs.clone())?;
                for &u in &u_steps {
                    flow.advance_to(u)?;
                    let f1 = flow.first().field();
                    d1.push(
                        (0..n)
                            .map(|j| frobenius(&f1.entry(s0, j, j, m).expect("source present")))
                            .collect(),
                    );
                    let f2 = flow.field()?;
                    d2.push(
                        (0..n)
                            .map(|j| {
                                let base = j * m * m;
                                (0..m * m)
                                    .map(|q| f2.value(base + q, j).iter().map(|x| x * x).sum::<f64>())
                                    .sum::<f64>()
                                    .sqrt()
                            })
                            .collect(),
                    );
                }
            } else {
                let mut flow = first;
                for &u in &u_steps {
                    flow.advance_to(u)?;
                    let f1 = flow.field();
                    d1.push(
                        (0..n)
                            .map(|j| frobenius(&f1.entry(s0, j, j, m).expect("source present")))
                            .collect(),
                    );
                }
            }
            Ok((d1, d2))
        })
        .collect::<Result<_>>()?;

    run.at("moment curves");
    let p = c.options.moment_order;
    let mut acc1 = MomentAccumulator::new(p, c.t_grid.clone())?;
    let mut acc2 = MomentAccumulator::new(p, c.t_grid.clone())?;
    for (d1, d2) in &per_rep {
        acc1.push(d1)?;
        if second {
            acc2.push(d2)?;
        }
    }
    run.table("first_moments", curve_table(&acc1.curve()?))?;
    if second {
        run.table("second_moments", curve_table(&acc2.curve()?))?;
    }
    let mut plot = PlotSpec::new("decay", "moments of diagonal Malliavin derivatives", ("u - s", false), ("moment", true))
        .line("first order", "first_moments", "lag", "moment", None);
    if second {
        plot = plot.line("second order", "second_moments", "lag", "moment", None);
    }
    run.plots.push(plot);
    Ok(())
}

fn curve_table(curve: &MomentCurve) -> Table {
    let mut t = Table::new(&["lag", "moment", "stderr"]);
    for k in 0..curve.len() {
        t.push(vec![curve.lags[k], curve.moments[k], curve.stderr[k]]);
    }
    t
}

fn table_curve(t: &Table, p: f64) -> Result<MomentCurve> {
    Ok(MomentCurve {
        p,
        lags: t.column("lag")?,
        moments: t.column("moment")?,
        stderr: t.column("stderr")?,
    })
}

pub(super) fn verdicts(c: &ExperimentConfig, tables: &BTreeMap<String, Table>) -> Result<Vec<Check>> {
    let tol = &c.options.tolerances;
    let p = c.options.moment_order;
    let constants = table(tables, "constants")?;
    let k4 = constants.column("kappa4")?[0];
    let omega_hat = constants.column("omega_hat")?[0];
    let mut out = Vec::new();

    let first = table_curve(table(tables, "first_moments")?, p)?;
    if k4 > 0.0 {
        let fit = fit_decay(&first, DecayTarget::First { kappa_p: k4 }, tol.decay_bound)?;
        out.push(Check::new(
            "first_order_bound",
            fit.bound_holds,
            fit.slope,
            fit.threshold,
            format!(
                "log-moment slope {:.4} vs certified −κ₄/8 = {:.4} (+{} allowance)",
                fit.slope, fit.threshold, tol.decay_bound
            ),
        ));
        let env = envelope_check(&first, k4 / 8.0, tol.envelope_z)?;
        out.push(Check::new(
            "first_order_envelope",
            env.holds,
            env.max_excess,
            tol.envelope_z,
            format!("largest excess over C·exp(−κ₄(u−s)/8) with C = {:.4}", env.constant),
        ));
        if let Some(ou) = c.model.as_ou() {
            let rel = (fit.rate - ou.theta).abs() / ou.theta.abs();
            out.push(Check::new(
                "first_order_rate_theta",
                rel <= tol.theta_rate,
                fit.rate,
                ou.theta,
                format!("fitted rate {:.5} vs θ = {}: relative error {:.4}", fit.rate, ou.theta, rel),
            ));
        }
    } else {
        out.push(Check::new(
            "first_order_bound",
            false,
            k4,
            0.0,
            "κ₄ is not positive: no certified rate",
        ));
    }

    if let Some(t2) = tables.get("second_moments") {
        let second = table_curve(t2, p)?;
        let largest = second.moments.iter().copied().fold(0.0, f64::max);
        if second.moments.iter().all(|&x| x == 0.0) {
            out.push(Check::new(
                "second_order_vanishes",
                true,
                largest,
                0.0,
                "every second-order moment is exactly 0",
            ));
        } else if omega_hat > 0.0 {
            let fit = fit_decay(&second, DecayTarget::Second { omega_hat }, tol.decay_bound)?;
            out.push(Check::new(
                "second_order_bound",
                fit.bound_holds,
                fit.slope,
                fit.threshold,
                format!("log-moment slope {:.4} vs certified −ω̂ = {:.4}", fit.slope, fit.threshold),
            ));
            let env = envelope_check(&second, omega_hat, tol.envelope_z)?;
            out.push(Check::new(
                "second_order_envelope",
                env.holds,
                env.max_excess,
                tol.envelope_z,
                format!("largest excess over C·exp(−ω̂(u−s)) with C = {:.4}", env.constant),
            ));
        } else {
            out.push(Check::new(
                "second_order_bound",
                false,
                omega_hat,
                0.0,
                "ω̂ is not positive: no certified rate",
            ));
        }
    }
    Ok(out)
}
