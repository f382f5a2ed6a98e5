use std::collections::BTreeMap;

use super::{table, Check, ExperimentConfig, Run, Table};
use crate::constants::{check_assumptions, Status};
use crate::error::{Error, Result};

fn code(s: Status) -> f64 {
    match s {
        Status::Pass => 1.0,
        Status::Fail => 0.0,
        Status::NotApplicable => -1.0,
        Status::Unchecked => -2.0,
    }
}

pub(super) fn run(run: &mut Run) -> Result<()> {
    let c = run.config;
    let model = run.model.clone();
    run.at("assumption search");
    let report = check_assumptions(model.as_ref(), &c.options.search)?;
    let opt = |v: Option<f64>| v.unwrap_or(f64::NAN);

    let mut kappa = Table::new(&["p", "kappa"]);
    for (p, k) in &report.kappa {
        kappa.push(vec![f64::from(*p), *k]);
    }
    run.table("kappa", kappa)?;
    let mut constants = Table::new(&["p", "lambda", "xi", "eta"]);
    for (p, l) in &report.lambda {
        constants.push(vec![
            f64::from(*p),
            *l,
            opt(report.xi.get(p).copied()),
            opt(report.eta.get(p).copied()),
        ]);
    }
    run.table("stability", constants)?;
    let mut summary = Table::new(&["gamma", "m_sigma", "m2", "omega", "eta4_second", "omega_hat"]);
    summary.push(vec![
        opt(report.gamma),
        opt(report.m_sigma),
        opt(report.m2),
        opt(report.omega),
        opt(report.eta4_second),
        opt(report.omega_hat),
    ]);
    run.table("summary", summary)?;
    // Status codes: 1 pass, 0 fail, -1 not applicable, -2 unchecked.
    let mut flags = Table::labelled(&["status", "value"]);
    for v in &report.flags {
        flags.push_labelled(&v.check, vec![code(v.status), opt(v.value)]);
    }
    run.table("flags", flags)?;
    for caveat in &report.caveats {
        run.note(caveat.clone());
    }
    run.attachments
        .insert("assumptions".into(), serde_json::to_value(&report)?);
    Ok(())
}

pub(super) fn verdicts(_: &ExperimentConfig, tables: &BTreeMap<String, Table>) -> Result<Vec<Check>> {
    let flags = table(tables, "flags")?;
    let labels = flags
        .labels
        .as_ref()
        .ok_or_else(|| Error::MissingDependency("flags table has no labels".into()))?;
    let (ks, kv) = (flags.column_index("status")?, flags.column_index("value")?);
    Ok(labels
        .iter()
        .zip(&flags.rows)
        .map(|(name, r)| {
            let status = match r[ks] as i64 {
                1 => "pass",
                0 => "fail",
                -1 => "not applicable",
                _ => "unchecked",
            };
            Check::new(name.clone(), r[ks] != 0.0, r[kv], f64::NAN, status)
        })
        .collect())
}
