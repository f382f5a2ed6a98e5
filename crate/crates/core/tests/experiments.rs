use std::fs;

use mflab::experiments::{
    load_result, parse_config, parse_workers, recheck, run_experiment, unit_seed, ExperimentConfig, ExperimentKind, Table,
};
use mflab::model::{ModelSpec, Observable};
use mflab::Error;
use serde_json::json;

fn parse(v: serde_json::Value) -> ExperimentConfig {
    parse_config(&v.to_string(), true).unwrap().config
}

fn field_of(e: Error) -> String {
    match e {
        Error::Config { field, .. } => field,
        other => panic!("expected a config error, got {other}"),
    }
}

#[test]
fn minimal_rate_config_gets_documented_defaults() {
    let c = parse(json!({"experiment": "rate", "seed": 7}));
    assert_eq!(c, ExperimentConfig::defaults(ExperimentKind::Rate, 7));
    assert_eq!(c.n_values, vec![16, 32, 64, 128, 256]);
    assert_eq!(c.t_grid, vec![0.5, 1.0, 2.0, 4.0, 8.0]);
    assert_eq!(c.replicates, 10_000);
    assert_eq!(c.phi, Observable::tanh());
    assert_eq!(c.model, ModelSpec::mean_field_ou(1.0, 0.05, 1.0));
}

#[test]
fn zero_particle_count_names_the_field() {
    let e = parse_config(&json!({"experiment": "rate", "seed": 1, "n_values": [16, 0, 64]}).to_string(), true)
        .unwrap_err();
    assert_eq!(field_of(e), "n_values[1]");
}

#[test]
fn missing_seed_and_bad_types_are_reported() {
    let e = parse_config(&json!({"experiment": "rate"}).to_string(), false).unwrap_err();
    assert_eq!(field_of(e), "seed");
    let e = parse_config(&json!({"seed": 1}).to_string(), false).unwrap_err();
    assert_eq!(field_of(e), "experiment");
    let e = parse_config(&json!({"experiment": "rate", "seed": 1, "dt": "small"}).to_string(), false).unwrap_err();
    assert_eq!(field_of(e), "dt");
    let e = parse_config(&json!({"experiment": "nonsense", "seed": 1}).to_string(), false).unwrap_err();
    assert_eq!(field_of(e), "experiment");
    let e = parse_config(&json!({"experiment": "rate", "seed": 1, "t_grid": [0.5, 0.505]}).to_string(), false)
        .unwrap_err();
    assert_eq!(field_of(e), "t_grid[1]");
}

#[test]
fn unknown_keys_strict_and_lenient() {
    let text = json!({"experiment": "decay", "seed": 3, "colour": 1, "options": {"stride": 2, "bogus": true}})
        .to_string();
    let e = parse_config(&text, true).unwrap_err();
    assert_eq!(field_of(e), "colour");
    let p = parse_config(&text, false).unwrap();
    assert_eq!(p.warnings.len(), 2);
    assert!(p.warnings.iter().any(|w| w.contains("options.bogus")));
    assert_eq!(p.config.options.stride, 2);
}

#[test]
fn canonical_round_trip() {
    for kind in ["rate", "decay", "variance", "weak-expansion", "poincare", "assumptions"] {
        let c = parse(json!({"experiment": kind, "seed": 11, "options": {"pde_ds": 0.02}}));
        let canonical = c.to_json().unwrap();
        let again = parse_config(&canonical, true).unwrap();
        assert!(again.warnings.is_empty());
        assert_eq!(again.config, c);
        assert_eq!(again.config.to_json().unwrap(), canonical);
    }
}

#[test]
fn unit_seeds_are_distinct() {
    let mut seen = std::collections::HashSet::new();
    for stage in 0..8 {
        for unit in 0..64 {
            assert!(seen.insert(unit_seed(5, stage, unit)));
        }
    }
    assert_ne!(unit_seed(5, 1, 1), unit_seed(6, 1, 1));
}

fn small(kind: &str, extra: serde_json::Value) -> ExperimentConfig {
    let mut v = json!({"experiment": kind, "seed": 2024});
    for (k, x) in extra.as_object().unwrap() {
        v[k] = x.clone();
    }
    parse(v)
}

fn assert_recheck(r: &mflab::experiments::ExperimentResult) {
    assert_eq!(recheck(r).unwrap(), r.verdicts);
    assert!(!r.verdicts.is_empty());
}

#[test]
fn small_rate_run_persists_and_rechecks() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(
        "rate",
        json!({"n_values": [4, 8, 16], "t_grid": [0.5, 1.0], "replicates": 400, "dt": 0.05,
               "options": {"pde_ds": 0.05}}),
    );
    c.output_dir = Some(dir.path().to_path_buf());
    let r = run_experiment(&c).unwrap();
    assert_recheck(&r);
    assert_eq!(r.table("w1").unwrap().rows.len(), 6);
    let loaded = load_result(dir.path()).unwrap();
    assert_eq!(loaded.tables, r.tables);
    assert_eq!(recheck(&loaded).unwrap(), r.verdicts);
    let csv = Table::read_csv(&dir.path().join("tables/w1.csv")).unwrap();
    assert_eq!(csv, r.tables["w1"]);
    assert!(dir.path().join("plots/rate.svg").exists());
    assert!(dir.path().join("config.json").exists());

    // Bytewise reproducible tables, independent of the worker count.
    let again = run_experiment(&ExperimentConfig { output_dir: None, ..c.clone() }).unwrap();
    assert_eq!(again.tables, r.tables);
}

#[test]
fn small_decay_run_on_ou() {
    let c = small("decay", json!({"n_values": [4], "replicates": 4}));
    let r = run_experiment(&c).unwrap();
    assert_recheck(&r);
    let rate = r.check("first_order_rate_theta").unwrap();
    assert!(rate.passed, "{rate:?}");
    assert!(r.check("first_order_bound").unwrap().passed);
    assert!(r.check("second_order_vanishes").unwrap().passed);
}

#[test]
fn small_decay_run_on_tanh() {
    let c = small(
        "decay",
        json!({"model": {"kind": "tanh_interaction"}, "n_values": [4], "replicates": 8,
               "options": {"search": {"samples": 256}}}),
    );
    let r = run_experiment(&c).unwrap();
    assert_recheck(&r);
    assert!(r.check("first_order_envelope").is_some());
    assert!(r.check("first_order_rate_theta").is_none());
    assert!(r.tables.contains_key("second_moments"));
}

#[test]
fn small_variance_run() {
    let c = small(
        "variance",
        json!({"n_values": [8, 16], "t_grid": [0.5, 1.0], "replicates": 4000, "dt": 0.01}),
    );
    let r = run_experiment(&c).unwrap();
    assert_recheck(&r);
    let s = r.table("sigma2").unwrap();
    for row in &s.rows {
        // Closed form and PDE are deterministic and must agree tightly.
        assert!((row[1] - row[2]).abs() / row[1] < 2e-3, "{row:?}");
    }
    assert!(r.check("analytic_vs_pde_t1").unwrap().passed);
}

#[test]
fn small_weak_expansion_run() {
    let c = small(
        "weak-expansion",
        json!({"n_values": [8, 16], "t_grid": [1.0, 2.0, 3.0, 4.0], "replicates": 2000, "dt": 0.05,
               "options": {"flat_from": 2.0}}),
    );
    let r = run_experiment(&c).unwrap();
    assert_recheck(&r);
    assert_eq!(r.verdicts.len(), 2 * 2 + 2);
}

#[test]
fn poincare_on_linear_ou_is_not_violated() {
    let c = small(
        "poincare",
        json!({"model": {"kind": "mean_field_ou", "theta": 1.0, "gamma": 0.05, "sigma": 1.0},
               "phi": {"kind": "coordinate", "index": 0},
               "n_values": [2, 4], "t_grid": [0.5, 1.0], "replicates": 4000, "dt": 0.05,
               "options": {"delta_replicates": 4}}),
    );
    let r = run_experiment(&c).unwrap();
    assert_recheck(&r);
    let p = r.table("poincare").unwrap();
    assert!(p.column("delta").unwrap().iter().all(|&d| d.abs() < 1e-20));
    assert!(p.column("bound").unwrap().iter().all(|&b| b < 1e-9));
    // F is exactly Gaussian: W₁ is at the replicate noise level.
    for (w, f) in p.column("w1").unwrap().iter().zip(p.column("noise_floor").unwrap()) {
        assert!(*w < 4.0 * f, "{w} vs floor {f}");
    }
    assert!(r.passed(), "{:?}", r.verdicts);
}

#[test]
fn small_poincare_run_on_tanh() {
    let c = small(
        "poincare",
        json!({"n_values": [2, 4], "t_grid": [0.5, 1.0], "replicates": 2000, "dt": 0.1,
               "options": {"delta_replicates": 8}}),
    );
    let r = run_experiment(&c).unwrap();
    assert_recheck(&r);
    assert!(r.table("poincare").unwrap().column("delta").unwrap().iter().all(|&d| d > 0.0));
}

#[test]
fn assumptions_run_is_deterministic() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let mut c = small("assumptions", json!({}));
    c.output_dir = Some(dir_a.path().to_path_buf());
    let a = run_experiment(&c).unwrap();
    c.output_dir = Some(dir_b.path().to_path_buf());
    let b = run_experiment(&c).unwrap();
    assert_recheck(&a);
    assert_eq!(a.attachments, b.attachments);
    let read = |d: &std::path::Path| fs::read(d.join("assumptions.json")).unwrap();
    assert_eq!(read(dir_a.path()), read(dir_b.path()));
    for name in ["kappa", "stability", "summary", "flags"] {
        let f = |d: &std::path::Path| fs::read(d.join(format!("tables/{name}.csv"))).unwrap();
        assert_eq!(f(dir_a.path()), f(dir_b.path()));
    }
    assert!(a.check("kappa_4_positive").unwrap().passed);
    assert!(!a.check("drift_bounded").unwrap().passed);
}

#[test]
fn failure_keeps_finished_tables() {
    let dir = tempfile::tempdir().unwrap();
    // A stiff drift makes the Euler scheme unstable at this step: the
    // reference table is written, then the particle simulation diverges.
    let mut c = small(
        "rate",
        json!({"model": {"kind": "mean_field_ou", "theta": 400.0, "gamma": 0.0, "sigma": 1.0},
               "n_values": [4, 8, 16], "t_grid": [0.5, 15.0], "replicates": 20, "dt": 0.05,
               "options": {"pde_ds": 0.05}}),
    );
    c.output_dir = Some(dir.path().to_path_buf());
    let e = run_experiment(&c).unwrap_err();
    assert!(matches!(e, Error::Experiment { .. }), "{e}");
    assert!(dir.path().join("error.json").exists());
    let err: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("error.json")).unwrap()).unwrap();
    assert_eq!(err["experiment"], "rate");
    assert_eq!(err["tables"], json!(["reference"]));
    assert!(dir.path().join("tables/reference.csv").exists());
    assert!(err["stage"].as_str().unwrap().contains("N = 4"));
}

#[test]
fn worker_variable_is_validated() {
    assert_eq!(parse_workers(None).unwrap(), None);
    assert_eq!(parse_workers(Some(" 3 ")).unwrap(), Some(3));
    assert_eq!(field_of(parse_workers(Some("zero")).unwrap_err()), "MFLAB_WORKERS");
    assert_eq!(field_of(parse_workers(Some("0")).unwrap_err()), "MFLAB_WORKERS");
}
