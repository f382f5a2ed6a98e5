use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mflab::constants::{check_assumptions, SearchSpec};
use mflab::experiments::{load_result, parse_config, render_plots, run_experiment, ExperimentResult, WORKERS_ENV};
use mflab::model::ModelSpec;
use serde_json::{Map, Value};

/// Mean-field particle system laboratory.
#[derive(Parser)]
#[command(name = "mflab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Reject unknown config keys and turn estimator-variance warnings
        /// into errors.
        #[arg(long)]
        strict: bool,
        /// Run directory (overrides `output_dir`; default `runs/<experiment>-<seed>`).
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Worker-pool size.
        #[arg(long, env = WORKERS_ENV)]
        workers: Option<usize>,
    },
    /// Check the structural assumptions of a model, given as a model kind and
    /// `key=value` parameters, e.g. `tanh_interaction theta=1 gamma=0.05`.
    CheckAssumptions {
        model: String,
        params: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Random-search candidates per estimate.
        #[arg(long)]
        samples: Option<usize>,
        /// Print the JSON report instead of the summary.
        #[arg(long)]
        json: bool,
    },
    /// Render the plots of a finished run.
    Plot { run_dir: PathBuf },
    /// Parse and validate a config, printing its canonical form.
    Validate {
        config: PathBuf,
        #[arg(long)]
        strict: bool,
    },
}

fn read(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn print_verdicts(r: &ExperimentResult) {
    for c in &r.verdicts {
        println!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    for n in &r.notes {
        println!("note: {n}");
    }
}

fn model_spec(kind: &str, params: &[String]) -> Result<ModelSpec, String> {
    let mut obj = Map::new();
    obj.insert("kind".into(), Value::String(kind.into()));
    for p in params {
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| format!("parameter `{p}` is not of the form key=value"))?;
        let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.into()));
        obj.insert(k.into(), value);
    }
    serde_json::from_value(Value::Object(obj)).map_err(|e| format!("model `{kind}`: {e}"))
}

fn execute(cli: Cli) -> Result<bool, String> {
    match cli.command {
        Command::Run {
            config,
            strict,
            output,
            workers,
        } => {
            let parsed = parse_config(&read(&config)?, strict).map_err(|e| e.to_string())?;
            for w in &parsed.warnings {
                eprintln!("warning: {w}");
            }
            let mut c = parsed.config;
            c.strict |= strict;
            c.output_dir = output
                .or(c.output_dir)
                .or_else(|| Some(PathBuf::from(format!("runs/{}-{}", c.experiment.name(), c.seed))));
            if let Some(n) = workers {
                std::env::set_var(WORKERS_ENV, n.to_string());
            }
            let r = run_experiment(&c).map_err(|e| e.to_string())?;
            print_verdicts(&r);
            println!(
                "{} in {:.1} s; results in {}",
                if r.passed() { "passed" } else { "failed" },
                r.metadata.wall_clock_seconds,
                c.output_dir.as_deref().unwrap_or(Path::new(".")).display()
            );
            Ok(r.passed())
        }
        Command::CheckAssumptions {
            model,
            params,
            seed,
            samples,
            json,
        } => {
            let spec = model_spec(&model, &params)?;
            let m = spec.build().map_err(|e| e.to_string())?;
            let mut search = SearchSpec::default();
            if let Some(s) = seed {
                search.seed = s;
            }
            if let Some(s) = samples {
                search.samples = s;
            }
            let report = check_assumptions(m.as_ref(), &search).map_err(|e| e.to_string())?;
            if json {
                println!("{}", report.to_json().map_err(|e| e.to_string())?);
            } else {
                print!("{}", report.summary());
            }
            Ok(report.passes())
        }
        Command::Plot { run_dir } => {
            let r = load_result(&run_dir).map_err(|e| e.to_string())?;
            for p in render_plots(&r, &run_dir.join("plots")).map_err(|e| e.to_string())? {
                println!("{}", p.display());
            }
            Ok(true)
        }
        Command::Validate { config, strict } => {
            let parsed = parse_config(&read(&config)?, strict).map_err(|e| e.to_string())?;
            for w in &parsed.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", parsed.config.to_json().map_err(|e| e.to_string())?);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
