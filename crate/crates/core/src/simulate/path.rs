use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{replicate_rng, InitialLaw, TimeGrid};
use crate::error::{Error, Result};
use crate::model::{Cloud, CoefficientModel, Dims};

/// Particle positions at one time, with their random-stream lineage.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub time: f64,
    pub cloud: Cloud,
    pub replicate_id: u64,
    pub master_seed: u64,
}

/// One simulated trajectory of the N-particle system with the Brownian
/// increments that drove it.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub replicate_id: u64,
    pub master_seed: u64,
    pub grid: TimeGrid,
    /// `steps + 1` clouds, one per grid time.
    pub snapshots: Vec<Cloud>,
    /// `steps × N × m` increments ΔB, row-major.
    pub increments: Vec<f64>,
    pub noise_dim: usize,
}

impl PathRecord {
    pub fn particles(&self) -> usize {
        self.snapshots[0].len()
    }

    pub fn state_dim(&self) -> usize {
        self.snapshots[0].dim()
    }

    pub fn steps(&self) -> usize {
        self.grid.steps
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.grid.steps).map(|k| self.grid.time(k)).collect()
    }

    /// ΔB of particle `i` over step `k` (length m).
    pub fn increment(&self, k: usize, i: usize) -> &[f64] {
        let n = self.particles();
        let m = self.noise_dim;
        let base = (k * n + i) * m;
        &self.increments[base..base + m]
    }

    /// All increments of step `k` (N × m).
    pub fn step_increments(&self, k: usize) -> &[f64] {
        let nm = self.particles() * self.noise_dim;
        &self.increments[k * nm..(k + 1) * nm]
    }

    pub fn ensemble(&self, k: usize) -> ParticleEnsemble {
        ParticleEnsemble {
            time: self.grid.time(k),
            cloud: self.snapshots[k].clone(),
            replicate_id: self.replicate_id,
            master_seed: self.master_seed,
        }
    }

    /// CSV dump with columns `replicate,t,particle,x0..x{d-1}`; with
    /// `increments` set, a second block `replicate,step,particle,dB0..` follows.
    pub fn write_csv<W: Write>(&self, mut w: W, increments: bool) -> Result<()> {
        let d = self.state_dim();
        let header: Vec<String> = (0..d).map(|a| format!("x{a}")).collect();
        writeln!(w, "replicate,t,particle,{}", header.join(","))?;
        for (k, c) in self.snapshots.iter().enumerate() {
            let t = self.grid.time(k);
            for i in 0..c.len() {
                let xs: Vec<String> = c.particle(i).iter().map(|v| format!("{v:e}")).collect();
                writeln!(w, "{},{t:e},{i},{}", self.replicate_id, xs.join(","))?;
            }
        }
        if increments {
            let m = self.noise_dim;
            let header: Vec<String> = (0..m).map(|a| format!("dB{a}")).collect();
            writeln!(w, "replicate,step,particle,{}", header.join(","))?;
            for k in 0..self.steps() {
                for i in 0..self.particles() {
                    let xs: Vec<String> = self
                        .increment(k, i)
                        .iter()
                        .map(|v| format!("{v:e}"))
                        .collect();
                    writeln!(w, "{},{k},{i},{}", self.replicate_id, xs.join(","))?;
                }
            }
        }
        Ok(())
    }
}

/// Scratch buffers for repeated Euler steps.
pub(crate) struct StepBuffers {
    drift: Vec<f64>,
    diffusion: Vec<f64>,
}

impl StepBuffers {
    pub(crate) fn new(n: usize, dims: Dims) -> Self {
        StepBuffers {
            drift: vec![0.0; n * dims.state],
            diffusion: vec![0.0; n * dims.state * dims.noise],
        }
    }
}

/// In-place Euler step. Returns the index of the first non-finite particle.
pub(crate) fn euler_in_place(
    model: &dyn CoefficientModel,
    cloud: &mut Cloud,
    dt: f64,
    inc: &[f64],
    buf: &mut StepBuffers,
) -> std::result::Result<(), usize> {
    let Dims { state: d, noise: m } = model.dims();
    let n = cloud.len();
    model.drift_all(cloud, &mut buf.drift);
    model.diffusion_all(cloud, &mut buf.diffusion);
    let pos = cloud.positions_mut();
    if d == 1 && m == 1 {
        for (((x, b), s), db) in pos.iter_mut().zip(&buf.drift).zip(&buf.diffusion).zip(inc) {
            *x = *x + b * dt + s * db;
        }
    } else {
        euler_general(pos, n, d, m, dt, inc, buf);
    }
    match pos.iter().position(|v| !v.is_finite()) {
        Some(k) => Err(k / d),
        None => Ok(()),
    }
}

fn euler_general(
    pos: &mut [f64],
    n: usize,
    d: usize,
    m: usize,
    dt: f64,
    inc: &[f64],
    buf: &StepBuffers,
) {
    for i in 0..n {
        let db = &inc[i * m..(i + 1) * m];
        for a in 0..d {
            let srow = &buf.diffusion[(i * d + a) * m..(i * d + a + 1) * m];
            let mut noise = 0.0;
            for (s, b) in srow.iter().zip(db) {
                noise += s * b;
            }
            let x = &mut pos[i * d + a];
            *x = *x + buf.drift[i * d + a] * dt + noise;
        }
    }
}

/// One Euler–Maruyama step `X ← X + b(X, μ^N)dt + σ(X, μ^N)ΔB` using the
/// pre-step empirical measure.
pub fn step_system(
    ensemble: &ParticleEnsemble,
    model: &dyn CoefficientModel,
    dt: f64,
    increments: &[f64],
) -> Result<ParticleEnsemble> {
    let dims = model.dims();
    let n = ensemble.cloud.len();
    if !(dt > 0.0) {
        return Err(Error::invalid(format!(
            "time step must be positive, got {dt}"
        )));
    }
    if ensemble.cloud.dim() != dims.state {
        return Err(Error::dims(
            "ensemble dimension",
            dims.state,
            ensemble.cloud.dim(),
        ));
    }
    if increments.len() != n * dims.noise {
        return Err(Error::dims("increments", n * dims.noise, increments.len()));
    }
    let mut cloud = ensemble.cloud.clone();
    let mut buf = StepBuffers::new(n, dims);
    euler_in_place(model, &mut cloud, dt, increments, &mut buf).map_err(|p| Error::Diverged {
        replicate: ensemble.replicate_id,
        step: (ensemble.time / dt).round() as usize,
        time: ensemble.time,
        particle: p,
    })?;
    Ok(ParticleEnsemble {
        time: ensemble.time + dt,
        cloud,
        replicate_id: ensemble.replicate_id,
        master_seed: ensemble.master_seed,
    })
}

fn draw_initial(init: &InitialLaw, n: usize, d: usize, rng: &mut ChaCha8Rng) -> Result<Cloud> {
    init.validate()?;
    let pos: Vec<f64> = match *init {
        InitialLaw::Gaussian { mean, variance } => {
            let sd = variance.sqrt();
            (0..n * d)
                .map(|_| mean + sd * rng.sample::<f64, _>(StandardNormal))
                .collect()
        }
        InitialLaw::Dirac { value } => vec![value; n * d],
    };
    Ok(Cloud::from_raw(pos, d))
}

fn draw_increments(rng: &mut ChaCha8Rng, sqdt: f64, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = sqdt * rng.sample::<f64, _>(StandardNormal);
    }
}

fn check_sizes(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("particle count must be at least 1"));
    }
    Ok(())
}

/// Simulates replicate `replicate` keeping every snapshot and increment.
pub fn simulate_path(
    model: &dyn CoefficientModel,
    n: usize,
    grid: &TimeGrid,
    init: &InitialLaw,
    master_seed: u64,
    replicate: u64,
) -> Result<PathRecord> {
    check_sizes(n)?;
    let dims = model.dims();
    let mut rng = replicate_rng(master_seed, replicate);
    let mut cloud = draw_initial(init, n, dims.state, &mut rng)?;
    let nm = n * dims.noise;
    let mut increments = vec![0.0; grid.steps * nm];
    let mut snapshots = Vec::with_capacity(grid.steps + 1);
    let mut buf = StepBuffers::new(n, dims);
    let sqdt = grid.dt.sqrt();
    snapshots.push(cloud.clone());
    for k in 0..grid.steps {
        let inc = &mut increments[k * nm..(k + 1) * nm];
        draw_increments(&mut rng, sqdt, inc);
        euler_in_place(model, &mut cloud, grid.dt, inc, &mut buf).map_err(|p| Error::Diverged {
            replicate,
            step: k,
            time: grid.time(k),
            particle: p,
        })?;
        snapshots.push(cloud.clone());
    }
    Ok(PathRecord {
        replicate_id: replicate,
        master_seed,
        grid: *grid,
        snapshots,
        increments,
        noise_dim: dims.noise,
    })
}

/// Replicates `0..count`, each on its own stream, simulated in parallel and
/// returned in replicate order.
pub fn simulate_replicates(
    model: &dyn CoefficientModel,
    n: usize,
    grid: &TimeGrid,
    init: &InitialLaw,
    master_seed: u64,
    count: usize,
) -> Result<Vec<PathRecord>> {
    if count == 0 {
        return Err(Error::invalid("replicate count must be at least 1"));
    }
    (0..count as u64)
        .into_par_iter()
        .map(|r| simulate_path(model, n, grid, init, master_seed, r))
        .collect()
}

/// Streams replicate `replicate` without storing it, calling `observe(k, cloud)`
/// at every grid index `k` (including 0). Uses the same random stream as
/// [`simulate_path`], so observations agree bitwise with stored paths.
pub fn simulate_observed<F>(
    model: &dyn CoefficientModel,
    n: usize,
    grid: &TimeGrid,
    init: &InitialLaw,
    master_seed: u64,
    replicate: u64,
    mut observe: F,
) -> Result<()>
where
    F: FnMut(usize, &Cloud) -> Result<()>,
{
    check_sizes(n)?;
    let dims = model.dims();
    let mut rng = replicate_rng(master_seed, replicate);
    let mut cloud = draw_initial(init, n, dims.state, &mut rng)?;
    let nm = n * dims.noise;
    let mut inc = vec![0.0; nm];
    let mut buf = StepBuffers::new(n, dims);
    let sqdt = grid.dt.sqrt();
    observe(0, &cloud)?;
    for k in 0..grid.steps {
        draw_increments(&mut rng, sqdt, &mut inc);
        euler_in_place(model, &mut cloud, grid.dt, &inc, &mut buf).map_err(|p| {
            Error::Diverged {
                replicate,
                step: k,
                time: grid.time(k),
                particle: p,
            }
        })?;
        observe(k + 1, &cloud)?;
    }
    Ok(())
}

/// Re-runs the deterministic Euler map from `initial` with the given
/// increments (`steps × N × m`) and returns every snapshot.
pub fn replay_path(
    model: &dyn CoefficientModel,
    initial: &Cloud,
    increments: &[f64],
    dt: f64,
) -> Result<Vec<Cloud>> {
    let dims = model.dims();
    let n = initial.len();
    let nm = n * dims.noise;
    if increments.len() % nm != 0 {
        return Err(Error::dims(
            "increments",
            increments.len().div_ceil(nm) * nm,
            increments.len(),
        ));
    }
    let steps = increments.len() / nm;
    let mut cloud = initial.clone();
    let mut out = Vec::with_capacity(steps + 1);
    out.push(cloud.clone());
    let mut buf = StepBuffers::new(n, dims);
    for k in 0..steps {
        euler_in_place(
            model,
            &mut cloud,
            dt,
            &increments[k * nm..(k + 1) * nm],
            &mut buf,
        )
        .map_err(|p| Error::Diverged {
            replicate: 0,
            step: k,
            time: k as f64 * dt,
            particle: p,
        })?;
        out.push(cloud.clone());
    }
    Ok(out)
}
