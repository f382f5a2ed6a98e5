//! Euler–Maruyama simulation of the particle system and of its mean-field
//! law flow, with per-replicate random streams.

mod fluct;
mod law;
mod path;

pub use fluct::{
    empirical_average, fluctuation_samples, fluctuations_from_values, observe_averages,
    FluctuationSamples,
};
pub use law::{
    law_flow, GaussianFlow, LawFlow, LawFlowKind, QuadratureNodes, ReferenceFlow, ReferenceOptions,
};
pub use path::{
    replay_path, simulate_observed, simulate_path, simulate_replicates, step_system,
    ParticleEnsemble, PathRecord,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform time grid `t_k = k·dt`, `k = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, steps: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!(
                "time step must be positive, got {dt}"
            )));
        }
        Ok(TimeGrid { dt, steps })
    }

    /// Grid reaching `horizon`, which must be a multiple of `dt` (to 1e-9 relative).
    pub fn to_horizon(dt: f64, horizon: f64) -> Result<Self> {
        let g = TimeGrid::new(dt, 0)?;
        let steps = g.step_of(horizon)?;
        Ok(TimeGrid { dt, steps })
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.steps)
    }

    /// Step index of time `t`, rejecting times off the grid.
    pub fn step_of(&self, t: f64) -> Result<usize> {
        let k = (t / self.dt).round();
        if !(t >= 0.0) || (k * self.dt - t).abs() > 1e-9 * t.abs().max(self.dt) {
            return Err(Error::Grid(format!(
                "t = {t} is not on the grid with dt = {}",
                self.dt
            )));
        }
        Ok(k as usize)
    }

    /// Like [`step_of`](Self::step_of) but also requires `t ≤ horizon`.
    pub fn index_within(&self, t: f64) -> Result<usize> {
        let k = self.step_of(t)?;
        if k > self.steps {
            return Err(Error::Grid(format!(
                "t = {t} lies beyond the horizon {}",
                self.horizon()
            )));
        }
        Ok(k)
    }
}

/// Initial law ν of the particles, applied independently to every coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialLaw {
    Gaussian { mean: f64, variance: f64 },
    Dirac { value: f64 },
}

impl Default for InitialLaw {
    fn default() -> Self {
        InitialLaw::Gaussian {
            mean: 0.0,
            variance: 1.0,
        }
    }
}

impl InitialLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            InitialLaw::Gaussian { mean, variance } => {
                if !mean.is_finite() || !(variance >= 0.0) || !variance.is_finite() {
                    return Err(Error::invalid(
                        "initial law needs finite mean and variance ≥ 0",
                    ));
                }
            }
            InitialLaw::Dirac { value } => {
                if !value.is_finite() {
                    return Err(Error::invalid("initial point must be finite"));
                }
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        match *self {
            InitialLaw::Gaussian { mean, .. } => mean,
            InitialLaw::Dirac { value } => value,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            InitialLaw::Gaussian { variance, .. } => variance,
            InitialLaw::Dirac { .. } => 0.0,
        }
    }
}

/// Random stream for `(master_seed, replicate)`: ChaCha8 keyed by the master
/// seed, with the replicate id selecting the stream. Streams are independent
/// of how many replicates are run or in which order.
pub fn replicate_rng(master_seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(replicate);
    rng
}
