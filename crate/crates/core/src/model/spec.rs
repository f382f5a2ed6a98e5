use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{CoefficientModel, ConvexPotential, MeanFieldOu, Potential, TanhInteraction};
use crate::error::Result;

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn default_gamma() -> f64 {
    0.05
}
fn default_epsilon() -> f64 {
    0.2
}
fn default_sigma1() -> f64 {
    0.05
}

/// Serializable description of a built-in model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    MeanFieldOu {
        #[serde(default = "one")]
        theta: f64,
        #[serde(default = "default_gamma")]
        gamma: f64,
        #[serde(default = "one")]
        sigma: f64,
        #[serde(default = "one_usize")]
        dim: usize,
    },
    TanhInteraction {
        #[serde(default = "one")]
        theta: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
        #[serde(default = "default_gamma")]
        gamma: f64,
        #[serde(default = "one")]
        sigma0: f64,
        #[serde(default = "default_sigma1")]
        sigma1: f64,
    },
    ConvexPotential {
        u: Potential,
        w: Potential,
        #[serde(default = "one")]
        sigma: f64,
        #[serde(default = "one_usize")]
        dim: usize,
    },
}

impl ModelSpec {
    /// Tanh interaction with its default parameters.
    pub fn tanh_interaction() -> Self {
        let m = TanhInteraction::default();
        ModelSpec::TanhInteraction {
            theta: m.theta,
            epsilon: m.epsilon,
            gamma: m.gamma,
            sigma0: m.sigma0,
            sigma1: m.sigma1,
        }
    }

    /// Scalar mean-field OU.
    pub fn mean_field_ou(theta: f64, gamma: f64, sigma: f64) -> Self {
        ModelSpec::MeanFieldOu {
            theta,
            gamma,
            sigma,
            dim: 1,
        }
    }

    pub fn build(&self) -> Result<Arc<dyn CoefficientModel>> {
        Ok(match *self {
            ModelSpec::MeanFieldOu {
                theta,
                gamma,
                sigma,
                dim,
            } => Arc::new(MeanFieldOu::with_dim(theta, gamma, sigma, dim)?),
            ModelSpec::TanhInteraction {
                theta,
                epsilon,
                gamma,
                sigma0,
                sigma1,
            } => Arc::new(TanhInteraction::new(theta, epsilon, gamma, sigma0, sigma1)?),
            ModelSpec::ConvexPotential { u, w, sigma, dim } => {
                Arc::new(ConvexPotential::new(Arc::new(u), Arc::new(w), sigma, dim)?)
            }
        })
    }

    /// The OU model when this spec describes one.
    pub fn as_ou(&self) -> Option<MeanFieldOu> {
        match *self {
            ModelSpec::MeanFieldOu {
                theta,
                gamma,
                sigma,
                dim,
            } => MeanFieldOu::with_dim(theta, gamma, sigma, dim).ok(),
            _ => None,
        }
    }

    pub fn state_dim(&self) -> usize {
        match *self {
            ModelSpec::MeanFieldOu { dim, .. } | ModelSpec::ConvexPotential { dim, .. } => dim,
            ModelSpec::TanhInteraction { .. } => 1,
        }
    }
}
