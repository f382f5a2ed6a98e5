//! Numerical laboratory for mean-field interacting particle systems.

pub mod constants;
pub mod error;
pub mod experiments;
pub mod malliavin;
pub mod metrics;
pub mod model;
pub mod normal;
pub mod quadrature;
pub mod simulate;
pub mod stats;
pub mod variance;

pub use error::{Error, Result};
