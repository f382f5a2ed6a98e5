//! Coefficient models `b(x, μ)`, `σ(x, μ)` evaluated against empirical clouds,
//! with closed-form state, Lions and linear-functional derivatives.
//!
//! Index conventions (`d` state dimension, `m` noise dimension, all buffers
//! row-major):
//!
//! | block                 | shape         | entry                                   |
//! |-----------------------|---------------|-----------------------------------------|
//! | `dx_drift`            | d × d         | `[a][c]` = ∂b_a/∂x_c                    |
//! | `dx_diffusion`        | d × m × d     | `[a][α][c]` = ∂σ_{aα}/∂x_c              |
//! | `lions_drift`         | d × d         | `[a][e]` = ∂_μ b_a(x, μ)(v)_e           |
//! | `lions_diffusion`     | d × m × d     | `[a][α][e]`                             |
//! | `flat_drift`          | d             | δb_a/δm(x, μ)(v)                        |
//! | `flat_diffusion`      | d × m         | δσ_{aα}/δm(x, μ)(v)                     |
//!
//! Second-order blocks add one trailing index: `dxx [a][c1][c2]`,
//! `dmu_dx [a][c][e]` (Lions derivative of ∂_{x_c} b_a in direction `v`),
//! `dx_dmu [a][e][c]` (∂_{x_c} of the Lions block), `dv_dmu [a][e][f]`
//! (∂_{v_f}) and `dmumu [a][e][f]` (Lions derivative of the Lions block,
//! first direction `v`, second direction `w`). Diffusion blocks carry the
//! `[a][α]` prefix instead of `[a]`.

mod cloud;
mod consistency;
mod convex;
mod ou;
mod spec;
mod tanh;
mod test_fn;

pub use cloud::Cloud;
pub use consistency::{
    check_derivative_consistency, check_derivative_consistency_with, ConsistencyCheck,
    ConsistencyReport, FdSteps,
};
pub use convex::{ConvexPotential, Potential, PotentialFn};
pub use ou::MeanFieldOu;
pub use spec::ModelSpec;
pub use tanh::TanhInteraction;
pub use test_fn::{check_test_function, Observable, TestFunction};

use std::fmt::Debug;

use crate::error::{Error, Result};

/// State and noise dimensions `(d, m)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub state: usize,
    pub noise: usize,
}

/// How the Lions derivatives depend on their arguments. Used to pick cheaper
/// particle-coupling representations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LionsStructure {
    /// All measure derivatives vanish identically.
    Zero,
    /// ∂_μ b and ∂_μ σ are constant in (x, μ, v).
    Constant,
    General,
}

/// Analytic values a model may declare for the dissipativity constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeclaredConstants {
    /// κ_p for every p (models with state-independent σ).
    pub kappa: Option<f64>,
    pub gamma: Option<f64>,
    pub m_sigma: Option<f64>,
}

/// Coefficients of the mean-field system together with their derivatives.
///
/// Every method is a pure function of its arguments. Derivative methods
/// default to an unsupported-capability error.
pub trait CoefficientModel: Send + Sync + Debug {
    fn name(&self) -> &str;

    fn dims(&self) -> Dims;

    /// b(x, μ) into `out` (length d).
    fn drift(&self, x: &[f64], cloud: &Cloud, out: &mut [f64]);

    /// σ(x, μ) into `out` (d × m).
    fn diffusion(&self, x: &[f64], cloud: &Cloud, out: &mut [f64]);

    /// Drift at every particle of `cloud` against `cloud` itself (N × d).
    fn drift_all(&self, cloud: &Cloud, out: &mut [f64]) {
        let d = self.dims().state;
        for i in 0..cloud.len() {
            self.drift(cloud.particle(i), cloud, &mut out[i * d..(i + 1) * d]);
        }
    }

    /// Diffusion at every particle (N × d × m).
    fn diffusion_all(&self, cloud: &Cloud, out: &mut [f64]) {
        let Dims { state: d, noise: m } = self.dims();
        for i in 0..cloud.len() {
            self.diffusion(
                cloud.particle(i),
                cloud,
                &mut out[i * d * m..(i + 1) * d * m],
            );
        }
    }

    fn dx_drift(&self, _x: &[f64], _cloud: &Cloud, _out: &mut [f64]) -> Result<()> {
        Err(Error::unsupported(
            self.name(),
            "state derivative of the drift",
        ))
    }

    fn dx_diffusion(&self, _x: &[f64], _cloud: &Cloud, _out: &mut [f64]) -> Result<()> {
        Err(Error::unsupported(
            self.name(),
            "state derivative of the diffusion",
        ))
    }

    fn lions_drift(&self, _x: &[f64], _cloud: &Cloud, _v: &[f64], _out: &mut [f64]) -> Result<()> {
        Err(Error::unsupported(
            self.name(),
            "Lions derivative of the drift",
        ))
    }

    fn lions_diffusion(
        &self,
        _x: &[f64],
        _cloud: &Cloud,
        _v: &[f64],
        _out: &mut [f64],
    ) -> Result<()> {
        Err(Error::unsupported(
            self.name(),
            "Lions derivative of the diffusion",
        ))
    }

    fn flat_drift(&self, _x: &[f64], _cloud: &Cloud, _v: &[f64], _out: &mut [f64]) -> Result<()> {
        Err(Error::unsupported(
            self.name(),
            "linear functional derivative of the drift",
        ))
    }

    fn flat_diffusion(
        &self,
        _x: &[f64],
        _cloud: &Cloud,
        _v: &[f64],
        _out: &mut [f64],
    ) -> Result<()> {
        Err(Error::unsupported(
            self.name(),
            "linear functional derivative of the diffusion",
        ))
    }

    /// Fills every second-order block at `(x, μ)` with Lions directions `v`, `w`.
    fn second_derivatives(
        &self,
        _x: &[f64],
        _cloud: &Cloud,
        _v: &[f64],
        _w: &[f64],
        _out: &mut SecondDerivatives,
    ) -> Result<()> {
        Err(Error::unsupported(self.name(), "second derivatives"))
    }

    fn lions_structure(&self) -> LionsStructure {
        LionsStructure::General
    }

    /// True when σ is a constant matrix (all of its derivatives vanish).
    fn constant_diffusion(&self) -> bool {
        false
    }

    /// True when ∂²_μμ b and ∂²_μμ σ vanish identically.
    fn lions_lions_vanishes(&self) -> bool {
        false
    }

    fn supports_second_order(&self) -> bool {
        false
    }

    fn declared_constants(&self) -> Option<DeclaredConstants> {
        None
    }

    fn bounded_drift(&self) -> bool;

    fn bounded_diffusion(&self) -> bool;

    /// Free-form caveats reported by the assumption checker.
    fn caveats(&self) -> Vec<String> {
        Vec::new()
    }
}

/// First-order derivative blocks at one evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstDerivatives {
    pub dx_drift: Vec<f64>,
    pub dx_diffusion: Vec<f64>,
    pub lions_drift: Vec<f64>,
    pub lions_diffusion: Vec<f64>,
    pub flat_drift: Vec<f64>,
    pub flat_diffusion: Vec<f64>,
}

/// Second-order derivative blocks at one evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondDerivatives {
    pub dxx_drift: Vec<f64>,
    pub dmu_dx_drift: Vec<f64>,
    pub dx_dmu_drift: Vec<f64>,
    pub dv_dmu_drift: Vec<f64>,
    pub dmumu_drift: Vec<f64>,
    pub dxx_diffusion: Vec<f64>,
    pub dmu_dx_diffusion: Vec<f64>,
    pub dx_dmu_diffusion: Vec<f64>,
    pub dv_dmu_diffusion: Vec<f64>,
    pub dmumu_diffusion: Vec<f64>,
}

impl SecondDerivatives {
    pub fn zeros(dims: Dims) -> Self {
        let d = dims.state;
        let db = d * d * d;
        let ds = d * dims.noise * d * d;
        SecondDerivatives {
            dxx_drift: vec![0.0; db],
            dmu_dx_drift: vec![0.0; db],
            dx_dmu_drift: vec![0.0; db],
            dv_dmu_drift: vec![0.0; db],
            dmumu_drift: vec![0.0; db],
            dxx_diffusion: vec![0.0; ds],
            dmu_dx_diffusion: vec![0.0; ds],
            dx_dmu_diffusion: vec![0.0; ds],
            dv_dmu_diffusion: vec![0.0; ds],
            dmumu_diffusion: vec![0.0; ds],
        }
    }

    pub fn fill_zero(&mut self) {
        for v in self.blocks_mut() {
            v.iter_mut().for_each(|e| *e = 0.0);
        }
    }

    pub(crate) fn blocks(&self) -> [(&'static str, &Vec<f64>); 10] {
        [
            ("dxx_drift", &self.dxx_drift),
            ("dmu_dx_drift", &self.dmu_dx_drift),
            ("dx_dmu_drift", &self.dx_dmu_drift),
            ("dv_dmu_drift", &self.dv_dmu_drift),
            ("dmumu_drift", &self.dmumu_drift),
            ("dxx_diffusion", &self.dxx_diffusion),
            ("dmu_dx_diffusion", &self.dmu_dx_diffusion),
            ("dx_dmu_diffusion", &self.dx_dmu_diffusion),
            ("dv_dmu_diffusion", &self.dv_dmu_diffusion),
            ("dmumu_diffusion", &self.dmumu_diffusion),
        ]
    }

    fn blocks_mut(&mut self) -> [&mut Vec<f64>; 10] {
        [
            &mut self.dxx_drift,
            &mut self.dmu_dx_drift,
            &mut self.dx_dmu_drift,
            &mut self.dv_dmu_drift,
            &mut self.dmumu_drift,
            &mut self.dxx_diffusion,
            &mut self.dmu_dx_diffusion,
            &mut self.dx_dmu_diffusion,
            &mut self.dv_dmu_diffusion,
            &mut self.dmumu_diffusion,
        ]
    }
}

fn check_point(model: &dyn CoefficientModel, x: &[f64], cloud: &Cloud) -> Result<Dims> {
    let dims = model.dims();
    if x.len() != dims.state {
        return Err(Error::dims("evaluation point", dims.state, x.len()));
    }
    if cloud.dim() != dims.state {
        return Err(Error::dims("cloud dimension", dims.state, cloud.dim()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("evaluation point must be finite"));
    }
    Ok(dims)
}

fn check_direction(dims: Dims, v: &[f64], what: &str) -> Result<()> {
    if v.len() != dims.state {
        return Err(Error::dims(what, dims.state, v.len()));
    }
    Ok(())
}

/// b(x, μ^N) and σ(x, μ^N) for the empirical measure of `cloud`.
pub fn eval_coefficients(
    model: &dyn CoefficientModel,
    x: &[f64],
    cloud: &Cloud,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let dims = check_point(model, x, cloud)?;
    let mut b = vec![0.0; dims.state];
    let mut s = vec![0.0; dims.state * dims.noise];
    model.drift(x, cloud, &mut b);
    model.diffusion(x, cloud, &mut s);
    Ok((b, s))
}

/// All first-order blocks at `x` with Lions direction `v`.
pub fn eval_first_derivatives(
    model: &dyn CoefficientModel,
    x: &[f64],
    cloud: &Cloud,
    v: &[f64],
) -> Result<FirstDerivatives> {
    let dims = check_point(model, x, cloud)?;
    check_direction(dims, v, "Lions direction")?;
    let (d, m) = (dims.state, dims.noise);
    let mut out = FirstDerivatives {
        dx_drift: vec![0.0; d * d],
        dx_diffusion: vec![0.0; d * m * d],
        lions_drift: vec![0.0; d * d],
        lions_diffusion: vec![0.0; d * m * d],
        flat_drift: vec![0.0; d],
        flat_diffusion: vec![0.0; d * m],
    };
    model.dx_drift(x, cloud, &mut out.dx_drift)?;
    model.dx_diffusion(x, cloud, &mut out.dx_diffusion)?;
    model.lions_drift(x, cloud, v, &mut out.lions_drift)?;
    model.lions_diffusion(x, cloud, v, &mut out.lions_diffusion)?;
    model.flat_drift(x, cloud, v, &mut out.flat_drift)?;
    model.flat_diffusion(x, cloud, v, &mut out.flat_diffusion)?;
    Ok(out)
}

/// All second-order blocks at `x` with Lions directions `v` and `w`.
pub fn eval_second_derivatives(
    model: &dyn CoefficientModel,
    x: &[f64],
    cloud: &Cloud,
    v: &[f64],
    w: &[f64],
) -> Result<SecondDerivatives> {
    let dims = check_point(model, x, cloud)?;
    check_direction(dims, v, "first Lions direction")?;
    check_direction(dims, w, "second Lions direction")?;
    let mut out = SecondDerivatives::zeros(dims);
    model.second_derivatives(x, cloud, v, w, &mut out)?;
    Ok(out)
}

/// `g · value`, returning +0.0 when `g` is zero so measure-independent
/// parameterisations produce bitwise-zero measure derivatives.
#[inline]
pub(crate) fn scaled(g: f64, value: f64) -> f64 {
    if g == 0.0 {
        0.0
    } else {
        g * value
    }
}
