use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{scaled, Cloud, CoefficientModel, Dims, LionsStructure, SecondDerivatives};
use crate::error::{Error, Result};

/// A smooth potential on ℝ^d supplying gradient, Hessian and third derivative.
pub trait PotentialFn: Send + Sync + Debug {
    fn gradient(&self, x: &[f64], out: &mut [f64]);
    /// d × d.
    fn hessian(&self, x: &[f64], out: &mut [f64]);
    /// d × d × d, `[i][j][k]` = ∂³/∂x_i∂x_j∂x_k.
    fn third(&self, x: &[f64], out: &mut [f64]);
    fn bounded_gradient(&self) -> bool;
    fn is_zero(&self) -> bool {
        false
    }
}

/// Built-in potentials: `Quartic` is `a|x|⁴/4 + c|x|²/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Potential {
    Zero,
    Quadratic { c: f64 },
    Quartic { a: f64, c: f64 },
}

impl Potential {
    fn coeffs(&self) -> (f64, f64) {
        match *self {
            Potential::Zero => (0.0, 0.0),
            Potential::Quadratic { c } => (0.0, c),
            Potential::Quartic { a, c } => (a, c),
        }
    }
}

impl PotentialFn for Potential {
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let (a, c) = self.coeffs();
        let r2: f64 = x.iter().map(|v| v * v).sum();
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = a * r2 * xi + c * xi;
        }
    }

    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let (a, c) = self.coeffs();
        let d = x.len();
        let r2: f64 = x.iter().map(|v| v * v).sum();
        for i in 0..d {
            for j in 0..d {
                let delta = if i == j { 1.0 } else { 0.0 };
                out[i * d + j] = a * (r2 * delta + 2.0 * x[i] * x[j]) + c * delta;
            }
        }
    }

    fn third(&self, x: &[f64], out: &mut [f64]) {
        let (a, _) = self.coeffs();
        let d = x.len();
        let dl = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    out[(i * d + j) * d + k] =
                        2.0 * a * (x[k] * dl(i, j) + x[i] * dl(j, k) + x[j] * dl(i, k));
                }
            }
        }
    }

    fn bounded_gradient(&self) -> bool {
        matches!(self, Potential::Zero)
    }

    fn is_zero(&self) -> bool {
        matches!(self, Potential::Zero)
    }
}

/// Confinement-plus-interaction model
/// `b(x, μ) = −∇U(x) − ∫ ∇W(x − y) μ(dy)`, `σ = Σ I` (m = d).
///
/// Outside the bounded-coefficient regime whenever ∇U or ∇W is unbounded;
/// the assumption checker flags it as uncertified.
#[derive(Debug, Clone)]
pub struct ConvexPotential {
    pub u: Arc<dyn PotentialFn>,
    pub w: Arc<dyn PotentialFn>,
    pub sigma: f64,
    dim: usize,
}

impl ConvexPotential {
    pub fn new(
        u: Arc<dyn PotentialFn>,
        w: Arc<dyn PotentialFn>,
        sigma: f64,
        dim: usize,
    ) -> Result<Self> {
        if dim == 0 || !sigma.is_finite() {
            return Err(Error::invalid(
                "convex potential needs dim ≥ 1 and finite Σ",
            ));
        }
        Ok(ConvexPotential { u, w, sigma, dim })
    }

    fn interaction_mean<F>(&self, x: &[f64], cloud: &Cloud, len: usize, f: F, out: &mut [f64])
    where
        F: Fn(&dyn PotentialFn, &[f64], &mut [f64]),
    {
        let d = self.dim;
        let mut z = vec![0.0; d];
        let mut buf = vec![0.0; len];
        out.iter_mut().for_each(|v| *v = 0.0);
        for l in 0..cloud.len() {
            let y = cloud.particle(l);
            for k in 0..d {
                z[k] = x[k] - y[k];
            }
            f(self.w.as_ref(), &z, &mut buf);
            for (o, b) in out.iter_mut().zip(&buf) {
                *o += b;
            }
        }
        let n = cloud.len() as f64;
        out.iter_mut().for_each(|v| *v /= n);
    }

    fn diff(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        x.iter().zip(v).map(|(a, b)| a - b).collect()
    }
}

impl CoefficientModel for ConvexPotential {
    fn name(&self) -> &str {
        "convex_potential"
    }

    fn dims(&self) -> Dims {
        Dims {
            state: self.dim,
            noise: self.dim,
        }
    }

    fn drift(&self, x: &[f64], cloud: &Cloud, out: &mut [f64]) {
        let d = self.dim;
        let mut gu = vec![0.0; d];
        self.u.gradient(x, &mut gu);
        let mut gw = vec![0.0; d];
        self.interaction_mean(x, cloud, d, |p, z, o| p.gradient(z, o), &mut gw);
        for a in 0..d {
            out[a] = -gu[a] - gw[a];
        }
    }

    fn diffusion(&self, _x: &[f64], _cloud: &Cloud, out: &mut [f64]) {
        let d = self.dim;
        out.iter_mut().for_each(|v| *v = 0.0);
        for a in 0..d {
            out[a * d + a] = self.sigma;
        }
    }

    fn dx_drift(&self, x: &[f64], cloud: &Cloud, out: &mut [f64]) -> Result<()> {
        let d = self.dim;
        let mut hu = vec![0.0; d * d];
        self.u.hessian(x, &mut hu);
        let mut hw = vec![0.0; d * d];
        self.interaction_mean(x, cloud, d * d, |p, z, o| p.hessian(z, o), &mut hw);
        for k in 0..d * d {
            out[k] = -hu[k] - hw[k];
        }
        Ok(())
    }

    fn dx_diffusion(&self, _x: &[f64], _cloud: &Cloud, out: &mut [f64]) -> Result<()> {
        out.iter_mut().for_each(|v| *v = 0.0);
        Ok(())
    }

    fn lions_drift(&self, x: &[f64], _cloud: &Cloud, v: &[f64], out: &mut [f64]) -> Result<()> {
        if self.w.is_zero() {
            out.iter_mut().for_each(|e| *e = 0.0);
            return Ok(());
        }
        self.w.hessian(&self.diff(x, v), out);
        Ok(())
    }

    fn lions_diffusion(
        &self,
        _x: &[f64],
        _cloud: &Cloud,
        _v: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        out.iter_mut().for_each(|v| *v = 0.0);
        Ok(())
    }

    fn flat_drift(&self, x: &[f64], _cloud: &Cloud, v: &[f64], out: &mut [f64]) -> Result<()> {
        if self.w.is_zero() {
            out.iter_mut().for_each(|e| *e = 0.0);
            return Ok(());
        }
        self.w.gradient(&self.diff(x, v), out);
        out.iter_mut().for_each(|e| *e = scaled(-1.0, *e));
        Ok(())
    }

    fn flat_diffusion(
        &self,
        _x: &[f64],
        _cloud: &Cloud,
        _v: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        out.iter_mut().for_each(|v| *v = 0.0);
        Ok(())
    }

    fn second_derivatives(
        &self,
        x: &[f64],
        cloud: &Cloud,
        v: &[f64],
        _w: &[f64],
        out: &mut SecondDerivatives,
    ) -> Result<()> {
        let d = self.dim;
        let n3 = d * d * d;
        out.fill_zero();
        let mut tu = vec![0.0; n3];
        self.u.third(x, &mut tu);
        let mut tw = vec![0.0; n3];
        self.interaction_mean(x, cloud, n3, |p, z, o| p.third(z, o), &mut tw);
        for k in 0..n3 {
            out.dxx_drift[k] = -tu[k] - tw[k];
        }
        if !self.w.is_zero() {
            let mut t = vec![0.0; n3];
            self.w.third(&self.diff(x, v), &mut t);
            // ∂³W is fully symmetric, so every index ordering reads the same tensor.
            for k in 0..n3 {
                out.dmu_dx_drift[k] = t[k];
                out.dx_dmu_drift[k] = t[k];
                out.dv_dmu_drift[k] = -t[k];
            }
        }
        Ok(())
    }

    fn lions_structure(&self) -> LionsStructure {
        if self.w.is_zero() {
            LionsStructure::Zero
        } else {
            LionsStructure::General
        }
    }

    fn constant_diffusion(&self) -> bool {
        true
    }

    fn lions_lions_vanishes(&self) -> bool {
        true
    }

    fn supports_second_order(&self) -> bool {
        true
    }

    fn bounded_drift(&self) -> bool {
        self.u.bounded_gradient() && self.w.bounded_gradient()
    }

    fn bounded_diffusion(&self) -> bool {
        true
    }

    fn caveats(&self) -> Vec<String> {
        vec!["potential model lies outside the bounded-coefficient framework; results are uncertified".into()]
    }
}
