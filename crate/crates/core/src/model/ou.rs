use super::{
    scaled, Cloud, CoefficientModel, DeclaredConstants, Dims, LionsStructure, SecondDerivatives,
};
use crate::error::{Error, Result};

/// Mean-field Ornstein–Uhlenbeck model
/// `b(x, μ) = −θx + γ⟨μ, id⟩`, `σ(x, μ) = Σ I`, componentwise in ℝ^d (m = d).
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldOu {
    pub theta: f64,
    pub gamma: f64,
    pub sigma: f64,
    dim: usize,
}

impl MeanFieldOu {
    pub fn new(theta: f64, gamma: f64, sigma: f64) -> Result<Self> {
        Self::with_dim(theta, gamma, sigma, 1)
    }

    pub fn with_dim(theta: f64, gamma: f64, sigma: f64, dim: usize) -> Result<Self> {
        if ![theta, gamma, sigma].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("OU parameters must be finite"));
        }
        if dim == 0 {
            return Err(Error::invalid("OU dimension must be at least 1"));
        }
        Ok(MeanFieldOu {
            theta,
            gamma,
            sigma,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn identity_into(&self, g: f64, out: &mut [f64]) {
        let d = self.dim;
        out.iter_mut().for_each(|v| *v = 0.0);
        for a in 0..d {
            out[a * d + a] = scaled(g, 1.0);
        }
    }
}

impl CoefficientModel for MeanFieldOu {
    fn name(&self) -> &str {
        "mean_field_ou"
    }

    fn dims(&self) -> Dims {
        Dims {
            state: self.dim,
            noise: self.dim,
        }
    }

    fn drift(&self, x: &[f64], cloud: &Cloud, out: &mut [f64]) {
        let mean = cloud.mean();
        for a in 0..self.dim {
            out[a] = -self.theta * x[a] + self.gamma * mean[a];
        }
    }

    fn diffusion(&self, _x: &[f64], _cloud: &Cloud, out: &mut [f64]) {
        self.identity_into(self.sigma, out);
    }

    fn diffusion_all(&self, _cloud: &Cloud, out: &mut [f64]) {
        for block in out.chunks_exact_mut(self.dim * self.dim) {
            self.identity_into(self.sigma, block);
        }
    }

    fn drift_all(&self, cloud: &Cloud, out: &mut [f64]) {
        let d = self.dim;
        let mean = cloud.mean();
        for (o, x) in out
            .chunks_exact_mut(d)
            .zip(cloud.positions().chunks_exact(d))
        {
            for a in 0..d {
                o[a] = -self.theta * x[a] + self.gamma * mean[a];
            }
        }
    }

    fn dx_drift(&self, _x: &[f64], _cloud: &Cloud, out: &mut [f64]) -> Result<()> {
        self.identity_into(-self.theta, out);
        Ok(())
    }

    fn dx_diffusion(&self, _x: &[f64], _cloud: &Cloud, out: &mut [f64]) -> Result<()> {
        out.iter_mut().for_each(|v| *v = 0.0);
        Ok(())
    }

    fn lions_drift(&self, _x: &[f64], _cloud: &Cloud, _v: &[f64], out: &mut [f64]) -> Result<()> {
        self.identity_into(self.gamma, out);
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

    fn flat_drift(&self, _x: &[f64], _cloud: &Cloud, v: &[f64], out: &mut [f64]) -> Result<()> {
        for a in 0..self.dim {
            out[a] = scaled(self.gamma, v[a]);
        }
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
        _x: &[f64],
        _cloud: &Cloud,
        _v: &[f64],
        _w: &[f64],
        out: &mut SecondDerivatives,
    ) -> Result<()> {
        out.fill_zero();
        Ok(())
    }

    fn lions_structure(&self) -> LionsStructure {
        if self.gamma == 0.0 {
            LionsStructure::Zero
        } else {
            LionsStructure::Constant
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

    fn declared_constants(&self) -> Option<DeclaredConstants> {
        Some(DeclaredConstants {
            kappa: Some(2.0 * self.theta),
            gamma: Some(self.gamma.abs() * (self.dim as f64).sqrt()),
            m_sigma: Some(0.0),
        })
    }

    fn bounded_drift(&self) -> bool {
        self.theta == 0.0 && self.gamma == 0.0
    }

    fn bounded_diffusion(&self) -> bool {
        true
    }

    fn caveats(&self) -> Vec<String> {
        if self.bounded_drift() {
            Vec::new()
        } else {
            vec!["drift is affine and unbounded; the bounded-coefficient hypothesis fails although dissipativity holds".into()]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{eval_coefficients, eval_first_derivatives, eval_second_derivatives};

    #[test]
    fn trivial_values() {
        let m = MeanFieldOu::new(1.0, 0.0, 1.0).unwrap();
        let c = Cloud::from_scalars(&[0.3, -7.0]).unwrap();
        let (b, s) = eval_coefficients(&m, &[2.0], &c).unwrap();
        assert_eq!(b, vec![-2.0]);
        assert_eq!(s, vec![1.0]);

        let m = MeanFieldOu::new(1.0, 0.5, 1.0).unwrap();
        let c = Cloud::from_scalars(&[1.0, 1.0, 1.0]).unwrap();
        let (b, _) = eval_coefficients(&m, &[0.0], &c).unwrap();
        assert_eq!(b, vec![0.5]);
    }

    #[test]
    fn measure_independent_blocks_bitwise_zero() {
        let m = MeanFieldOu::new(1.3, 0.0, 0.7).unwrap();
        let c = Cloud::from_scalars(&[0.2, 1.1, -0.4]).unwrap();
        let f = eval_first_derivatives(&m, &[0.5], &c, &[-2.0]).unwrap();
        for v in f
            .lions_drift
            .iter()
            .chain(&f.lions_diffusion)
            .chain(&f.flat_drift)
        {
            assert_eq!(v.to_bits(), 0);
        }
        let s = eval_second_derivatives(&m, &[0.5], &c, &[1.0], &[2.0]).unwrap();
        for (_, b) in s.blocks() {
            assert!(b.iter().all(|v| v.to_bits() == 0));
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let m = MeanFieldOu::new(1.0, 0.1, 1.0).unwrap();
        let c = Cloud::from_scalars(&[0.0]).unwrap();
        assert!(eval_coefficients(&m, &[0.0, 1.0], &c).is_err());
    }
}
