use super::{scaled, Cloud, CoefficientModel, Dims, LionsStructure, SecondDerivatives};
use crate::error::{Error, Result};

/// Clouds larger than this use the mesh convolution in [`TanhInteraction::drift_all`].
pub const MESH_THRESHOLD: usize = 4096;
const MESH_NODES: usize = 512;

/// Scalar model with a smooth bounded interaction
/// `b(x, μ) = −θx + ε sin x + γ ∫ tanh(x − y) μ(dy)`, `σ(x) = Σ₀ + Σ₁ cos x`.
#[derive(Debug, Clone, PartialEq)]
pub struct TanhInteraction {
    pub theta: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub sigma0: f64,
    pub sigma1: f64,
}

impl Default for TanhInteraction {
    fn default() -> Self {
        TanhInteraction {
            theta: 1.0,
            epsilon: 0.2,
            gamma: 0.05,
            sigma0: 1.0,
            sigma1: 0.05,
        }
    }
}

#[inline]
fn sech2(z: f64) -> f64 {
    let t = z.tanh();
    1.0 - t * t
}

impl TanhInteraction {
    pub fn new(theta: f64, epsilon: f64, gamma: f64, sigma0: f64, sigma1: f64) -> Result<Self> {
        if ![theta, epsilon, gamma, sigma0, sigma1]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::invalid("tanh-interaction parameters must be finite"));
        }
        Ok(TanhInteraction {
            theta,
            epsilon,
            gamma,
            sigma0,
            sigma1,
        })
    }

    fn mean_over<F: Fn(f64) -> f64>(cloud: &Cloud, x: f64, f: F) -> f64 {
        let ps = cloud.positions();
        ps.iter().map(|&y| f(x - y)).sum::<f64>() / ps.len() as f64
    }

    /// (1/N) Σ_ℓ tanh(x_k − X^ℓ) on a uniform mesh via cloud-in-cell
    /// deposition, then linear interpolation back to the particles.
    fn mesh_interaction(&self, xs: &[f64], out: &mut [f64]) {
        let (lo, hi) = xs
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
                (a.min(x), b.max(x))
            });
        let span = (hi - lo).max(1e-6);
        let nodes = MESH_NODES;
        let h = span / (nodes - 1) as f64;
        let mut mass = vec![0.0; nodes];
        for &x in xs {
            let u = ((x - lo) / h).clamp(0.0, (nodes - 1) as f64);
            let k = (u.floor() as usize).min(nodes - 2);
            let f = u - k as f64;
            mass[k] += 1.0 - f;
            mass[k + 1] += f;
        }
        let n = xs.len() as f64;
        let kernel: Vec<f64> = (0..nodes).map(|j| (j as f64 * h).tanh()).collect();
        let mut field = vec![0.0; nodes];
        for (k, fk) in field.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (b, &w) in mass.iter().enumerate() {
                if w != 0.0 {
                    acc += if k >= b {
                        w * kernel[k - b]
                    } else {
                        -w * kernel[b - k]
                    };
                }
            }
            *fk = acc / n;
        }
        for (o, &x) in out.iter_mut().zip(xs) {
            let u = ((x - lo) / h).clamp(0.0, (nodes - 1) as f64);
            let k = (u.floor() as usize).min(nodes - 2);
            let f = u - k as f64;
            *o = (1.0 - f) * field[k] + f * field[k + 1];
        }
    }
}

impl CoefficientModel for TanhInteraction {
    fn name(&self) -> &str {
        "tanh_interaction"
    }

    fn dims(&self) -> Dims {
        Dims { state: 1, noise: 1 }
    }

    fn drift(&self, x: &[f64], cloud: &Cloud, out: &mut [f64]) {
        let x = x[0];
        let inter = Self::mean_over(cloud, x, f64::tanh);
        out[0] = -self.theta * x + self.epsilon * x.sin() + self.gamma * inter;
    }

    fn diffusion(&self, x: &[f64], _cloud: &Cloud, out: &mut [f64]) {
        out[0] = self.sigma0 + self.sigma1 * x[0].cos();
    }

    fn drift_all(&self, cloud: &Cloud, out: &mut [f64]) {
        let xs = cloud.positions();
        if xs.len() > MESH_THRESHOLD && self.gamma != 0.0 {
            self.mesh_interaction(xs, out);
            for (o, &x) in out.iter_mut().zip(xs) {
                *o = -self.theta * x + self.epsilon * x.sin() + self.gamma * *o;
            }
        } else {
            for (o, &x) in out.iter_mut().zip(xs) {
                let inter = Self::mean_over(cloud, x, f64::tanh);
                *o = -self.theta * x + self.epsilon * x.sin() + self.gamma * inter;
            }
        }
    }

    fn dx_drift(&self, x: &[f64], cloud: &Cloud, out: &mut [f64]) -> Result<()> {
        let x = x[0];
        out[0] = -self.theta
            + self.epsilon * x.cos()
            + scaled(self.gamma, Self::mean_over(cloud, x, sech2));
        Ok(())
    }

    fn dx_diffusion(&self, x: &[f64], _cloud: &Cloud, out: &mut [f64]) -> Result<()> {
        out[0] = -self.sigma1 * x[0].sin();
        Ok(())
    }

    fn lions_drift(&self, x: &[f64], _cloud: &Cloud, v: &[f64], out: &mut [f64]) -> Result<()> {
        out[0] = scaled(self.gamma, -sech2(x[0] - v[0]));
        Ok(())
    }

    fn lions_diffusion(
        &self,
        _x: &[f64],
        _cloud: &Cloud,
        _v: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        out[0] = 0.0;
        Ok(())
    }

    fn flat_drift(&self, x: &[f64], _cloud: &Cloud, v: &[f64], out: &mut [f64]) -> Result<()> {
        out[0] = scaled(self.gamma, (x[0] - v[0]).tanh());
        Ok(())
    }

    fn flat_diffusion(
        &self,
        _x: &[f64],
        _cloud: &Cloud,
        _v: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        out[0] = 0.0;
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
        let x = x[0];
        // d/dz sech²(z) = −2 sech²(z) tanh(z)
        let dsech2 = |z: f64| -2.0 * sech2(z) * z.tanh();
        let zv = x - v[0];
        out.dxx_drift[0] =
            -self.epsilon * x.sin() + scaled(self.gamma, Self::mean_over(cloud, x, dsech2));
        out.dmu_dx_drift[0] = scaled(self.gamma, -dsech2(zv));
        out.dx_dmu_drift[0] = scaled(self.gamma, -dsech2(zv));
        out.dv_dmu_drift[0] = scaled(self.gamma, dsech2(zv));
        out.dmumu_drift[0] = 0.0;
        out.dxx_diffusion[0] = -self.sigma1 * x.cos();
        out.dmu_dx_diffusion[0] = 0.0;
        out.dx_dmu_diffusion[0] = 0.0;
        out.dv_dmu_diffusion[0] = 0.0;
        out.dmumu_diffusion[0] = 0.0;
        Ok(())
    }

    fn lions_structure(&self) -> LionsStructure {
        if self.gamma == 0.0 {
            LionsStructure::Zero
        } else {
            LionsStructure::General
        }
    }

    fn constant_diffusion(&self) -> bool {
        self.sigma1 == 0.0
    }

    fn lions_lions_vanishes(&self) -> bool {
        true
    }

    fn supports_second_order(&self) -> bool {
        true
    }

    fn bounded_drift(&self) -> bool {
        self.theta == 0.0
    }

    fn bounded_diffusion(&self) -> bool {
        true
    }

    fn caveats(&self) -> Vec<String> {
        if self.theta != 0.0 {
            vec!["confining term −θx is unbounded; the bounded-coefficient hypothesis fails although dissipativity may hold".into()]
        } else {
            Vec::new()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn drift_matches_scalar_loop() {
        let m = TanhInteraction::default();
        let xs = [0.4, -1.3, 2.2, 0.0, 0.9];
        let c = Cloud::from_scalars(&xs).unwrap();
        let mut out = [0.0];
        for &x in &[-2.0, 0.1, 3.5] {
            m.drift(&[x], &c, &mut out);
            let mut acc = 0.0;
            for y in xs {
                acc += (x - y).tanh();
            }
            let want = -m.theta * x + m.epsilon * x.sin() + m.gamma * acc / 5.0;
            assert!((out[0] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn mesh_interaction_close_to_direct_sum() {
        let m = TanhInteraction::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..6000).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let c = Cloud::from_scalars(&xs).unwrap();
        let mut mesh = vec![0.0; xs.len()];
        m.drift_all(&c, &mut mesh);
        for k in (0..xs.len()).step_by(397) {
            let mut direct = [0.0];
            m.drift(&[xs[k]], &c, &mut direct);
            assert!((mesh[k] - direct[0]).abs() < 1e-6, "particle {k}");
        }
    }
}
