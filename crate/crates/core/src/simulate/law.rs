use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{simulate_observed, InitialLaw, TimeGrid};
use crate::error::{Error, Result};
use crate::model::{Cloud, CoefficientModel, MeanFieldOu, ModelSpec, TestFunction};
use crate::quadrature::GaussHermite;

const GH_NODES: usize = 64;

/// Closed-form Gaussian law flow of the scalar mean-field OU model.
///
/// With `discrete_dt = Some(dt)` the moments follow the N → ∞ limit of the
/// Euler scheme instead of the continuous-time ODEs.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFlow {
    pub m0: f64,
    pub v0: f64,
    pub theta: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub discrete_dt: Option<f64>,
}

impl GaussianFlow {
    pub fn new(ou: &MeanFieldOu, init: &InitialLaw, discrete_dt: Option<f64>) -> Result<Self> {
        if ou.dim() != 1 {
            return Err(Error::unsupported(
                "mean_field_ou",
                "analytic Gaussian law flow in dimension > 1",
            ));
        }
        init.validate()?;
        if let Some(dt) = discrete_dt {
            if !(dt > 0.0) {
                return Err(Error::invalid("discrete law flow needs dt > 0"));
            }
        }
        Ok(GaussianFlow {
            m0: init.mean(),
            v0: init.variance(),
            theta: ou.theta,
            gamma: ou.gamma,
            sigma: ou.sigma,
            discrete_dt,
        })
    }

    pub fn mean(&self, t: f64) -> f64 {
        let lam = self.theta - self.gamma;
        match self.discrete_dt {
            None => self.m0 * (-lam * t).exp(),
            Some(dt) => {
                let k = (t / dt).round();
                self.m0 * (1.0 - lam * dt).powf(k)
            }
        }
    }

    pub fn variance(&self, t: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        match self.discrete_dt {
            None => {
                if self.theta == 0.0 {
                    self.v0 + s2 * t
                } else {
                    let e = (-2.0 * self.theta * t).exp();
                    self.v0 * e - s2 * (-2.0 * self.theta * t).exp_m1() / (2.0 * self.theta)
                }
            }
            Some(dt) => {
                let k = (t / dt).round();
                let q = (1.0 - self.theta * dt).powi(2);
                let qk = q.powf(k);
                let geo = if (1.0 - q).abs() < 1e-300 {
                    k
                } else {
                    (1.0 - qk) / (1.0 - q)
                };
                qk * self.v0 + s2 * dt * geo
            }
        }
    }
}

/// Law flow approximated by one large particle system.
#[derive(Debug, Clone)]
pub struct ReferenceFlow {
    pub grid: TimeGrid,
    pub n_ref: usize,
    pub seed: u64,
    /// Full clouds at the requested steps.
    pub clouds: BTreeMap<usize, Cloud>,
    /// Compressed quadrature clouds at every step: for d = 1, means of
    /// equal-mass quantile groups of the sorted cloud; otherwise the first
    /// particles (which are exchangeable).
    pub nodes: Vec<Vec<f64>>,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceOptions {
    pub n_ref: usize,
    pub seed: u64,
    pub quadrature_points: usize,
    /// Grid times whose full clouds are retained.
    pub keep_times: Vec<f64>,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        ReferenceOptions {
            n_ref: 1 << 14,
            seed: 0x1a_2b_3c_4d,
            quadrature_points: 256,
            keep_times: Vec::new(),
        }
    }
}

impl ReferenceFlow {
    pub fn simulate(
        model: &dyn CoefficientModel,
        init: &InitialLaw,
        grid: &TimeGrid,
        opts: &ReferenceOptions,
    ) -> Result<Self> {
        let d = model.dims().state;
        let keep: Vec<usize> = opts
            .keep_times
            .iter()
            .map(|&t| grid.index_within(t))
            .collect::<Result<_>>()?;
        let q = opts.quadrature_points.clamp(1, opts.n_ref);
        let mut clouds = BTreeMap::new();
        let mut nodes = Vec::with_capacity(grid.steps + 1);
        simulate_observed(model, opts.n_ref, grid, init, opts.seed, 0, |k, c| {
            if keep.contains(&k) {
                clouds.insert(k, c.clone());
            }
            nodes.push(compress(c, q));
            Ok(())
        })?;
        Ok(ReferenceFlow {
            grid: *grid,
            n_ref: opts.n_ref,
            seed: opts.seed,
            clouds,
            nodes,
            dim: d,
        })
    }
}

fn compress(c: &Cloud, q: usize) -> Vec<f64> {
    let n = c.len();
    if c.dim() != 1 {
        return c.positions()[..q * c.dim()].to_vec();
    }
    let mut xs = c.positions().to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    (0..q)
        .map(|g| {
            let lo = g * n / q;
            let hi = (g + 1) * n / q;
            xs[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Weighted nodes representing μ_t for quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureNodes {
    /// k × d, row-major.
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub dim: usize,
}

impl QuadratureNodes {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k * self.dim..(k + 1) * self.dim]
    }

    pub fn expect<F: FnMut(&[f64]) -> f64>(&self, mut f: F) -> f64 {
        (0..self.len())
            .map(|k| self.weights[k] * f(self.point(k)))
            .sum()
    }

    /// The nodes as an equally weighted cloud (valid when weights are uniform).
    pub fn as_cloud(&self) -> Cloud {
        Cloud::from_raw(self.points.clone(), self.dim)
    }
}

/// The limiting law flow (μ_t).
#[derive(Debug, Clone)]
pub enum LawFlow {
    AnalyticGaussian(GaussianFlow),
    ReferenceCloud(ReferenceFlow),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawFlowKind {
    AnalyticGaussian,
    /// Analytic moments of the Euler scheme's mean-field limit.
    AnalyticDiscrete,
    ReferenceCloud,
}

impl LawFlow {
    pub fn dim(&self) -> usize {
        match self {
            LawFlow::AnalyticGaussian(_) => 1,
            LawFlow::ReferenceCloud(r) => r.dim,
        }
    }

    pub fn is_analytic(&self) -> bool {
        matches!(self, LawFlow::AnalyticGaussian(_))
    }

    /// Largest time available.
    pub fn horizon(&self) -> f64 {
        match self {
            LawFlow::AnalyticGaussian(_) => f64::INFINITY,
            LawFlow::ReferenceCloud(r) => r.grid.horizon(),
        }
    }

    /// Mean and variance of the first coordinate at time `t`.
    pub fn moments(&self, t: f64) -> Result<(f64, f64)> {
        match self {
            LawFlow::AnalyticGaussian(g) => Ok((g.mean(t), g.variance(t))),
            LawFlow::ReferenceCloud(r) => {
                let k = r.grid.index_within(t)?;
                let xs: Vec<f64> = match r.clouds.get(&k) {
                    Some(c) => (0..c.len()).map(|i| c.particle(i)[0]).collect(),
                    None => r.nodes[k].chunks(r.dim).map(|p| p[0]).collect(),
                };
                Ok((crate::stats::mean(&xs), crate::stats::variance(&xs)))
            }
        }
    }

    /// Quadrature representation of μ_t.
    pub fn nodes(&self, t: f64) -> Result<QuadratureNodes> {
        match self {
            LawFlow::AnalyticGaussian(g) => {
                let gh = GaussHermite::new(GH_NODES);
                let (m, sd) = (g.mean(t), g.variance(t).sqrt());
                Ok(QuadratureNodes {
                    points: gh.nodes.iter().map(|z| m + sd * z).collect(),
                    weights: gh.weights,
                    dim: 1,
                })
            }
            LawFlow::ReferenceCloud(r) => {
                let k = r.grid.index_within(t)?;
                let pts = r.nodes[k].clone();
                let q = pts.len() / r.dim;
                Ok(QuadratureNodes {
                    points: pts,
                    weights: vec![1.0 / q as f64; q],
                    dim: r.dim,
                })
            }
        }
    }

    /// Equally weighted cloud standing in for μ_t when evaluating
    /// coefficients: `k` equal-mass bin means for the Gaussian flow (exact
    /// mean), the stored quantile-group means for reference flows.
    pub fn measure_cloud(&self, t: f64, k: usize) -> Result<Cloud> {
        match self {
            LawFlow::AnalyticGaussian(g) => {
                if k == 0 {
                    return Err(Error::invalid("measure cloud needs at least one point"));
                }
                let (m, sd) = (g.mean(t), g.variance(t).sqrt());
                let kf = k as f64;
                let edges: Vec<f64> = (0..=k)
                    .map(|i| match i {
                        0 => f64::NEG_INFINITY,
                        _ if i == k => f64::INFINITY,
                        _ => crate::normal::quantile(i as f64 / kf),
                    })
                    .collect();
                let pdf = |z: f64| {
                    if z.is_finite() {
                        crate::normal::pdf(z)
                    } else {
                        0.0
                    }
                };
                let mut pts: Vec<f64> = (0..k)
                    .map(|i| m + sd * kf * (pdf(edges[i]) - pdf(edges[i + 1])))
                    .collect();
                // Symmetrize so that the cloud mean is m to rounding.
                for i in 0..k / 2 {
                    let a = 0.5 * ((pts[i] - m) - (pts[k - 1 - i] - m));
                    pts[i] = m + a;
                    pts[k - 1 - i] = m - a;
                }
                if k % 2 == 1 {
                    pts[k / 2] = m;
                }
                Cloud::new(pts, 1)
            }
            LawFlow::ReferenceCloud(r) => {
                let idx = r.grid.index_within(t)?;
                Cloud::new(r.nodes[idx].clone(), r.dim)
            }
        }
    }

    /// ⟨μ_t, f⟩. Reference flows use the full cloud when it was retained.
    pub fn expect_fn(&self, f: &dyn Fn(&[f64]) -> f64, t: f64) -> Result<f64> {
        if let LawFlow::ReferenceCloud(r) = self {
            let k = r.grid.index_within(t)?;
            if let Some(c) = r.clouds.get(&k) {
                let s: f64 = (0..c.len()).map(|i| f(c.particle(i))).sum();
                return Ok(s / c.len() as f64);
            }
        }
        Ok(self.nodes(t)?.expect(f))
    }

    pub fn expect(&self, phi: &dyn TestFunction, t: f64) -> Result<f64> {
        self.expect_fn(&|x| phi.value(x), t)
    }
}

/// Builds the law flow of `spec` started from `init`.
pub fn law_flow(
    spec: &ModelSpec,
    init: &InitialLaw,
    kind: LawFlowKind,
    grid: &TimeGrid,
    opts: &ReferenceOptions,
) -> Result<LawFlow> {
    match kind {
        LawFlowKind::AnalyticGaussian | LawFlowKind::AnalyticDiscrete => {
            let ou = spec.as_ou().ok_or_else(|| {
                Error::unsupported(
                    &format!("{spec:?}"),
                    "analytic Gaussian law flow (mean-field OU only)",
                )
            })?;
            let dt = (kind == LawFlowKind::AnalyticDiscrete).then_some(grid.dt);
            Ok(LawFlow::AnalyticGaussian(GaussianFlow::new(&ou, init, dt)?))
        }
        LawFlowKind::ReferenceCloud => {
            let model = spec.build()?;
            Ok(LawFlow::ReferenceCloud(ReferenceFlow::simulate(
                model.as_ref(),
                init,
                grid,
                opts,
            )?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        let ou = MeanFieldOu::new(1.0, 0.0, 2f64.sqrt()).unwrap();
        let g = GaussianFlow::new(&ou, &InitialLaw::Dirac { value: 0.0 }, None).unwrap();
        assert!((g.variance(40.0) - 1.0).abs() < 1e-14);

        let ou = MeanFieldOu::new(1.5, 0.5, 1.0).unwrap();
        let g = GaussianFlow::new(&ou, &InitialLaw::Dirac { value: 1.0 }, None).unwrap();
        assert!((g.mean(2f64.ln()) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn discrete_flow_matches_recursion() {
        let ou = MeanFieldOu::new(1.0, 0.3, 0.9).unwrap();
        let init = InitialLaw::Gaussian {
            mean: 0.7,
            variance: 2.0,
        };
        let dt = 0.01;
        let g = GaussianFlow::new(&ou, &init, Some(dt)).unwrap();
        let (mut m, mut v) = (0.7, 2.0);
        for _ in 0..250 {
            m *= 1.0 - 0.7 * dt;
            v = (1.0 - dt).powi(2) * v + 0.81 * dt;
        }
        assert!((g.mean(2.5) - m).abs() < 1e-13);
        assert!((g.variance(2.5) - v).abs() < 1e-13);
    }
}
