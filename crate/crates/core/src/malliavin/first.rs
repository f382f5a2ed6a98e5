use serde::{Deserialize, Serialize};

use super::step::{LinOptions, StepLin};
use crate::error::{Error, Result};
use crate::model::CoefficientModel;
use crate::simulate::PathRecord;

/// A Brownian coordinate: increment at grid step `step` of component
/// `noise` of particle `particle`. Identifies the Malliavin direction
/// `D_s^{j,α}` with `s` the cell `[t_step, t_step + dt)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Source {
    pub step: usize,
    pub particle: usize,
    pub noise: usize,
}

/// Discretization of the first-order tangent equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TangentScheme {
    /// Exact derivative of the Euler map with respect to the stored
    /// increments: `D_s X_{s+dt} = σ(X_s)e_α 1_{i=j}`, then Euler-linearized
    /// steps.
    #[default]
    Euler,
    /// Starts from `D_s X_s = σ(X_s)e_α 1_{i=j}` and integrates the drift part
    /// of the coupled linear system exactly over each step (dense matrix
    /// exponential); the noise part stays Euler.
    ExponentialEuler,
}

/// First Malliavin derivatives `D_s^{j,α} X_u^i` at the current time `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentField1 {
    pub u_step: usize,
    pub u: f64,
    pub sources: Vec<Source>,
    pub n: usize,
    pub d: usize,
    /// `sources × N × d`.
    pub values: Vec<f64>,
}

impl TangentField1 {
    /// `D X_u^i` for source index `src` (length d).
    pub fn value(&self, src: usize, i: usize) -> &[f64] {
        let o = (src * self.n + i) * self.d;
        &self.values[o..o + self.d]
    }

    /// The d × m matrix `D_s^j X_u^i` (columns over α), if every α of
    /// `(s_step, j)` is present.
    pub fn entry(&self, s_step: usize, j: usize, i: usize, m: usize) -> Option<Vec<f64>> {
        let d = self.d;
        let mut out = vec![0.0; d * m];
        for alpha in 0..m {
            let k = self.sources.iter().position(|s| {
                *s == Source {
                    step: s_step,
                    particle: j,
                    noise: alpha,
                }
            })?;
            for a in 0..d {
                out[a * m + alpha] = self.value(k, i)[a];
            }
        }
        Some(out)
    }
}

/// Forward propagation of first-order tangents along a stored path.
pub struct FirstOrderFlow<'a> {
    pub(crate) path: &'a PathRecord,
    pub(crate) model: &'a dyn CoefficientModel,
    pub(crate) scheme: TangentScheme,
    pub(crate) opts: LinOptions,
    pub(crate) sources: Vec<Source>,
    pub(crate) u: usize,
    /// True discrete values (Euler: zero at u = s).
    pub(crate) state: Vec<f64>,
    pub(crate) lin: Option<StepLin>,
}

impl<'a> FirstOrderFlow<'a> {
    pub fn new(
        path: &'a PathRecord,
        model: &'a dyn CoefficientModel,
        sources: Vec<Source>,
        scheme: TangentScheme,
    ) -> Result<Self> {
        let (n, d, m) = (path.particles(), path.state_dim(), path.noise_dim);
        if model.dims().state != d || model.dims().noise != m {
            return Err(Error::dims(
                "model vs path dimensions",
                d,
                model.dims().state,
            ));
        }
        for s in &sources {
            if s.step >= path.steps() || s.particle >= n || s.noise >= m {
                return Err(Error::invalid(format!(
                    "source {s:?} outside the path (steps {}, N {n}, m {m})",
                    path.steps()
                )));
            }
        }
        let opts = LinOptions {
            second_order: false,
            exponential: scheme == TangentScheme::ExponentialEuler,
        };
        let mut flow = FirstOrderFlow {
            path,
            model,
            scheme,
            opts,
            state: vec![0.0; sources.len() * n * d],
            sources,
            u: 0,
            lin: None,
        };
        flow.arrive();
        Ok(flow)
    }

    pub fn step_index(&self) -> usize {
        self.u
    }

    pub fn time(&self) -> f64 {
        self.path.grid.time(self.u)
    }

    pub fn sources(&self) -> &[Source] {
        &self.sources
    }

    pub(crate) fn nd(&self) -> usize {
        self.path.particles() * self.path.state_dim()
    }

    /// σ_{·α}(X_u^j) for the current snapshot.
    fn sigma_column(&self, j: usize, alpha: usize) -> Vec<f64> {
        let (d, m) = (self.path.state_dim(), self.path.noise_dim);
        let cloud = &self.path.snapshots[self.u];
        let mut s = vec![0.0; d * m];
        self.model.diffusion(cloud.particle(j), cloud, &mut s);
        (0..d).map(|a| s[a * m + alpha]).collect()
    }

    /// Exponential scheme: sources starting now take their initial value.
    fn arrive(&mut self) {
        if self.scheme != TangentScheme::ExponentialEuler {
            return;
        }
        let (nd, d) = (self.nd(), self.path.state_dim());
        for k in 0..self.sources.len() {
            let s = self.sources[k];
            if s.step == self.u {
                let col = self.sigma_column(s.particle, s.noise);
                let st = &mut self.state[k * nd..(k + 1) * nd];
                st.iter_mut().for_each(|v| *v = 0.0);
                st[s.particle * d..(s.particle + 1) * d].copy_from_slice(&col);
            }
        }
    }

    pub(crate) fn ensure_lin(&mut self) -> Result<()> {
        if self.lin.is_none() {
            if self.u >= self.path.steps() {
                return Err(Error::invalid("no step beyond the end of the path"));
            }
            let cloud = &self.path.snapshots[self.u];
            self.lin = Some(StepLin::build(
                self.model,
                cloud,
                self.path.step_increments(self.u),
                self.path.grid.dt,
                self.opts,
            )?);
        }
        Ok(())
    }

    /// Advances every tangent from `u` to `u + 1`.
    pub fn advance(&mut self) -> Result<()> {
        self.ensure_lin()?;
        let lin = self.lin.take().expect("linearization built");
        self.advance_with(&lin);
        self.u += 1;
        self.arrive();
        Ok(())
    }

    pub(crate) fn advance_with(&mut self, lin: &StepLin) {
        let nd = self.nd();
        let d = self.path.state_dim();
        let mut out = vec![0.0; nd];
        for k in 0..self.sources.len() {
            let s = self.sources[k];
            let st = &mut self.state[k * nd..(k + 1) * nd];
            match self.scheme {
                TangentScheme::Euler => {
                    if s.step == self.u {
                        st.iter_mut().for_each(|v| *v = 0.0);
                        let col = lin.sigma_col(s.particle, s.noise);
                        st[s.particle * d..(s.particle + 1) * d].copy_from_slice(&col);
                    } else if s.step < self.u {
                        lin.apply(st, &mut out);
                        st.copy_from_slice(&out);
                    }
                }
                TangentScheme::ExponentialEuler => {
                    if s.step <= self.u {
                        lin.apply(st, &mut out);
                        st.copy_from_slice(&out);
                    }
                }
            }
        }
    }

    /// Advances until step `u_step`.
    pub fn advance_to(&mut self, u_step: usize) -> Result<()> {
        if u_step < self.u || u_step > self.path.steps() {
            return Err(Error::Grid(format!(
                "cannot advance from step {} to {u_step}",
                self.u
            )));
        }
        while self.u < u_step {
            self.advance()?;
        }
        Ok(())
    }

    /// True discrete tangent of source `k` (N × d).
    pub(crate) fn raw(&self, k: usize) -> &[f64] {
        let nd = self.nd();
        &self.state[k * nd..(k + 1) * nd]
    }

    /// The tangent field at the current time. At `u = s` entries follow
    /// `D_s X_s^i = σ(X_s^i, μ_s^N)e_α 1_{i=j}`.
    pub fn field(&self) -> TangentField1 {
        let (n, d) = (self.path.particles(), self.path.state_dim());
        let nd = n * d;
        let mut values = self.state.clone();
        if self.scheme == TangentScheme::Euler {
            for (k, s) in self.sources.iter().enumerate() {
                if s.step == self.u {
                    let col = self.sigma_column(s.particle, s.noise);
                    let st = &mut values[k * nd..(k + 1) * nd];
                    st.iter_mut().for_each(|v| *v = 0.0);
                    st[s.particle * d..(s.particle + 1) * d].copy_from_slice(&col);
                }
            }
        }
        TangentField1 {
            u_step: self.u,
            u: self.time(),
            sources: self.sources.clone(),
            n,
            d,
            values,
        }
    }
}

/// All sources `(s, j, α)` for `s` in `s_grid` (grid steps).
pub fn all_sources(s_grid: &[usize], n: usize, m: usize) -> Vec<Source> {
    let mut v = Vec::with_capacity(s_grid.len() * n * m);
    for &step in s_grid {
        for particle in 0..n {
            for noise in 0..m {
                v.push(Source {
                    step,
                    particle,
                    noise,
                });
            }
        }
    }
    v
}

/// Tangent flow over every `(s, j, α)` with `s ∈ s_grid`.
pub fn propagate_first<'a>(
    path: &'a PathRecord,
    model: &'a dyn CoefficientModel,
    s_grid: &[usize],
    scheme: TangentScheme,
) -> Result<FirstOrderFlow<'a>> {
    let sources = all_sources(s_grid, path.particles(), path.noise_dim);
    FirstOrderFlow::new(path, model, sources, scheme)
}

/// Every `stride`-th path step below `steps`, starting at 0.
pub fn strided_grid(steps: usize, stride: usize) -> Vec<usize> {
    (0..steps).step_by(stride.max(1)).collect()
}
