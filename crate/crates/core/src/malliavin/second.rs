use serde::{Deserialize, Serialize};

use super::first::{FirstOrderFlow, Source, TangentScheme};
use super::step::StepLin;
use crate::error::{Error, Result};

/// Index `(r, k, β) × (s, j, α)` of a second derivative `D_r^{k,β} D_s^{j,α}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SourcePair {
    pub outer: Source,
    pub inner: Source,
}

impl SourcePair {
    pub fn new(outer: Source, inner: Source) -> Self {
        SourcePair { outer, inner }
    }

    pub fn swapped(self) -> Self {
        SourcePair {
            outer: self.inner,
            inner: self.outer,
        }
    }
}

/// Second Malliavin derivatives `D_r^{k,β} D_s^{j,α} X_u^i` at the current time.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentField2 {
    pub u_step: usize,
    pub u: f64,
    pub pairs: Vec<SourcePair>,
    pub n: usize,
    pub d: usize,
    /// `pairs × N × d`.
    pub values: Vec<f64>,
}

impl TangentField2 {
    pub fn value(&self, pair: usize, i: usize) -> &[f64] {
        let o = (pair * self.n + i) * self.d;
        &self.values[o..o + self.d]
    }

    /// All particles of pair index `pair` (N × d).
    pub fn pair_values(&self, pair: usize) -> &[f64] {
        let nd = self.n * self.d;
        &self.values[pair * nd..(pair + 1) * nd]
    }
}

/// Lockstep propagation of first- and second-order tangents.
pub struct SecondOrderFlow<'a> {
    first: FirstOrderFlow<'a>,
    pairs: Vec<SourcePair>,
    /// Positions of the outer and inner sources in the first-order flow.
    index: Vec<(usize, usize)>,
    state: Vec<f64>,
}

impl<'a> SecondOrderFlow<'a> {
    /// `first` must sit at the start of the path and cover every source
    /// appearing in `pairs`.
    pub fn new(mut first: FirstOrderFlow<'a>, pairs: Vec<SourcePair>) -> Result<Self> {
        if first.scheme != TangentScheme::Euler {
            return Err(Error::unsupported(
                first.model.name(),
                "second-order tangents with the exponential scheme",
            ));
        }
        if !first.model.supports_second_order() {
            return Err(Error::unsupported(first.model.name(), "second derivatives"));
        }
        if first.u != 0 {
            return Err(Error::invalid(
                "second-order propagation must start with the first-order flow at step 0",
            ));
        }
        let mut index = Vec::with_capacity(pairs.len());
        for p in &pairs {
            let find = |s: &Source| {
                first.sources.iter().position(|x| x == s).ok_or_else(|| {
                    Error::MissingDependency(format!(
                        "first-order tangent for source {s:?} is required by pair {p:?}"
                    ))
                })
            };
            index.push((find(&p.outer)?, find(&p.inner)?));
        }
        first.opts.second_order = true;
        first.lin = None;
        let nd = first.nd();
        Ok(SecondOrderFlow {
            state: vec![0.0; pairs.len() * nd],
            first,
            pairs,
            index,
        })
    }

    pub fn first(&self) -> &FirstOrderFlow<'a> {
        &self.first
    }

    pub fn step_index(&self) -> usize {
        self.first.u
    }

    pub fn advance(&mut self) -> Result<()> {
        self.first.ensure_lin()?;
        let lin = self.first.lin.take().expect("linearization built");
        self.advance_second(&lin);
        self.first.advance_with(&lin);
        self.first.u += 1;
        Ok(())
    }

    pub fn advance_to(&mut self, u_step: usize) -> Result<()> {
        if u_step < self.first.u || u_step > self.first.path.steps() {
            return Err(Error::Grid(format!(
                "cannot advance from step {} to {u_step}",
                self.first.u
            )));
        }
        while self.first.u < u_step {
            self.advance()?;
        }
        Ok(())
    }

    fn advance_second(&mut self, lin: &StepLin) {
        let nd = self.first.nd();
        let d = lin.d;
        let u = self.first.u;
        let mut out = vec![0.0; nd];
        for (p, pair) in self.pairs.iter().enumerate() {
            let (io, ii) = self.index[p];
            let (vr, vs) = (self.first.raw(io), self.first.raw(ii));
            let z = &mut self.state[p * nd..(p + 1) * nd];
            if u > pair.outer.step && u > pair.inner.step {
                lin.apply(z, &mut out);
                lin.hessian_apply(vr, vs, &mut out);
            } else {
                out.iter_mut().for_each(|v| *v = 0.0);
            }
            if u == pair.inner.step && u > pair.outer.step {
                let g = lin.sigma_dir(pair.inner.particle, pair.inner.noise, vr);
                for a in 0..d {
                    out[pair.inner.particle * d + a] += g[a];
                }
            }
            if u == pair.outer.step && u > pair.inner.step {
                let g = lin.sigma_dir(pair.outer.particle, pair.outer.noise, vs);
                for a in 0..d {
                    out[pair.outer.particle * d + a] += g[a];
                }
            }
            z.copy_from_slice(&out);
        }
    }

    /// The field at the current time. At `u = max(r, s)` with `r ≠ s` the
    /// entry is the initial term `1_{i=j}∂ₓσ D_r X_s^i e_α + (1/N)Σ_ℓ
    /// ∂_μσ(X^i)(X^ℓ) D_r X_s^ℓ e_α` evaluated at the current state.
    pub fn field(&mut self) -> Result<TangentField2> {
        let nd = self.first.nd();
        let d = self.first.path.state_dim();
        let u = self.first.u;
        let mut values = self.state.clone();
        let needs_initial = self
            .pairs
            .iter()
            .any(|p| p.outer.step != p.inner.step && u == p.outer.step.max(p.inner.step));
        if needs_initial {
            self.first.ensure_lin()?;
            let lin = self.first.lin.as_ref().expect("linearization built");
            for (p, pair) in self.pairs.iter().enumerate() {
                let (io, ii) = self.index[p];
                let z = &mut values[p * nd..(p + 1) * nd];
                let (late, early_idx) = if u == pair.inner.step && u > pair.outer.step {
                    (pair.inner, io)
                } else if u == pair.outer.step && u > pair.inner.step {
                    (pair.outer, ii)
                } else {
                    continue;
                };
                let g = lin.sigma_dir(late.particle, late.noise, self.first.raw(early_idx));
                z.iter_mut().for_each(|v| *v = 0.0);
                z[late.particle * d..(late.particle + 1) * d].copy_from_slice(&g);
            }
        }
        Ok(TangentField2 {
            u_step: u,
            u: self.first.time(),
            pairs: self.pairs.clone(),
            n: self.first.path.particles(),
            d,
            values,
        })
    }
}

/// Second-order flow for `pair_sample`, reusing `first` (which must cover
/// every source in the sample).
pub fn propagate_second<'a>(
    first: FirstOrderFlow<'a>,
    pair_sample: Vec<SourcePair>,
) -> Result<SecondOrderFlow<'a>> {
    SecondOrderFlow::new(first, pair_sample)
}
