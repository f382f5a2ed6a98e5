use nalgebra::DMatrix;
use rayon::prelude::*;

use super::first::{Source, TangentField1};
use super::second::TangentField2;
use super::step::{LinOptions, StepLin};
use crate::error::{Error, Result};
use crate::model::{CoefficientModel, TestFunction};
use crate::simulate::PathRecord;

/// `DF` over a source list and, optionally, `D²F` over source pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalDerivatives {
    pub t: f64,
    pub n: usize,
    pub cells: Vec<Source>,
    pub df: Vec<f64>,
    /// `d2f[(r, s)] = D_r D_s F` over `cells × cells`.
    pub d2f: Option<DMatrix<f64>>,
}

fn phi_derivatives(
    phi: &dyn TestFunction,
    x: &[f64],
    n: usize,
    d: usize,
    hessian: bool,
) -> (Vec<f64>, Vec<f64>) {
    let scale = 1.0 / (n as f64).sqrt();
    let mut g = vec![0.0; n * d];
    let mut h = if hessian {
        vec![0.0; n * d * d]
    } else {
        Vec::new()
    };
    for i in 0..n {
        let xi = &x[i * d..(i + 1) * d];
        phi.gradient(xi, &mut g[i * d..(i + 1) * d]);
        if hessian {
            phi.hessian(xi, &mut h[i * d * d..(i + 1) * d * d]);
        }
    }
    g.iter_mut().for_each(|v| *v *= scale);
    h.iter_mut().for_each(|v| *v *= scale);
    (g, h)
}

fn check_phi(phi: &dyn TestFunction, d: usize) -> Result<()> {
    let x = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut h = vec![0.0; d * d];
    phi.gradient(&x, &mut g);
    phi.hessian(&x, &mut h);
    if g.iter().chain(&h).any(|v| !v.is_finite()) {
        return Err(Error::invalid("test function derivatives are not finite"));
    }
    Ok(())
}

/// Chain rule on stored tangents:
/// `DF = N^{-1/2} Σ_i ∇φ(X_t^i)·D X_t^i` and
/// `D_rD_sF = N^{-1/2} Σ_i [∇φ·D_rD_sX_t^i + (D_rX_t^i)ᵀ∇²φ D_sX_t^i]`.
pub fn assemble_df_d2f(
    tf1: &TangentField1,
    tf2: Option<&TangentField2>,
    path: &PathRecord,
    phi: &dyn TestFunction,
    t: f64,
) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    let step = path.grid.step_of(t)?;
    if step != tf1.u_step {
        return Err(Error::Grid(format!(
            "tangents sit at step {} but t = {t} is step {step}",
            tf1.u_step
        )));
    }
    let (n, d) = (tf1.n, tf1.d);
    check_phi(phi, d)?;
    let x = path.snapshots[step].positions();
    let (g, h) = phi_derivatives(phi, x, n, d, tf2.is_some());
    let df: Vec<f64> = (0..tf1.sources.len())
        .map(|k| (0..n * d).map(|q| g[q] * tf1.values[k * n * d + q]).sum())
        .collect();
    let d2f = match tf2 {
        None => None,
        Some(tf2) => {
            if tf2.u_step != step {
                return Err(Error::Grid(
                    "second-order tangents at a different step".into(),
                ));
            }
            let mut out = Vec::with_capacity(tf2.pairs.len());
            for (p, pair) in tf2.pairs.iter().enumerate() {
                let find = |s: &Source| {
                    tf1.sources.iter().position(|x| x == s).ok_or_else(|| {
                        Error::MissingDependency(format!("first-order tangent for {s:?}"))
                    })
                };
                let (a, b) = (find(&pair.outer)?, find(&pair.inner)?);
                let mut acc = 0.0;
                for i in 0..n {
                    let (va, vb) = (tf1.value(a, i), tf1.value(b, i));
                    let z = tf2.value(p, i);
                    let hi = &h[i * d * d..(i + 1) * d * d];
                    for e in 0..d {
                        acc += g[i * d + e] * z[e];
                        for f in 0..d {
                            acc += va[e] * hi[e * d + f] * vb[f];
                        }
                    }
                }
                out.push(acc);
            }
            Some(out)
        }
    };
    Ok((df, d2f))
}

/// Reverse-mode evaluation of `DF` and rows of `D²F` along one path: the
/// adjoint `λ_n = J_nᵀλ_{n+1}` gives `DF`, and one forward tangent plus one
/// backward second-order adjoint per row gives `D_r D·F`.
pub struct AdjointContext<'a> {
    path: &'a PathRecord,
    lins: Vec<StepLin>,
    lambdas: Vec<Vec<f64>>,
    hess_phi: Vec<f64>,
    cells: Vec<Source>,
    t_step: usize,
    second: bool,
}

impl<'a> AdjointContext<'a> {
    pub fn new(
        path: &'a PathRecord,
        model: &dyn CoefficientModel,
        phi: &dyn TestFunction,
        t: f64,
        cells: Vec<Source>,
        second: bool,
    ) -> Result<Self> {
        let t_step = path.grid.step_of(t)?;
        let (n, d, m) = (path.particles(), path.state_dim(), path.noise_dim);
        if model.dims().state != d || model.dims().noise != m {
            return Err(Error::dims(
                "model vs path dimensions",
                d,
                model.dims().state,
            ));
        }
        if second && !model.supports_second_order() {
            return Err(Error::unsupported(model.name(), "second derivatives"));
        }
        check_phi(phi, d)?;
        for c in &cells {
            if c.step >= t_step || c.particle >= n || c.noise >= m {
                return Err(Error::invalid(format!(
                    "cell {c:?} is not before step {t_step} of the path"
                )));
            }
        }
        let opts = LinOptions {
            second_order: second,
            exponential: false,
        };
        let lins = (0..t_step)
            .into_par_iter()
            .map(|k| {
                StepLin::build(
                    model,
                    &path.snapshots[k],
                    path.step_increments(k),
                    path.grid.dt,
                    opts,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let (g, h) = phi_derivatives(phi, path.snapshots[t_step].positions(), n, d, second);
        let mut lambdas = vec![Vec::new(); t_step + 1];
        lambdas[t_step] = g;
        for k in (0..t_step).rev() {
            let mut out = vec![0.0; n * d];
            lins[k].apply_transpose(&lambdas[k + 1], &mut out);
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("adjoint not finite at step {k}")));
            }
            lambdas[k] = out;
        }
        Ok(AdjointContext {
            path,
            lins,
            lambdas,
            hess_phi: h,
            cells,
            t_step,
            second,
        })
    }

    pub fn cells(&self) -> &[Source] {
        &self.cells
    }

    fn d(&self) -> usize {
        self.path.state_dim()
    }

    /// `DF` at every cell.
    pub fn df(&self) -> Vec<f64> {
        let d = self.d();
        self.cells
            .iter()
            .map(|c| {
                let col = self.lins[c.step].sigma_col(c.particle, c.noise);
                let lam = &self.lambdas[c.step + 1][c.particle * d..(c.particle + 1) * d];
                lam.iter().zip(&col).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    /// Row `D_r D_s F` over all cells `s`, for the direction `r`.
    pub fn d2f_row(&self, r: Source) -> Result<Vec<f64>> {
        if !self.second {
            return Err(Error::MissingDependency(
                "second-order linearization was not requested".into(),
            ));
        }
        let (n, d) = (self.path.particles(), self.d());
        let nd = n * d;
        let s_end = self.t_step;
        if r.step >= s_end {
            return Err(Error::invalid(format!(
                "direction {r:?} not before the final step"
            )));
        }
        // V_k = D_r X_k for k in (r.step, s_end]; zero before.
        let mut vs: Vec<Vec<f64>> = vec![Vec::new(); s_end + 1];
        let mut v = vec![0.0; nd];
        let col = self.lins[r.step].sigma_col(r.particle, r.noise);
        v[r.particle * d..(r.particle + 1) * d].copy_from_slice(&col);
        vs[r.step + 1] = v;
        for k in r.step + 1..s_end {
            let mut out = vec![0.0; nd];
            self.lins[k].apply(&vs[k], &mut out);
            vs[k + 1] = out;
        }
        let vt = &vs[s_end];
        let mut mu = vec![0.0; nd];
        for i in 0..n {
            let hi = &self.hess_phi[i * d * d..(i + 1) * d * d];
            for e in 0..d {
                mu[i * d + e] = (0..d).map(|f| hi[e * d + f] * vt[i * d + f]).sum();
            }
        }
        let mut mus: Vec<Vec<f64>> = vec![Vec::new(); s_end + 1];
        mus[s_end] = mu;
        let first_needed = self.cells.iter().map(|c| c.step).min().unwrap_or(s_end);
        for k in (first_needed + 1..s_end).rev() {
            let lin = &self.lins[k];
            let mut out = vec![0.0; nd];
            lin.apply_transpose(&mus[k + 1], &mut out);
            if k > r.step {
                lin.hessian_adjoint(&self.lambdas[k + 1], &vs[k], &mut out);
            }
            if k == r.step {
                let lam = &self.lambdas[k + 1][r.particle * d..(r.particle + 1) * d];
                lin.sigma_dir_adjoint(r.particle, r.noise, lam, &mut out);
            }
            mus[k] = out;
        }
        let mut row = Vec::with_capacity(self.cells.len());
        for c in &self.cells {
            let k = c.step;
            let lin = &self.lins[k];
            let col = lin.sigma_col(c.particle, c.noise);
            let mu = &mus[k + 1][c.particle * d..(c.particle + 1) * d];
            let mut acc: f64 = mu.iter().zip(&col).map(|(a, b)| a * b).sum();
            if k > r.step {
                let g = lin.sigma_dir(c.particle, c.noise, &vs[k]);
                let lam = &self.lambdas[k + 1][c.particle * d..(c.particle + 1) * d];
                acc += lam.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
            }
            row.push(acc);
        }
        Ok(row)
    }

    /// Rows `D_{cells[r]} D F` for the given cell indices (`rows × cells`).
    pub fn d2f_rows(&self, rows: &[usize]) -> Result<DMatrix<f64>> {
        let c = self.cells.len();
        let data = rows
            .par_iter()
            .map(|&r| self.d2f_row(self.cells[r]))
            .collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_fn(rows.len(), c, |a, b| data[a][b]))
    }

    /// `DF` and, if requested at construction, the full `D²F` matrix.
    pub fn assemble(&self) -> Result<FunctionalDerivatives> {
        let d2f = if self.second {
            let rows: Vec<usize> = (0..self.cells.len()).collect();
            Some(self.d2f_rows(&rows)?)
        } else {
            None
        };
        Ok(FunctionalDerivatives {
            t: self.path.grid.time(self.t_step),
            n: self.path.particles(),
            cells: self.cells.clone(),
            df: self.df(),
            d2f,
        })
    }
}

/// Cells `(k, j, α)` for every `stride`-th step before `t_step`.
pub fn cell_grid(t_step: usize, stride: usize, n: usize, m: usize) -> Vec<Source> {
    super::first::all_sources(&super::first::strided_grid(t_step, stride), n, m)
}

/// Full adjoint evaluation of `DF` and `D²F` on the strided cell grid.
pub fn adjoint_derivatives(
    path: &PathRecord,
    model: &dyn CoefficientModel,
    phi: &dyn TestFunction,
    t: f64,
    stride: usize,
    second: bool,
) -> Result<FunctionalDerivatives> {
    let t_step = path.grid.step_of(t)?;
    let cells = cell_grid(t_step, stride, path.particles(), path.noise_dim);
    AdjointContext::new(path, model, phi, t, cells, second)?.assemble()
}
