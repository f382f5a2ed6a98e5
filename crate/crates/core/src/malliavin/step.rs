//! Linearization of one Euler step `Φ(X, ΔB) = X + b(X, μ^N)dt + σ(X, μ^N)ΔB`
//! around a stored path, acting on configuration-space vectors (N × d).

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{Cloud, CoefficientModel, Dims, LionsStructure, SecondDerivatives};

/// Particle coupling of the Jacobian, `(1/N)` folded in.
#[derive(Debug, Clone)]
pub(crate) enum Coupling {
    None,
    /// Block `K_i` (N × d × d) applied to Σ_ℓ V^ℓ.
    RowUniform(Vec<f64>),
    /// Blocks `K_{iℓ}` (N × N × d × d).
    Dense(Vec<f64>),
}

/// Measure-dependent second-order blocks, effective (dt and ΔB folded in).
#[derive(Debug, Clone)]
pub(crate) struct MixedBlocks {
    /// N × N × d³ each: `[i][ℓ][a][c][e]`.
    mdx: Vec<f64>,
    xdm: Vec<f64>,
    vdm: Vec<f64>,
    /// N × N × N × d³ `[i][ℓ][q][a][e][f]` when ∂²_μμ does not vanish.
    mm: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub(crate) struct StepHessian {
    /// N × d³ effective state Hessians `[i][a][c1][c2]`.
    hx: Vec<f64>,
    mixed: Option<MixedBlocks>,
}

/// Everything needed to push first- and second-order tangents through step n.
#[derive(Debug, Clone)]
pub(crate) struct StepLin {
    pub n: usize,
    pub d: usize,
    pub m: usize,
    /// σ at every particle (N × d × m).
    pub sigma: Vec<f64>,
    /// `I + dt ∂ₓb + Σ_β ΔB^{iβ} ∂ₓσ_β` per particle (N × d × d).
    local: Vec<f64>,
    coupling: Coupling,
    /// ∂ₓσ per particle (N × d × m × d), absent for constant σ.
    js: Option<Vec<f64>>,
    /// `(1/N)∂_μσ(X^k)(X^ℓ)` (N × N × d × m × d), absent when it vanishes.
    ls: Option<Vec<f64>>,
    /// Exponential-Euler replacement of the whole Jacobian (Nd × Nd).
    dense: Option<DMatrix<f64>>,
    hess: Option<StepHessian>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub(crate) struct LinOptions {
    pub second_order: bool,
    pub exponential: bool,
}

impl StepLin {
    pub(crate) fn build(
        model: &dyn CoefficientModel,
        cloud: &Cloud,
        db: &[f64],
        dt: f64,
        opts: LinOptions,
    ) -> Result<Self> {
        let Dims { state: d, noise: m } = model.dims();
        let n = cloud.len();
        let nf = n as f64;
        let structure = model.lions_structure();
        let const_sigma = model.constant_diffusion();

        let mut sigma = vec![0.0; n * d * m];
        model.diffusion_all(cloud, &mut sigma);

        let mut jb = vec![0.0; d * d];
        let mut local = vec![0.0; n * d * d];
        let mut js = (!const_sigma).then(|| vec![0.0; n * d * m * d]);
        for i in 0..n {
            let x = cloud.particle(i);
            model.dx_drift(x, cloud, &mut jb)?;
            let loc = &mut local[i * d * d..(i + 1) * d * d];
            for a in 0..d {
                for c in 0..d {
                    loc[a * d + c] = if a == c { 1.0 } else { 0.0 } + dt * jb[a * d + c];
                }
            }
            if let Some(js) = js.as_mut() {
                let jsi = &mut js[i * d * m * d..(i + 1) * d * m * d];
                model.dx_diffusion(x, cloud, jsi)?;
                let dbi = &db[i * m..(i + 1) * m];
                for a in 0..d {
                    for c in 0..d {
                        let mut acc = 0.0;
                        for (beta, w) in dbi.iter().enumerate() {
                            acc += w * jsi[(a * m + beta) * d + c];
                        }
                        loc[a * d + c] += acc;
                    }
                }
            }
        }

        let mut lb = vec![0.0; d * d];
        let mut lsb = vec![0.0; d * m * d];
        let (coupling, ls) = match structure {
            LionsStructure::Zero => (Coupling::None, None),
            LionsStructure::Constant => {
                let x0 = cloud.particle(0);
                model.lions_drift(x0, cloud, x0, &mut lb)?;
                if !const_sigma {
                    model.lions_diffusion(x0, cloud, x0, &mut lsb)?;
                }
                let mut k = vec![0.0; n * d * d];
                for i in 0..n {
                    let dbi = &db[i * m..(i + 1) * m];
                    for a in 0..d {
                        for e in 0..d {
                            let mut v = dt * lb[a * d + e];
                            if !const_sigma {
                                for (beta, w) in dbi.iter().enumerate() {
                                    v += w * lsb[(a * m + beta) * d + e];
                                }
                            }
                            k[(i * d + a) * d + e] = v / nf;
                        }
                    }
                }
                let ls = (!const_sigma).then(|| {
                    let mut full = vec![0.0; n * n * d * m * d];
                    for blk in full.chunks_exact_mut(d * m * d) {
                        for (o, v) in blk.iter_mut().zip(&lsb) {
                            *o = v / nf;
                        }
                    }
                    full
                });
                (Coupling::RowUniform(k), ls)
            }
            LionsStructure::General => {
                let mut k = vec![0.0; n * n * d * d];
                let mut lsall = (!const_sigma).then(|| vec![0.0; n * n * d * m * d]);
                for i in 0..n {
                    let x = cloud.particle(i);
                    let dbi = &db[i * m..(i + 1) * m];
                    for l in 0..n {
                        let v = cloud.particle(l);
                        model.lions_drift(x, cloud, v, &mut lb)?;
                        if let Some(lsall) = lsall.as_mut() {
                            model.lions_diffusion(x, cloud, v, &mut lsb)?;
                            let blk =
                                &mut lsall[(i * n + l) * d * m * d..(i * n + l + 1) * d * m * d];
                            for (o, s) in blk.iter_mut().zip(&lsb) {
                                *o = s / nf;
                            }
                        }
                        for a in 0..d {
                            for e in 0..d {
                                let mut val = dt * lb[a * d + e];
                                if !const_sigma {
                                    for (beta, w) in dbi.iter().enumerate() {
                                        val += w * lsb[(a * m + beta) * d + e];
                                    }
                                }
                                k[((i * n + l) * d + a) * d + e] = val / nf;
                            }
                        }
                    }
                }
                (Coupling::Dense(k), lsall)
            }
        };

        let hess = if opts.second_order {
            if !model.supports_second_order() {
                return Err(Error::unsupported(model.name(), "second derivatives"));
            }
            Some(build_hessian(model, cloud, db, dt, structure)?)
        } else {
            None
        };

        let mut lin = StepLin {
            n,
            d,
            m,
            sigma,
            local,
            coupling,
            js,
            ls,
            dense: None,
            hess,
        };
        if opts.exponential {
            lin.dense = Some(exponential_jacobian(model, cloud, db, dt, &lin)?);
        }
        Ok(lin)
    }

    #[inline]
    pub(crate) fn apply(&self, v: &[f64], out: &mut [f64]) {
        let (n, d) = (self.n, self.d);
        if let Some(e) = &self.dense {
            let nd = n * d;
            for r in 0..nd {
                let mut acc = 0.0;
                for c in 0..nd {
                    acc += e[(r, c)] * v[c];
                }
                out[r] = acc;
            }
            return;
        }
        for i in 0..n {
            let loc = &self.local[i * d * d..(i + 1) * d * d];
            let vi = &v[i * d..(i + 1) * d];
            for a in 0..d {
                let mut acc = 0.0;
                for c in 0..d {
                    acc += loc[a * d + c] * vi[c];
                }
                out[i * d + a] = acc;
            }
        }
        match &self.coupling {
            Coupling::None => {}
            Coupling::RowUniform(k) => {
                let mut sum = vec![0.0; d];
                for vi in v.chunks_exact(d) {
                    for (s, x) in sum.iter_mut().zip(vi) {
                        *s += x;
                    }
                }
                for i in 0..n {
                    for a in 0..d {
                        let mut acc = 0.0;
                        for e in 0..d {
                            acc += k[(i * d + a) * d + e] * sum[e];
                        }
                        out[i * d + a] += acc;
                    }
                }
            }
            Coupling::Dense(k) => {
                for i in 0..n {
                    for l in 0..n {
                        let blk = &k[(i * n + l) * d * d..(i * n + l + 1) * d * d];
                        let vl = &v[l * d..(l + 1) * d];
                        for a in 0..d {
                            let mut acc = 0.0;
                            for e in 0..d {
                                acc += blk[a * d + e] * vl[e];
                            }
                            out[i * d + a] += acc;
                        }
                    }
                }
            }
        }
    }

    /// `out = Jᵀ w`.
    pub(crate) fn apply_transpose(&self, w: &[f64], out: &mut [f64]) {
        let (n, d) = (self.n, self.d);
        if let Some(e) = &self.dense {
            let nd = n * d;
            for c in 0..nd {
                let mut acc = 0.0;
                for r in 0..nd {
                    acc += e[(r, c)] * w[r];
                }
                out[c] = acc;
            }
            return;
        }
        for i in 0..n {
            let loc = &self.local[i * d * d..(i + 1) * d * d];
            let wi = &w[i * d..(i + 1) * d];
            for c in 0..d {
                let mut acc = 0.0;
                for a in 0..d {
                    acc += loc[a * d + c] * wi[a];
                }
                out[i * d + c] = acc;
            }
        }
        match &self.coupling {
            Coupling::None => {}
            Coupling::RowUniform(k) => {
                let mut tot = vec![0.0; d];
                for i in 0..n {
                    for e in 0..d {
                        for a in 0..d {
                            tot[e] += k[(i * d + a) * d + e] * w[i * d + a];
                        }
                    }
                }
                for l in 0..n {
                    for e in 0..d {
                        out[l * d + e] += tot[e];
                    }
                }
            }
            Coupling::Dense(k) => {
                for i in 0..n {
                    for l in 0..n {
                        let blk = &k[(i * n + l) * d * d..(i * n + l + 1) * d * d];
                        for e in 0..d {
                            let mut acc = 0.0;
                            for a in 0..d {
                                acc += blk[a * d + e] * w[i * d + a];
                            }
                            out[l * d + e] += acc;
                        }
                    }
                }
            }
        }
    }

    /// Column `beta` of σ at particle `k` (length d).
    pub(crate) fn sigma_col(&self, k: usize, beta: usize) -> Vec<f64> {
        let (d, m) = (self.d, self.m);
        (0..d).map(|a| self.sigma[(k * d + a) * m + beta]).collect()
    }

    /// Directional derivative of σ_{·β}(X^k, μ^N) along the configuration
    /// direction `y`: `∂ₓσ_β y^k + (1/N)Σ_ℓ ∂_μσ_β(X^k)(X^ℓ) y^ℓ`.
    pub(crate) fn sigma_dir(&self, k: usize, beta: usize, y: &[f64]) -> Vec<f64> {
        let (n, d, m) = (self.n, self.d, self.m);
        let mut out = vec![0.0; d];
        if let Some(js) = &self.js {
            let jk = &js[k * d * m * d..(k + 1) * d * m * d];
            for a in 0..d {
                for c in 0..d {
                    out[a] += jk[(a * m + beta) * d + c] * y[k * d + c];
                }
            }
        }
        if let Some(ls) = &self.ls {
            for l in 0..n {
                let blk = &ls[(k * n + l) * d * m * d..(k * n + l + 1) * d * m * d];
                for a in 0..d {
                    for e in 0..d {
                        out[a] += blk[(a * m + beta) * d + e] * y[l * d + e];
                    }
                }
            }
        }
        out
    }

    /// Adds `∇_y [lam · sigma_dir(k, β, y)]` into `g`.
    pub(crate) fn sigma_dir_adjoint(&self, k: usize, beta: usize, lam: &[f64], g: &mut [f64]) {
        let (n, d, m) = (self.n, self.d, self.m);
        if let Some(js) = &self.js {
            let jk = &js[k * d * m * d..(k + 1) * d * m * d];
            for c in 0..d {
                for a in 0..d {
                    g[k * d + c] += jk[(a * m + beta) * d + c] * lam[a];
                }
            }
        }
        if let Some(ls) = &self.ls {
            for l in 0..n {
                let blk = &ls[(k * n + l) * d * m * d..(k * n + l + 1) * d * m * d];
                for e in 0..d {
                    for a in 0..d {
                        g[l * d + e] += blk[(a * m + beta) * d + e] * lam[a];
                    }
                }
            }
        }
    }

    /// Second derivative of the step map: `out += ∂²Φ[v, w]`.
    pub(crate) fn hessian_apply(&self, v: &[f64], w: &[f64], out: &mut [f64]) {
        let Some(h) = &self.hess else { return };
        let (n, d) = (self.n, self.d);
        let d3 = d * d * d;
        for i in 0..n {
            let hx = &h.hx[i * d3..(i + 1) * d3];
            for a in 0..d {
                let mut acc = 0.0;
                for c1 in 0..d {
                    for c2 in 0..d {
                        acc += hx[(a * d + c1) * d + c2] * v[i * d + c1] * w[i * d + c2];
                    }
                }
                out[i * d + a] += acc;
            }
        }
        let Some(mx) = &h.mixed else { return };
        for i in 0..n {
            for l in 0..n {
                let o = (i * n + l) * d3;
                let (mdx, xdm, vdm) = (&mx.mdx[o..o + d3], &mx.xdm[o..o + d3], &mx.vdm[o..o + d3]);
                for a in 0..d {
                    let mut acc = 0.0;
                    for p in 0..d {
                        for q in 0..d {
                            let t = (a * d + p) * d + q;
                            acc += mdx[t] * v[i * d + p] * w[l * d + q];
                            acc += xdm[t] * v[l * d + p] * w[i * d + q];
                            acc += vdm[t] * v[l * d + p] * w[l * d + q];
                        }
                    }
                    out[i * d + a] += acc;
                }
                if let Some(mm) = &mx.mm {
                    for qp in 0..n {
                        let blk = &mm[((i * n + l) * n + qp) * d3..((i * n + l) * n + qp + 1) * d3];
                        for a in 0..d {
                            let mut acc = 0.0;
                            for e in 0..d {
                                for f in 0..d {
                                    acc += blk[(a * d + e) * d + f] * v[l * d + e] * w[qp * d + f];
                                }
                            }
                            out[i * d + a] += acc;
                        }
                    }
                }
            }
        }
    }

    /// Adds `∇_w [lam · ∂²Φ[v, w]]` into `g`.
    pub(crate) fn hessian_adjoint(&self, lam: &[f64], v: &[f64], g: &mut [f64]) {
        let Some(h) = &self.hess else { return };
        let (n, d) = (self.n, self.d);
        let d3 = d * d * d;
        for i in 0..n {
            let hx = &h.hx[i * d3..(i + 1) * d3];
            for c2 in 0..d {
                let mut acc = 0.0;
                for a in 0..d {
                    for c1 in 0..d {
                        acc += lam[i * d + a] * hx[(a * d + c1) * d + c2] * v[i * d + c1];
                    }
                }
                g[i * d + c2] += acc;
            }
        }
        let Some(mx) = &h.mixed else { return };
        for i in 0..n {
            for l in 0..n {
                let o = (i * n + l) * d3;
                let (mdx, xdm, vdm) = (&mx.mdx[o..o + d3], &mx.xdm[o..o + d3], &mx.vdm[o..o + d3]);
                for a in 0..d {
                    let la = lam[i * d + a];
                    if la == 0.0 {
                        continue;
                    }
                    for p in 0..d {
                        for q in 0..d {
                            let t = (a * d + p) * d + q;
                            g[l * d + q] += la * mdx[t] * v[i * d + p];
                            g[i * d + q] += la * xdm[t] * v[l * d + p];
                            g[l * d + q] += la * vdm[t] * v[l * d + p];
                        }
                    }
                }
                if let Some(mm) = &mx.mm {
                    for qp in 0..n {
                        let blk = &mm[((i * n + l) * n + qp) * d3..((i * n + l) * n + qp + 1) * d3];
                        for a in 0..d {
                            for e in 0..d {
                                for f in 0..d {
                                    g[qp * d + f] +=
                                        lam[i * d + a] * blk[(a * d + e) * d + f] * v[l * d + e];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Folds dt and ΔB^i into a drift block and its diffusion counterparts:
/// `dt·B[a][..] + Σ_β ΔB^β S[a][β][..]` for trailing size `tail`.
fn fold(
    dt: f64,
    dbi: &[f64],
    b: &[f64],
    s: &[f64],
    d: usize,
    m: usize,
    tail: usize,
    scale: f64,
    out: &mut [f64],
) {
    for a in 0..d {
        for t in 0..tail {
            let mut v = dt * b[a * tail + t];
            for (beta, w) in dbi.iter().enumerate() {
                v += w * s[(a * m + beta) * tail + t];
            }
            out[a * tail + t] = scale * v;
        }
    }
}

fn build_hessian(
    model: &dyn CoefficientModel,
    cloud: &Cloud,
    db: &[f64],
    dt: f64,
    structure: LionsStructure,
) -> Result<StepHessian> {
    let dims = model.dims();
    let (d, m) = (dims.state, dims.noise);
    let n = cloud.len();
    let nf = n as f64;
    let d2 = d * d;
    let d3 = d2 * d;
    let mut sd = SecondDerivatives::zeros(dims);
    let mut hx = vec![0.0; n * d3];
    let general = structure == LionsStructure::General;
    let need_mm = general && !model.lions_lions_vanishes();
    let mut mixed = general.then(|| MixedBlocks {
        mdx: vec![0.0; n * n * d3],
        xdm: vec![0.0; n * n * d3],
        vdm: vec![0.0; n * n * d3],
        mm: need_mm.then(|| vec![0.0; n * n * n * d3]),
    });
    for i in 0..n {
        let x = cloud.particle(i);
        let dbi = &db[i * m..(i + 1) * m];
        model.second_derivatives(x, cloud, x, x, &mut sd)?;
        fold(
            dt,
            dbi,
            &sd.dxx_drift,
            &sd.dxx_diffusion,
            d,
            m,
            d2,
            1.0,
            &mut hx[i * d3..(i + 1) * d3],
        );
        let Some(mx) = mixed.as_mut() else { continue };
        for l in 0..n {
            let v = cloud.particle(l);
            model.second_derivatives(x, cloud, v, v, &mut sd)?;
            let o = (i * n + l) * d3;
            fold(
                dt,
                dbi,
                &sd.dmu_dx_drift,
                &sd.dmu_dx_diffusion,
                d,
                m,
                d2,
                1.0 / nf,
                &mut mx.mdx[o..o + d3],
            );
            fold(
                dt,
                dbi,
                &sd.dx_dmu_drift,
                &sd.dx_dmu_diffusion,
                d,
                m,
                d2,
                1.0 / nf,
                &mut mx.xdm[o..o + d3],
            );
            fold(
                dt,
                dbi,
                &sd.dv_dmu_drift,
                &sd.dv_dmu_diffusion,
                d,
                m,
                d2,
                1.0 / nf,
                &mut mx.vdm[o..o + d3],
            );
            if let Some(mm) = mx.mm.as_mut() {
                for q in 0..n {
                    model.second_derivatives(x, cloud, v, cloud.particle(q), &mut sd)?;
                    let o = ((i * n + l) * n + q) * d3;
                    fold(
                        dt,
                        dbi,
                        &sd.dmumu_drift,
                        &sd.dmumu_diffusion,
                        d,
                        m,
                        d2,
                        1.0 / (nf * nf),
                        &mut mm[o..o + d3],
                    );
                }
            }
        }
    }
    Ok(StepHessian { hx, mixed })
}

/// `exp(dt·J_b)` for the full drift Jacobian plus the Euler noise part of
/// the Jacobian, as one dense matrix.
fn exponential_jacobian(
    model: &dyn CoefficientModel,
    cloud: &Cloud,
    db: &[f64],
    dt: f64,
    lin: &StepLin,
) -> Result<DMatrix<f64>> {
    let (n, d) = (lin.n, lin.d);
    let nd = n * d;
    // Drift-only Jacobian of the step: rebuild with zero increments.
    let zeros = vec![0.0; db.len()];
    let drift_only = StepLin::build(model, cloud, &zeros, dt, LinOptions::default())?;
    let mut jb = DMatrix::<f64>::zeros(nd, nd);
    let mut full = DMatrix::<f64>::zeros(nd, nd);
    let mut e = vec![0.0; nd];
    let mut col = vec![0.0; nd];
    let mut col_full = vec![0.0; nd];
    for c in 0..nd {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[c] = 1.0;
        drift_only.apply(&e, &mut col);
        lin.apply(&e, &mut col_full);
        for r in 0..nd {
            let id = if r == c { 1.0 } else { 0.0 };
            jb[(r, c)] = (col[r] - id) / dt;
            full[(r, c)] = col_full[r] - col[r];
        }
    }
    let ex = (jb * dt).exp();
    Ok(ex + full)
}
