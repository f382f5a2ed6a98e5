use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Cloud, CoefficientModel, LionsStructure, TestFunction};
use crate::quadrature::GaussHermite;
use crate::simulate::{InitialLaw, LawFlow};

/// Number of equal-mass points standing in for a Gaussian μ_s in coefficients.
const MEASURE_POINTS: usize = 256;

/// Kernel of the nonlocal linearized operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linearization {
    /// `δb/δm(x, μ)(y)` and `δa/δm(x, μ)(y)`.
    #[default]
    LinearFunctional,
    /// `∂_μb(x, μ)(y)` and `∂_μa(x, μ)(y)`.
    Lions,
}

/// Space-time grid of the backward solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdeGrid {
    pub points: usize,
    /// Half width of the automatic domain in standard deviations of μ_s.
    pub half_width_sd: f64,
    /// Explicit domain, overriding the automatic one.
    pub bounds: Option<(f64, f64)>,
    /// Backward time step.
    pub ds: f64,
}

impl PdeGrid {
    pub fn new(ds: f64) -> Self {
        PdeGrid {
            points: 801,
            half_width_sd: 8.0,
            bounds: None,
            ds,
        }
    }

    /// Halves both the space and time steps.
    pub fn refined(&self) -> Self {
        PdeGrid {
            points: 2 * self.points - 1,
            ds: self.ds / 2.0,
            ..*self
        }
    }
}

/// ψ_s on a uniform grid for `s = 0, ds, …, t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackwardPdeSolution {
    pub t: f64,
    pub mode: Linearization,
    pub x_grid: Vec<f64>,
    /// Ascending `s_0 = 0 < … < s_K = t`.
    pub s_grid: Vec<f64>,
    /// `psi[k][i] = ψ_{s_k}(x_i)`.
    pub psi: Vec<Vec<f64>>,
    pub dpsi: Vec<Vec<f64>>,
    pub boundary: String,
}

impl BackwardPdeSolution {
    fn h(&self) -> f64 {
        self.x_grid[1] - self.x_grid[0]
    }

    /// Linear interpolation of `values` (on the x grid), extrapolated linearly
    /// beyond the ends.
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        interp(self.x_grid[0], self.h(), values, x)
    }

    pub fn psi_at(&self, k: usize, x: f64) -> f64 {
        self.interpolate(&self.psi[k], x)
    }

    pub fn dpsi_at(&self, k: usize, x: f64) -> f64 {
        self.interpolate(&self.dpsi[k], x)
    }
}

fn interp(x0: f64, h: f64, v: &[f64], x: f64) -> f64 {
    let m = v.len();
    let u = (x - x0) / h;
    let i = (u.floor().max(0.0) as usize).min(m - 2);
    let f = u - i as f64;
    v[i] * (1.0 - f) + v[i + 1] * f
}

fn derivatives(psi: &[f64], h: f64) -> (Vec<f64>, Vec<f64>) {
    let m = psi.len();
    let mut d1 = vec![0.0; m];
    let mut d2 = vec![0.0; m];
    for i in 1..m - 1 {
        d1[i] = (psi[i + 1] - psi[i - 1]) / (2.0 * h);
        d2[i] = (psi[i + 1] - 2.0 * psi[i] + psi[i - 1]) / (h * h);
    }
    d1[0] = (psi[1] - psi[0]) / h;
    d1[m - 1] = (psi[m - 1] - psi[m - 2]) / h;
    (d1, d2)
}

/// Local coefficients `b(x_i, μ_s)` and `a(x_i, μ_s) = |σ(x_i, μ_s)|²`.
struct Local {
    b: Vec<f64>,
    a: Vec<f64>,
}

struct Context<'a> {
    model: &'a dyn CoefficientModel,
    law: &'a LawFlow,
    mode: Linearization,
    x: Vec<f64>,
    h: f64,
    m_noise: usize,
    nonlocal: bool,
}

impl Context<'_> {
    fn cloud(&self, s: f64) -> Result<Cloud> {
        self.law.measure_cloud(s, MEASURE_POINTS)
    }

    fn local(&self, cloud: &Cloud) -> Local {
        let m = self.m_noise;
        let mut b = vec![0.0; self.x.len()];
        let mut a = vec![0.0; self.x.len()];
        let mut out = [0.0];
        let mut sig = vec![0.0; m];
        for (i, &xi) in self.x.iter().enumerate() {
            self.model.drift(&[xi], cloud, &mut out);
            b[i] = out[0];
            self.model.diffusion(&[xi], cloud, &mut sig);
            a[i] = sig.iter().map(|v| v * v).sum();
        }
        Local { b, a }
    }

    /// `𝓐_{μ_s}ψ(y_i)` at every interior grid point.
    fn nonlocal(&self, s: f64, cloud: &Cloud, psi: &[f64]) -> Result<Vec<f64>> {
        let mx = self.x.len();
        let mut out = vec![0.0; mx];
        if !self.nonlocal {
            return Ok(out);
        }
        let nodes = self.law.nodes(s)?;
        let (d1, d2) = derivatives(psi, self.h);
        let m = self.m_noise;
        let mut kb = [0.0];
        let mut ks = vec![0.0; m];
        let mut sig = vec![0.0; m];
        let diffusion_nonlocal = !self.model.constant_diffusion();
        for q in 0..nodes.len() {
            let w = nodes.weights[q];
            if w < 1e-300 {
                continue;
            }
            let xq = nodes.point(q)[0];
            let g1 = w * interp(self.x[0], self.h, &d1, xq);
            let g2 = w * interp(self.x[0], self.h, &d2, xq);
            if diffusion_nonlocal {
                self.model.diffusion(&[xq], cloud, &mut sig);
            }
            for i in 1..mx - 1 {
                let y = [self.x[i]];
                let mut acc = 0.0;
                match self.mode {
                    Linearization::LinearFunctional => {
                        self.model.flat_drift(&[xq], cloud, &y, &mut kb)?
                    }
                    Linearization::Lions => self.model.lions_drift(&[xq], cloud, &y, &mut kb)?,
                }
                acc += kb[0] * g1;
                if diffusion_nonlocal {
                    match self.mode {
                        Linearization::LinearFunctional => {
                            self.model.flat_diffusion(&[xq], cloud, &y, &mut ks)?
                        }
                        Linearization::Lions => {
                            self.model.lions_diffusion(&[xq], cloud, &y, &mut ks)?
                        }
                    }
                    let ka: f64 = 2.0 * sig.iter().zip(&ks).map(|(s, k)| s * k).sum::<f64>();
                    acc += 0.5 * ka * g2;
                }
                out[i] += acc;
            }
        }
        Ok(out)
    }
}

fn apply_local(loc: &Local, psi: &[f64], h: f64, out: &mut [f64]) {
    let m = psi.len();
    for i in 1..m - 1 {
        let d1 = (psi[i + 1] - psi[i - 1]) / (2.0 * h);
        let d2 = (psi[i + 1] - 2.0 * psi[i] + psi[i - 1]) / (h * h);
        out[i] = loc.b[i] * d1 + 0.5 * loc.a[i] * d2;
    }
}

/// Solves `(I − ½ds·L)ψ = rhs` on the interior with `ψ'' = 0` at both ends.
fn implicit_solve(loc: &Local, h: f64, ds: f64, rhs: &[f64]) -> Result<Vec<f64>> {
    let m = rhs.len();
    let n = m - 2;
    let mut lo = vec![0.0; n];
    let mut di = vec![0.0; n];
    let mut up = vec![0.0; n];
    let mut r = vec![0.0; n];
    for k in 0..n {
        let i = k + 1;
        let (b, a) = (loc.b[i], loc.a[i]);
        lo[k] = -0.5 * ds * (-b / (2.0 * h) + a / (2.0 * h * h));
        di[k] = 1.0 - 0.5 * ds * (-a / (h * h));
        up[k] = -0.5 * ds * (b / (2.0 * h) + a / (2.0 * h * h));
        r[k] = rhs[i];
    }
    // ψ_0 = 2ψ_1 − ψ_2 and ψ_{m−1} = 2ψ_{m−2} − ψ_{m−3}.
    di[0] += 2.0 * lo[0];
    up[0] -= lo[0];
    lo[0] = 0.0;
    di[n - 1] += 2.0 * up[n - 1];
    lo[n - 1] -= up[n - 1];
    up[n - 1] = 0.0;
    // Thomas algorithm.
    for k in 1..n {
        if di[k - 1] == 0.0 {
            return Err(Error::Numerical("singular tridiagonal system".into()));
        }
        let w = lo[k] / di[k - 1];
        di[k] -= w * up[k - 1];
        r[k] -= w * r[k - 1];
    }
    let mut sol = vec![0.0; m];
    sol[n] = r[n - 1] / di[n - 1];
    for k in (0..n - 1).rev() {
        sol[k + 1] = (r[k] - up[k] * sol[k + 2]) / di[k];
    }
    sol[0] = 2.0 * sol[1] - sol[2];
    sol[m - 1] = 2.0 * sol[m - 2] - sol[m - 3];
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "backward solve produced non-finite values".into(),
        ));
    }
    Ok(sol)
}

fn domain(law: &LawFlow, grid: &PdeGrid, s_grid: &[f64]) -> Result<(f64, f64)> {
    let moments: Vec<(f64, f64)> = s_grid
        .iter()
        .map(|&s| law.moments(s).map(|(m, v)| (m, v.max(0.0).sqrt())))
        .collect::<Result<_>>()?;
    let (lo, hi) = match grid.bounds {
        Some(b) => b,
        None => {
            let sd_max = moments.iter().map(|p| p.1).fold(0.0, f64::max);
            let floor = if sd_max > 0.0 { sd_max } else { 1.0 };
            let hw = grid.half_width_sd;
            let lo = moments
                .iter()
                .map(|(m, sd)| {
                    m - hw
                        * if *sd > 0.0 {
                            sd.max(floor / 4.0)
                        } else {
                            floor
                        }
                })
                .fold(f64::INFINITY, f64::min);
            let hi = moments
                .iter()
                .map(|(m, sd)| {
                    m + hw
                        * if *sd > 0.0 {
                            sd.max(floor / 4.0)
                        } else {
                            floor
                        }
                })
                .fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        }
    };
    if !(hi > lo) {
        return Err(Error::Grid(format!("empty PDE domain [{lo}, {hi}]")));
    }
    for (k, (m, sd)) in moments.iter().enumerate() {
        if m - 6.0 * sd < lo || m + 6.0 * sd > hi {
            return Err(Error::Grid(format!(
                "domain [{lo:.3}, {hi:.3}] covers less than 6 standard deviations of μ_s at s = {} (mean {m:.3}, sd {sd:.3})",
                s_grid[k]
            )));
        }
    }
    Ok((lo, hi))
}

/// Marches `∂_sψ + 𝓛_{μ_s}ψ + 𝓐_{μ_s}ψ = 0`, `ψ_t = φ`, backward to `s = 0`.
///
/// `𝓛` is treated by Crank–Nicolson; the nonlocal `𝓐` explicitly with a
/// Heun predictor–corrector. Scalar state only.
pub fn solve_backward_pde(
    model: &dyn CoefficientModel,
    law: &LawFlow,
    phi: &dyn TestFunction,
    grid: &PdeGrid,
    t: f64,
    mode: Linearization,
) -> Result<BackwardPdeSolution> {
    let dims = model.dims();
    if dims.state != 1 || law.dim() != 1 {
        return Err(Error::unsupported(
            model.name(),
            "backward PDE in dimension > 1",
        ));
    }
    if grid.points < 5 {
        return Err(Error::Grid("PDE grid needs at least 5 points".into()));
    }
    if !(grid.ds > 0.0) || !(t >= 0.0) {
        return Err(Error::Grid(format!(
            "invalid time step {} or horizon {t}",
            grid.ds
        )));
    }
    if t > law.horizon() + 1e-12 {
        return Err(Error::Grid(format!(
            "law flow ends at {} < t = {t}",
            law.horizon()
        )));
    }
    let steps = (t / grid.ds).round() as usize;
    if (steps as f64 * grid.ds - t).abs() > 1e-9 * t.max(grid.ds) {
        return Err(Error::Grid(format!(
            "t = {t} is not a multiple of ds = {}",
            grid.ds
        )));
    }
    let s_grid: Vec<f64> = (0..=steps).map(|k| k as f64 * grid.ds).collect();
    let (lo, hi) = domain(law, grid, &s_grid)?;
    let mx = grid.points;
    let h = (hi - lo) / (mx - 1) as f64;
    let x: Vec<f64> = (0..mx).map(|i| lo + h * i as f64).collect();
    let ctx = Context {
        model,
        law,
        mode,
        h,
        m_noise: dims.noise,
        nonlocal: model.lions_structure() != LionsStructure::Zero,
        x,
    };
    let ds = grid.ds;

    let mut psi: Vec<f64> = ctx.x.iter().map(|&xi| phi.value(&[xi])).collect();
    let mut out = vec![Vec::new(); steps + 1];
    out[steps] = psi.clone();
    let mut cloud_next = ctx.cloud(s_grid[steps])?;
    let mut loc_next = ctx.local(&cloud_next);
    let mut lpsi = vec![0.0; mx];
    for k in (1..=steps).rev() {
        let (s_hi, s_lo) = (s_grid[k], s_grid[k - 1]);
        let cloud_lo = ctx.cloud(s_lo)?;
        let loc_lo = ctx.local(&cloud_lo);
        apply_local(&loc_next, &psi, h, &mut lpsi);
        let a_hi = ctx.nonlocal(s_hi, &cloud_next, &psi)?;
        let base: Vec<f64> = (0..mx).map(|i| psi[i] + 0.5 * ds * lpsi[i]).collect();
        let rhs: Vec<f64> = (0..mx).map(|i| base[i] + ds * a_hi[i]).collect();
        let mut new = implicit_solve(&loc_lo, h, ds, &rhs)?;
        if ctx.nonlocal {
            let a_lo = ctx.nonlocal(s_lo, &cloud_lo, &new)?;
            let rhs: Vec<f64> = (0..mx)
                .map(|i| base[i] + 0.5 * ds * (a_hi[i] + a_lo[i]))
                .collect();
            new = implicit_solve(&loc_lo, h, ds, &rhs)?;
        }
        psi = new;
        out[k - 1] = psi.clone();
        cloud_next = cloud_lo;
        loc_next = loc_lo;
    }
    let dpsi = out.iter().map(|p| derivatives(p, h).0).collect();
    Ok(BackwardPdeSolution {
        t,
        mode,
        x_grid: ctx.x,
        s_grid,
        psi: out,
        dpsi,
        boundary: "linear extrapolation (ψ'' = 0) at both ends".into(),
    })
}

/// `Var_ν(ψ_0(X_0)) + ∫₀ᵗ E_{μ_s}|σ(X_s, μ_s)ᵀ∂ₓψ_s(X_s)|² ds`.
pub fn limiting_variance(
    sol: &BackwardPdeSolution,
    law: &LawFlow,
    model: &dyn CoefficientModel,
    init: &InitialLaw,
) -> Result<f64> {
    init.validate()?;
    let gh = GaussHermite::new(64);
    let v0 = match *init {
        InitialLaw::Gaussian { mean, variance } => {
            let sd = variance.sqrt();
            let c = sol.psi_at(0, mean);
            let e1 = gh.expect(mean, sd, |x| sol.psi_at(0, x) - c);
            let e2 = gh.expect(mean, sd, |x| (sol.psi_at(0, x) - c).powi(2));
            e2 - e1 * e1
        }
        InitialLaw::Dirac { .. } => 0.0,
    };
    let m = model.dims().noise;
    let mut sig = vec![0.0; m];
    let mut integrand = Vec::with_capacity(sol.s_grid.len());
    for (k, &s) in sol.s_grid.iter().enumerate() {
        let nodes = law.nodes(s)?;
        let cloud = law.measure_cloud(s, MEASURE_POINTS)?;
        integrand.push(nodes.expect(|x| {
            model.diffusion(x, &cloud, &mut sig);
            let a: f64 = sig.iter().map(|v| v * v).sum();
            a * sol.dpsi_at(k, x[0]).powi(2)
        }));
    }
    let mut integral = 0.0;
    for k in 1..integrand.len() {
        integral += 0.5 * (sol.s_grid[k] - sol.s_grid[k - 1]) * (integrand[k] + integrand[k - 1]);
    }
    let total = v0 + integral;
    let scale = v0.abs() + integral.abs();
    if total < -1e-10 * scale.max(1e-300) {
        return Err(Error::Numerical(format!(
            "limiting variance is negative: {total}"
        )));
    }
    Ok(total.max(0.0))
}
