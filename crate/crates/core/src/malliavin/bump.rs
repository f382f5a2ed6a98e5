use super::first::Source;
use crate::error::{Error, Result};
use crate::model::CoefficientModel;
use crate::simulate::{replay_path, PathRecord};

fn perturbed(path: &PathRecord, bumps: &[(Source, f64)]) -> Result<Vec<f64>> {
    let (n, m) = (path.particles(), path.noise_dim);
    let mut inc = path.increments.clone();
    for (s, h) in bumps {
        if s.step >= path.steps() || s.particle >= n || s.noise >= m {
            return Err(Error::invalid(format!(
                "bump source {s:?} outside the path"
            )));
        }
        inc[(s.step * n + s.particle) * m + s.noise] += h;
    }
    Ok(inc)
}

fn replay_at(
    model: &dyn CoefficientModel,
    path: &PathRecord,
    bumps: &[(Source, f64)],
    u_step: usize,
) -> Result<Vec<f64>> {
    if u_step > path.steps() {
        return Err(Error::Grid(format!("step {u_step} beyond the path")));
    }
    let inc = perturbed(path, bumps)?;
    let nm = path.particles() * path.noise_dim;
    let clouds = replay_path(model, &path.snapshots[0], &inc[..u_step * nm], path.grid.dt)?;
    Ok(clouds[u_step].positions().to_vec())
}

/// Forward difference `(X_u(ΔB + h e_s) − X_u(ΔB))/h` of the deterministic
/// Euler map, for every particle (N × d).
pub fn bump_derivative(
    model: &dyn CoefficientModel,
    path: &PathRecord,
    source: Source,
    h: f64,
    u_step: usize,
) -> Result<Vec<f64>> {
    let base = replay_at(model, path, &[], u_step)?;
    let up = replay_at(model, path, &[(source, h)], u_step)?;
    Ok(up.iter().zip(&base).map(|(a, b)| (a - b) / h).collect())
}

/// Mixed forward difference in two increments:
/// `(X(+h₁e_a + h₂e_b) − X(+h₁e_a) − X(+h₂e_b) + X)/(h₁h₂)`.
pub fn double_bump(
    model: &dyn CoefficientModel,
    path: &PathRecord,
    outer: Source,
    inner: Source,
    h1: f64,
    h2: f64,
    u_step: usize,
) -> Result<Vec<f64>> {
    let base = replay_at(model, path, &[], u_step)?;
    let a = replay_at(model, path, &[(outer, h1)], u_step)?;
    let b = replay_at(model, path, &[(inner, h2)], u_step)?;
    let ab = replay_at(model, path, &[(outer, h1), (inner, h2)], u_step)?;
    Ok((0..base.len())
        .map(|k| (ab[k] - a[k] - b[k] + base[k]) / (h1 * h2))
        .collect())
}
