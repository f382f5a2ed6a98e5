use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniformly weighted empirical measure on `N` points of ℝ^d.
///
/// Positions are stored row-major: particle `i` occupies
/// `positions[i * dim..(i + 1) * dim]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cloud {
    positions: Vec<f64>,
    dim: usize,
}

impl Cloud {
    pub fn new(positions: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("cloud dimension must be at least 1"));
        }
        if positions.is_empty() {
            return Err(Error::invalid("cloud must contain at least one particle"));
        }
        if positions.len() % dim != 0 {
            return Err(Error::dims(
                "cloud positions",
                positions.len().div_ceil(dim) * dim,
                positions.len(),
            ));
        }
        if let Some(k) = positions.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "cloud coordinate of particle {} is not finite",
                k / dim
            )));
        }
        Ok(Cloud { positions, dim })
    }

    /// One-dimensional cloud from scalar positions.
    pub fn from_scalars(xs: &[f64]) -> Result<Self> {
        Cloud::new(xs.to_vec(), 1)
    }

    /// Builds a cloud without validation. Callers guarantee the invariants.
    pub(crate) fn from_raw(positions: Vec<f64>, dim: usize) -> Self {
        debug_assert!(dim > 0 && !positions.is_empty() && positions.len() % dim == 0);
        Cloud { positions, dim }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.positions.len() / self.dim
    }

    /// Always false: a cloud holds at least one particle.
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn particle(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub(crate) fn positions_mut(&mut self) -> &mut [f64] {
        &mut self.positions
    }

    pub fn into_positions(self) -> Vec<f64> {
        self.positions
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.len() as f64;
        let mut m = vec![0.0; self.dim];
        for p in self.positions.chunks_exact(self.dim) {
            for (a, v) in m.iter_mut().zip(p) {
                *a += v;
            }
        }
        m.iter_mut().for_each(|a| *a /= n);
        m
    }

    /// Copy with coordinate `coord` of particle `i` shifted by `h`.
    pub fn bumped(&self, i: usize, coord: usize, h: f64) -> Cloud {
        let mut c = self.clone();
        c.positions[i * self.dim + coord] += h;
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_input() {
        assert!(Cloud::new(vec![], 1).is_err());
        assert!(Cloud::new(vec![1.0, 2.0, 3.0], 2).is_err());
        assert!(Cloud::new(vec![1.0, f64::NAN], 1).is_err());
        assert!(Cloud::new(vec![1.0], 0).is_err());
    }

    #[test]
    fn particle_access_and_mean() {
        let c = Cloud::new(vec![1.0, 2.0, 3.0, 6.0], 2).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.particle(1), &[3.0, 6.0]);
        assert_eq!(c.mean(), vec![2.0, 4.0]);
    }
}
