use std::fmt::Debug;

use serde::{Deserialize, Serialize};

/// A smooth observable φ: ℝ^d → ℝ with gradient and Hessian.
pub trait TestFunction: Send + Sync + Debug {
    fn value(&self, x: &[f64]) -> f64;
    /// ∇φ into `out` (length d).
    fn gradient(&self, x: &[f64], out: &mut [f64]);
    /// ∇²φ into `out` (d × d).
    fn hessian(&self, x: &[f64], out: &mut [f64]);
}

/// Built-in observables. Scalar variants act on one coordinate (`x₁` by default).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Observable {
    Coordinate {
        #[serde(default)]
        index: usize,
    },
    Tanh {
        #[serde(default)]
        index: usize,
    },
    Cos {
        #[serde(default)]
        index: usize,
    },
    Constant {
        value: f64,
    },
    /// `offset + Σ coef·φ`.
    Linear {
        #[serde(default)]
        offset: f64,
        terms: Vec<(f64, Observable)>,
    },
}

impl Observable {
    pub fn coordinate() -> Self {
        Observable::Coordinate { index: 0 }
    }

    pub fn tanh() -> Self {
        Observable::Tanh { index: 0 }
    }

    pub fn cos() -> Self {
        Observable::Cos { index: 0 }
    }

    /// Largest coordinate index referenced.
    pub fn max_index(&self) -> usize {
        match self {
            Observable::Coordinate { index }
            | Observable::Tanh { index }
            | Observable::Cos { index } => *index,
            Observable::Constant { .. } => 0,
            Observable::Linear { terms, .. } => {
                terms.iter().map(|(_, f)| f.max_index()).max().unwrap_or(0)
            }
        }
    }

    /// Value and first two derivatives of a scalar variant along its coordinate.
    fn scalar(&self, x: f64) -> (f64, f64, f64) {
        match self {
            Observable::Coordinate { .. } => (x, 1.0, 0.0),
            Observable::Tanh { .. } => {
                let t = x.tanh();
                let s = 1.0 - t * t;
                (t, s, -2.0 * s * t)
            }
            Observable::Cos { .. } => (x.cos(), -x.sin(), -x.cos()),
            _ => unreachable!("scalar called on composite observable"),
        }
    }
}

impl TestFunction for Observable {
    fn value(&self, x: &[f64]) -> f64 {
        match self {
            Observable::Coordinate { index }
            | Observable::Tanh { index }
            | Observable::Cos { index } => self.scalar(x[*index]).0,
            Observable::Constant { value } => *value,
            Observable::Linear { offset, terms } => {
                offset + terms.iter().map(|(c, f)| c * f.value(x)).sum::<f64>()
            }
        }
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        match self {
            Observable::Coordinate { index }
            | Observable::Tanh { index }
            | Observable::Cos { index } => out[*index] = self.scalar(x[*index]).1,
            Observable::Constant { .. } => {}
            Observable::Linear { terms, .. } => {
                let mut buf = vec![0.0; out.len()];
                for (c, f) in terms {
                    f.gradient(x, &mut buf);
                    for (o, b) in out.iter_mut().zip(&buf) {
                        *o += c * b;
                    }
                }
            }
        }
    }

    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let d = x.len();
        match self {
            Observable::Coordinate { index }
            | Observable::Tanh { index }
            | Observable::Cos { index } => {
                out[*index * d + *index] = self.scalar(x[*index]).2;
            }
            Observable::Constant { .. } => {}
            Observable::Linear { terms, .. } => {
                let mut buf = vec![0.0; out.len()];
                for (c, f) in terms {
                    f.hessian(x, &mut buf);
                    for (o, b) in out.iter_mut().zip(&buf) {
                        *o += c * b;
                    }
                }
            }
        }
    }
}

/// Largest scaled error between the analytic gradient/Hessian of `f` and
/// central differences of its value (resp. gradient) at `x`.
pub fn check_test_function(f: &dyn TestFunction, x: &[f64], h: f64) -> f64 {
    let d = x.len();
    let mut g = vec![0.0; d];
    let mut hs = vec![0.0; d * d];
    f.gradient(x, &mut g);
    f.hessian(x, &mut hs);
    let mut worst: f64 = 0.0;
    let mut xp = x.to_vec();
    let mut gp = vec![0.0; d];
    let mut gm = vec![0.0; d];
    for c in 0..d {
        xp[c] = x[c] + h;
        let fp = f.value(&xp);
        f.gradient(&xp, &mut gp);
        xp[c] = x[c] - h;
        let fm = f.value(&xp);
        f.gradient(&xp, &mut gm);
        xp[c] = x[c];
        let fd = (fp - fm) / (2.0 * h);
        worst = worst.max((fd - g[c]).abs() / g[c].abs().max(1.0));
        for a in 0..d {
            let fd = (gp[a] - gm[a]) / (2.0 * h);
            let an = hs[a * d + c];
            worst = worst.max((fd - an).abs() / an.abs().max(1.0));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_match_finite_differences() {
        let fs = [
            Observable::coordinate(),
            Observable::tanh(),
            Observable::cos(),
            Observable::Constant { value: 2.0 },
            Observable::Linear {
                offset: 1.0,
                terms: vec![
                    (2.0, Observable::tanh()),
                    (-0.5, Observable::Cos { index: 1 }),
                ],
            },
        ];
        for f in &fs {
            for x in [[0.3, -1.0], [-2.0, 0.7], [0.0, 0.0]] {
                assert!(check_test_function(f, &x, 1e-5) < 1e-8, "{f:?}");
            }
        }
    }

    #[test]
    fn serde_round_trip() {
        let f = Observable::Linear {
            offset: 0.5,
            terms: vec![(1.0, Observable::coordinate())],
        };
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(serde_json::from_str::<Observable>(&s).unwrap(), f);
        let t: Observable = serde_json::from_str(r#"{"kind":"tanh"}"#).unwrap();
        assert_eq!(t, Observable::tanh());
    }
}
