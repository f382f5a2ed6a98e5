use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::first::Source;
use crate::error::{Error, Result};
use crate::stats;

/// Which cells of the `D²F` tensor enter the contraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Coverage {
    Full,
    /// `subsets` independent uniform draws of `cells` cells each; the
    /// double sum over each draw is reweighted by inclusion probabilities and
    /// the spread across draws gives the estimator variance.
    Sampled {
        cells: usize,
        subsets: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaOptions {
    pub coverage: Coverage,
    /// Jackknife groups over replicates.
    pub groups: usize,
    /// Turns the coverage warning into an error.
    pub strict: bool,
    /// Relative estimator standard deviation above which a sampled estimate
    /// counts as insufficiently covered.
    pub max_relative_sd: f64,
}

impl Default for DeltaOptions {
    fn default() -> Self {
        DeltaOptions {
            coverage: Coverage::Full,
            groups: 10,
            strict: false,
            max_relative_sd: 0.25,
        }
    }
}

/// Discretized `Δ_{N,t}` with its uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoincareFunctional {
    pub t: f64,
    pub n: usize,
    pub delta: f64,
    /// Jackknife standard error over replicates.
    pub stderr: f64,
    /// Total estimator variance: replicate jackknife plus cell subsampling.
    pub estimator_variance: f64,
    /// Cell steps of the quadrature (path grid indices).
    pub s_steps: Vec<usize>,
    /// Lebesgue weight of one cell.
    pub cell_weight: f64,
    pub coverage: Coverage,
    pub replicates: usize,
    pub warning: Option<String>,
}

/// Per-subset sums over replicates, split in jackknife groups.
struct Block {
    cells: Vec<usize>,
    /// `groups × c × c` sums of `K²` and of `DF²⊗DF²`.
    k2: Vec<DMatrix<f64>>,
    dd: Vec<DMatrix<f64>>,
}

/// Streaming accumulator for `Δ`: push `DF` and the needed `D²F` rows one
/// replicate at a time.
pub struct DeltaAccumulator {
    t: f64,
    n: usize,
    cells: Vec<Source>,
    weight: f64,
    opts: DeltaOptions,
    blocks: Vec<Block>,
    rows: Vec<usize>,
    counts: Vec<usize>,
    pushed: usize,
}

impl DeltaAccumulator {
    pub fn new(
        t: f64,
        n: usize,
        cells: Vec<Source>,
        cell_weight: f64,
        opts: DeltaOptions,
    ) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::invalid("no quadrature cells"));
        }
        if !(cell_weight > 0.0) {
            return Err(Error::invalid(format!(
                "cell weight must be positive, got {cell_weight}"
            )));
        }
        if opts.groups < 2 {
            return Err(Error::invalid("at least two jackknife groups are needed"));
        }
        let c = cells.len();
        let subsets: Vec<Vec<usize>> = match opts.coverage {
            Coverage::Full => vec![(0..c).collect()],
            Coverage::Sampled {
                cells: k,
                subsets,
                seed,
            } => {
                if k < 2 || k > c || subsets == 0 {
                    return Err(Error::invalid(format!(
                        "sampled coverage needs 2 ≤ cells ≤ {c} and at least one subset"
                    )));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..subsets)
                    .map(|_| {
                        let mut v = sample(&mut rng, c, k).into_vec();
                        v.sort_unstable();
                        v
                    })
                    .collect()
            }
        };
        let mut rows: Vec<usize> = subsets.iter().flatten().copied().collect();
        rows.sort_unstable();
        rows.dedup();
        let blocks = subsets
            .into_iter()
            .map(|cells| {
                let k = cells.len();
                Block {
                    cells,
                    k2: vec![DMatrix::zeros(k, k); opts.groups],
                    dd: vec![DMatrix::zeros(k, k); opts.groups],
                }
            })
            .collect();
        Ok(DeltaAccumulator {
            t,
            n,
            cells,
            weight: cell_weight,
            opts,
            blocks,
            rows,
            counts: vec![0; opts.groups],
            pushed: 0,
        })
    }

    /// Cell indices whose `D²F` rows must be supplied to [`push`](Self::push).
    pub fn rows_needed(&self) -> &[usize] {
        &self.rows
    }

    pub fn cells(&self) -> &[Source] {
        &self.cells
    }

    /// Adds one replicate: `df` over all cells, `rows` the `D²F` rows listed
    /// by [`rows_needed`](Self::rows_needed) (rows × cells).
    pub fn push(&mut self, df: &[f64], rows: &DMatrix<f64>) -> Result<()> {
        let c = self.cells.len();
        if df.len() != c {
            return Err(Error::dims("DF cells", c, df.len()));
        }
        if rows.nrows() != self.rows.len() || rows.ncols() != c {
            return Err(Error::dims("D²F rows", self.rows.len(), rows.nrows()));
        }
        let g = self.pushed % self.opts.groups;
        let w = self.weight;
        for b in &mut self.blocks {
            let pos: Vec<usize> = b
                .cells
                .iter()
                .map(|x| self.rows.binary_search(x).expect("row requested"))
                .collect();
            let sub = DMatrix::from_fn(pos.len(), c, |a, z| rows[(pos[a], z)]);
            let k = &sub * sub.transpose() * w;
            let df2: Vec<f64> = b.cells.iter().map(|&x| df[x] * df[x]).collect();
            let k2 = &mut b.k2[g];
            let dd = &mut b.dd[g];
            for y in 0..pos.len() {
                for x in 0..pos.len() {
                    k2[(x, y)] += k[(x, y)] * k[(x, y)];
                    dd[(x, y)] += df2[x] * df2[y];
                }
            }
        }
        self.counts[g] += 1;
        self.pushed += 1;
        Ok(())
    }

    fn block_value(&self, b: &Block, keep: &dyn Fn(usize) -> bool) -> f64 {
        let k = b.cells.len();
        let total: usize = (0..self.opts.groups)
            .filter(|&g| keep(g))
            .map(|g| self.counts[g])
            .sum();
        let inv = 1.0 / total as f64;
        let c = self.cells.len() as f64;
        let kf = k as f64;
        let (pi1, pi2) = match self.opts.coverage {
            Coverage::Full => (1.0, 1.0),
            Coverage::Sampled { .. } => (kf / c, kf * (kf - 1.0) / (c * (c - 1.0))),
        };
        let mut acc = 0.0;
        for y in 0..k {
            for x in 0..k {
                let (mut s2, mut sd) = (0.0, 0.0);
                for g in (0..self.opts.groups).filter(|&g| keep(g)) {
                    s2 += b.k2[g][(x, y)];
                    sd += b.dd[g][(x, y)];
                }
                let term = (s2 * inv).sqrt() * (sd * inv).sqrt();
                acc += term / if x == y { pi1 } else { pi2 };
            }
        }
        acc * self.weight * self.weight
    }

    fn value(&self, keep: &dyn Fn(usize) -> bool) -> (f64, Vec<f64>) {
        let per: Vec<f64> = self
            .blocks
            .iter()
            .map(|b| self.block_value(b, keep))
            .collect();
        (stats::mean(&per), per)
    }

    pub fn finish(self) -> Result<PoincareFunctional> {
        if self.pushed < 2 {
            return Err(Error::invalid("Δ needs at least two replicates"));
        }
        let groups = self.opts.groups.min(self.pushed);
        let (delta, per) = self.value(&|_| true);
        let loo: Vec<f64> = (0..groups).map(|h| self.value(&|g| g != h).0).collect();
        let stderr = stats::jackknife_se(&loo);
        let sub_var = if per.len() > 1 {
            stats::variance(&per) / per.len() as f64
        } else {
            0.0
        };
        let estimator_variance = stderr * stderr + sub_var;
        let mut warning = None;
        if let Coverage::Sampled { cells, subsets, .. } = self.opts.coverage {
            let rel = estimator_variance.sqrt() / delta.abs().max(f64::MIN_POSITIVE);
            let msg = if subsets < 2 {
                Some(format!(
                    "sampled coverage with a single subset of {cells} of {} cells: \
                     the subsampling variance is not estimated",
                    self.cells.len()
                ))
            } else if rel > self.opts.max_relative_sd {
                Some(format!(
                    "sampled coverage ({cells} of {} cells, {subsets} subsets): \
                     relative estimator sd {rel:.3} exceeds {}",
                    self.cells.len(),
                    self.opts.max_relative_sd
                ))
            } else {
                None
            };
            if let Some(m) = msg {
                if self.opts.strict {
                    return Err(Error::InsufficientCoverage(m));
                }
                warning = Some(m);
            }
        }
        let mut s_steps: Vec<usize> = self.cells.iter().map(|c| c.step).collect();
        s_steps.dedup();
        Ok(PoincareFunctional {
            t: self.t,
            n: self.n,
            delta,
            stderr,
            estimator_variance,
            s_steps,
            cell_weight: self.weight,
            coverage: self.opts.coverage,
            replicates: self.pushed,
            warning,
        })
    }
}

/// `Δ` from full-coverage replicate derivatives (every entry must carry `D²F`
/// over the same cells).
pub fn compute_delta(
    samples: &[super::FunctionalDerivatives],
    cell_weight: f64,
    opts: DeltaOptions,
) -> Result<PoincareFunctional> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("Δ needs at least two replicates"))?;
    let mut acc = DeltaAccumulator::new(first.t, first.n, first.cells.clone(), cell_weight, opts)?;
    let rows = acc.rows_needed().to_vec();
    for s in samples {
        if s.cells != first.cells {
            return Err(Error::invalid("replicates use different quadrature cells"));
        }
        let m = s
            .d2f
            .as_ref()
            .ok_or_else(|| Error::MissingDependency("D²F was not assembled".into()))?;
        let sub = m.select_rows(rows.iter());
        acc.push(&s.df, &sub)?;
    }
    acc.finish()
}

/// Gaussian-approximation bound `√(8/(πσ²))·√Δ`.
pub fn vidotto_bound(delta: f64, sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::DegenerateVariance(sigma2));
    }
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::invalid(format!(
            "Δ must be finite and non-negative, got {delta}"
        )));
    }
    Ok((8.0 / (std::f64::consts::PI * sigma2)).sqrt() * delta.sqrt())
}
