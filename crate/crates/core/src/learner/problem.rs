use std::cmp::Ordering;

use super::{row_loss, softplus, FitConfig};
use crate::dataset::DataSet;
use crate::error::{Error, Result};

/// Column-major view of a dataset used by both solvers.
pub(crate) struct Problem {
    pub(crate) n: usize,
    pub(crate) d: usize,
    pub(crate) cols: Vec<Vec<i64>>,
    pub(crate) y: Vec<bool>,
}

impl Problem {
    pub(crate) fn new(ds: &DataSet) -> Result<Self> {
        let n = ds.n_rows();
        if n == 0 {
            return Err(Error::validation("cannot fit a model on a dataset with no rows"));
        }
        let d = ds.n_features();
        let mut cols = vec![Vec::with_capacity(n); d];
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            y.push(ds.target(i));
            for (j, &x) in ds.inputs(i).iter().enumerate() {
                cols[j].push(x);
            }
        }
        Ok(Self { n, d, cols, y })
    }

    pub(crate) fn column_ranges(&self) -> Vec<[i64; 2]> {
        self.cols
            .iter()
            .map(|c| {
                let lo = c.iter().copied().min().unwrap_or(0);
                let hi = c.iter().copied().max().unwrap_or(0);
                [lo, hi]
            })
            .collect()
    }

    pub(crate) fn scores_into(&self, coefs: &[i64], out: &mut Vec<i64>) {
        out.clear();
        out.resize(self.n, 0);
        for (col, &c) in self.cols.iter().zip(coefs) {
            if c != 0 {
                for (s, &x) in out.iter_mut().zip(col) {
                    *s += c * x;
                }
            }
        }
    }

    /// Mean loss at `bias` for precomputed scores.
    pub(crate) fn loss(&self, scores: &[i64], bias: i64) -> f64 {
        let total: f64 = scores
            .iter()
            .zip(&self.y)
            .map(|(&s, &y)| row_loss(bias, s, y))
            .sum();
        total / self.n as f64
    }

    /// Integer minimiser of the (convex) loss along the bias axis, found by
    /// walking downhill from `start`. Returns the bias, its loss and the
    /// number of loss evaluations.
    pub(crate) fn walk_bias(&self, scores: &[i64], start: i64, cfg: &FitConfig) -> (i64, f64, u64) {
        let mut b = start.clamp(cfg.bias_min, cfg.bias_max);
        let mut f = self.loss(scores, b);
        let mut evals = 1;
        let mut step = 0;
        for dir in [1i64, -1] {
            loop {
                let next = b + dir;
                if next < cfg.bias_min || next > cfg.bias_max {
                    break;
                }
                let g = self.loss(scores, next);
                evals += 1;
                if g < f {
                    b = next;
                    f = g;
                    step = dir;
                } else {
                    break;
                }
            }
            if step != 0 {
                break;
            }
        }
        (b, f, evals)
    }
}

/// Rows grouped by score, with positive and negative counts per group.
#[derive(Default)]
pub(crate) struct ScoreHistogram {
    pairs: Vec<(i64, bool)>,
    groups: Vec<(i64, f64, f64)>,
}

impl ScoreHistogram {
    pub(crate) fn rebuild(&mut self, scores: &[i64], y: &[bool]) {
        self.pairs.clear();
        self.pairs.extend(scores.iter().copied().zip(y.iter().copied()));
        self.pairs.sort_unstable();
        self.groups.clear();
        for &(s, pos) in &self.pairs {
            match self.groups.last_mut() {
                Some(g) if g.0 == s => {
                    if pos {
                        g.1 += 1.0
                    } else {
                        g.2 += 1.0
                    }
                }
                _ => self.groups.push((s, pos as u8 as f64, !pos as u8 as f64)),
            }
        }
    }

    /// Summed (not averaged) loss at `bias`.
    pub(crate) fn total_loss(&self, bias: i64) -> f64 {
        self.groups
            .iter()
            .map(|&(s, pos, neg)| {
                let z = (bias - s) as f64;
                let mut t = 0.0;
                if pos > 0.0 {
                    t += pos * softplus(z);
                }
                if neg > 0.0 {
                    t += neg * softplus(-z);
                }
                t
            })
            .sum()
    }
}

/// A point of the search lattice with its objective.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Candidate {
    pub(crate) objective: f64,
    pub(crate) bias: i64,
    pub(crate) coefs: Vec<i64>,
}

impl Candidate {
    pub(crate) fn size(&self) -> usize {
        self.coefs.iter().filter(|&&c| c != 0).count()
    }

    fn l1(&self) -> i64 {
        self.coefs.iter().map(|c| c.abs()).sum()
    }

    /// Total order: objective, then fewer nonzeros, then smaller L1 norm,
    /// then the vector `[bias, coefficients...]` lexicographically.
    pub(crate) fn rank(&self, other: &Self) -> Ordering {
        self.objective
            .total_cmp(&other.objective)
            .then_with(|| self.size().cmp(&other.size()))
            .then_with(|| self.l1().cmp(&other.l1()))
            .then_with(|| self.bias.cmp(&other.bias))
            .then_with(|| self.coefs.cmp(&other.coefs))
    }

    pub(crate) fn better(a: Option<Self>, b: Option<Self>) -> Option<Self> {
        match (a, b) {
            (Some(a), Some(b)) => Some(if b.rank(&a) == Ordering::Less { b } else { a }),
            (a, None) => a,
            (None, b) => b,
        }
    }
}
