//! Continuous L1-regularised logistic regression, used by the heuristic
//! solver to rank columns and to propose starting points for rounding.
//!
//! Uses the usual logit convention `intercept + w·x`; the risk model's
//! `bias` corresponds to `-intercept`.

use super::problem::Problem;
use super::Deadline;

/// Continuous logistic model in original column units.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousFit {
    pub intercept: f64,
    pub weights: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean logistic loss and its gradient with respect to the weights and the
/// intercept. `cols` is column-major.
pub fn logistic_gradient(cols: &[Vec<f64>], y: &[f64], weights: &[f64], intercept: f64) -> (f64, Vec<f64>, f64) {
    let n = y.len();
    let mut eta = vec![intercept; n];
    for (col, &w) in cols.iter().zip(weights) {
        for (e, &x) in eta.iter_mut().zip(col) {
            *e += w * x;
        }
    }
    let mut loss = 0.0;
    let mut resid = Vec::with_capacity(n);
    for (&e, &t) in eta.iter().zip(y) {
        loss += log1p_exp(e) - t * e;
        resid.push(sigmoid(e) - t);
    }
    let grad: Vec<f64> = cols
        .iter()
        .map(|col| col.iter().zip(&resid).map(|(x, r)| x * r).sum::<f64>() / n as f64)
        .collect();
    let grad_b = resid.iter().sum::<f64>() / n as f64;
    (loss / n as f64, grad, grad_b)
}

/// Columns centred and scaled to unit variance; constant columns are kept
/// at zero and never enter a model.
pub(crate) struct Standardized {
    cols: Vec<Vec<f64>>,
    mean: Vec<f64>,
    scale: Vec<f64>,
    y: Vec<f64>,
}

impl Standardized {
    pub(crate) fn new(p: &Problem) -> Self {
        let n = p.n as f64;
        let mut cols = Vec::with_capacity(p.d);
        let mut mean = Vec::with_capacity(p.d);
        let mut scale = Vec::with_capacity(p.d);
        for col in &p.cols {
            let m = col.iter().map(|&x| x as f64).sum::<f64>() / n;
            let var = col.iter().map(|&x| (x as f64 - m).powi(2)).sum::<f64>() / n;
            let s = var.sqrt();
            if s > 1e-12 {
                cols.push(col.iter().map(|&x| (x as f64 - m) / s).collect());
                scale.push(s);
            } else {
                cols.push(vec![0.0; p.n]);
                scale.push(0.0);
            }
            mean.push(m);
        }
        let y = p.y.iter().map(|&t| t as u8 as f64).collect();
        Self { cols, mean, scale, y }
    }

    fn usable(&self, j: usize) -> bool {
        self.scale[j] > 0.0
    }

    /// Proximal coordinate descent on
    /// `mean loss + lambda·|w|_1 + ridge/2·|w|²` restricted to `support`.
    /// Returns `false` when the deadline interrupted it.
    fn solve(&self, lambda: f64, ridge: f64, support: &[usize], state: &mut CdState, deadline: &Deadline) -> bool {
        let n = self.y.len() as f64;
        for _ in 0..MAX_SWEEPS {
            if deadline.expired() {
                return false;
            }
            let mut max_change: f64 = 0.0;
            let g0 = state
                .eta
                .iter()
                .zip(&self.y)
                .map(|(&e, &t)| sigmoid(e) - t)
                .sum::<f64>()
                / n;
            let step = g0 / 0.25;
            state.intercept -= step;
            state.eta.iter_mut().for_each(|e| *e -= step);
            max_change = max_change.max(step.abs());

            for &j in support {
                if !self.usable(j) {
                    continue;
                }
                let col = &self.cols[j];
                let g = col
                    .iter()
                    .zip(&state.eta)
                    .zip(&self.y)
                    .map(|((&x, &e), &t)| x * (sigmoid(e) - t))
                    .sum::<f64>()
                    / n
                    + ridge * state.w[j];
                let lip = 0.25 + ridge;
                let raw = state.w[j] - g / lip;
                let thr = lambda / lip;
                let new = raw.signum() * (raw.abs() - thr).max(0.0);
                let delta = new - state.w[j];
                if delta != 0.0 {
                    state.w[j] = new;
                    for (e, &x) in state.eta.iter_mut().zip(col) {
                        *e += delta * x;
                    }
                    max_change = max_change.max(delta.abs());
                }
            }
            if max_change < TOLERANCE {
                break;
            }
        }
        true
    }

    fn to_original(&self, state: &CdState) -> ContinuousFit {
        let mut intercept = state.intercept;
        let weights = (0..state.w.len())
            .map(|j| {
                if self.usable(j) && state.w[j] != 0.0 {
                    let w = state.w[j] / self.scale[j];
                    intercept -= w * self.mean[j];
                    w
                } else {
                    0.0
                }
            })
            .collect();
        ContinuousFit { intercept, weights }
    }
}

const MAX_SWEEPS: usize = 200;
const TOLERANCE: f64 = 1e-6;
const PATH_LENGTH: usize = 15;
const PATH_RATIO: f64 = 1e-3;
const REFIT_RIDGE: f64 = 1e-3;

struct CdState {
    w: Vec<f64>,
    intercept: f64,
    eta: Vec<f64>,
}

impl CdState {
    fn new(std: &Standardized) -> Self {
        let n = std.y.len() as f64;
        let rate = (std.y.iter().sum::<f64>() / n).clamp(1e-6, 1.0 - 1e-6);
        let intercept = (rate / (1.0 - rate)).ln();
        Self {
            w: vec![0.0; std.cols.len()],
            intercept,
            eta: vec![intercept; std.y.len()],
        }
    }
}

/// Outcome of the L1 path.
pub(crate) struct Path {
    /// Usable columns, most important first.
    pub(crate) ranking: Vec<usize>,
    /// Distinct active sets met along the path, in path order.
    pub(crate) active_sets: Vec<Vec<usize>>,
}

/// Runs the L1 path from the smallest penalty that keeps every weight at
/// zero down to `PATH_RATIO` of it. Columns are ranked by the penalty level
/// at which they first become active, then by weight magnitude at entry.
/// Returns `None` if the deadline expired.
pub(crate) fn l1_path(std: &Standardized, deadline: &Deadline) -> Option<Path> {
    let d = std.cols.len();
    let n = std.y.len() as f64;
    let ybar = std.y.iter().sum::<f64>() / n;
    let lambda_max = (0..d)
        .filter(|&j| std.usable(j))
        .map(|j| {
            std.cols[j]
                .iter()
                .zip(&std.y)
                .map(|(x, t)| x * (t - ybar))
                .sum::<f64>()
                .abs()
                / n
        })
        .fold(0.0, f64::max);
    let all: Vec<usize> = (0..d).filter(|&j| std.usable(j)).collect();
    let mut ranking = Vec::new();
    let mut entered = vec![false; d];
    let mut active_sets: Vec<Vec<usize>> = Vec::new();
    let mut state = CdState::new(std);
    if lambda_max > 0.0 {
        for step in 1..=PATH_LENGTH {
            let frac = step as f64 / PATH_LENGTH as f64;
            let lambda = lambda_max * PATH_RATIO.powf(frac);
            if !std.solve(lambda, 0.0, &all, &mut state, deadline) {
                return None;
            }
            let mut new: Vec<usize> = (0..d).filter(|&j| state.w[j] != 0.0 && !entered[j]).collect();
            new.sort_by(|&a, &b| state.w[b].abs().total_cmp(&state.w[a].abs()).then(a.cmp(&b)));
            for j in new {
                entered[j] = true;
                ranking.push(j);
            }
            let active: Vec<usize> = (0..d).filter(|&j| state.w[j] != 0.0).collect();
            if !active.is_empty() && active_sets.last() != Some(&active) {
                active_sets.push(active);
            }
        }
    }
    ranking.extend(all.into_iter().filter(|&j| !entered[j]));
    Some(Path {
        ranking,
        active_sets,
    })
}

/// Lightly ridge-regularised logistic fit on `support`, in original units.
pub(crate) fn refit(std: &Standardized, support: &[usize], deadline: &Deadline) -> Option<ContinuousFit> {
    let mut state = CdState::new(std);
    std.solve(0.0, REFIT_RIDGE, support, &mut state, deadline)
        .then(|| std.to_original(&state))
}
