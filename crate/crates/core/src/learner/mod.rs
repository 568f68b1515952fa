//! Learning sparse integer risk models.
//!
//! A model assigns an integer number of points to each dataset column and
//! carries an integer `bias`; the risk of a row with total points `score` is
//! `1 / (1 + exp(bias - score))`. Fitting minimises the mean logistic loss
//! plus `l0_penalty` times the number of nonzero coefficients, under hard
//! limits on model size and on the coefficient and bias ranges.
//!
//! [`fit_exact`] enumerates the whole lattice and is only usable for small
//! problems; [`fit_heuristic`] is the anytime solver for everything else.
//! [`fit`] picks between them.

mod continuous;
mod exact;
mod heuristic;
mod model;
mod problem;

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dataset::{check_compatible, DataSet};
use crate::error::{Error, Result};

pub use continuous::{logistic_gradient, ContinuousFit};
pub use exact::{exact_candidate_count, fit_exact, fit_exact_with};
pub use heuristic::{fit_heuristic, fit_heuristic_with};
pub use model::{FitMeta, RiskModel};

/// Default cap on candidate (coefficients, bias) evaluations for exact search.
pub const DEFAULT_EXACT_BUDGET: u64 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMode {
    Exact,
    Heuristic,
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Exact,
    Heuristic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverStatus {
    Optimal,
    LocalOptimum,
    TimeLimit,
}

/// Operational constraints and solver settings for one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub max_model_size: usize,
    pub coef_min: i64,
    pub coef_max: i64,
    pub bias_min: i64,
    pub bias_max: i64,
    pub l0_penalty: f64,
    pub time_limit_seconds: f64,
    pub solver_mode: SolverMode,
    pub random_seed: u64,
    pub exact_budget: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_model_size: 5,
            coef_min: -5,
            coef_max: 5,
            bias_min: -20,
            bias_max: 20,
            l0_penalty: 1e-3,
            time_limit_seconds: 60.0,
            solver_mode: SolverMode::Auto,
            random_seed: 0,
            exact_budget: DEFAULT_EXACT_BUDGET,
        }
    }
}

/// Bound on coefficient and bias magnitudes accepted in a config.
const MAX_BOX: i64 = 1_000_000;

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::validation(format!("fit config: {m}")));
        if self.max_model_size == 0 {
            return fail("max_model_size must be at least 1");
        }
        if !(self.coef_min <= 0 && 0 <= self.coef_max) {
            return fail("coefficient range must contain 0");
        }
        if !(self.bias_min <= 0 && 0 <= self.bias_max) {
            return fail("bias range must contain 0");
        }
        if [self.coef_min, self.coef_max, self.bias_min, self.bias_max]
            .iter()
            .any(|v| v.abs() > MAX_BOX)
        {
            return fail("coefficient and bias bounds must lie within ±1000000");
        }
        if !(self.l0_penalty.is_finite() && self.l0_penalty >= 0.0) {
            return fail("l0_penalty must be a nonnegative number");
        }
        if !(self.time_limit_seconds.is_finite() && self.time_limit_seconds > 0.0) {
            return fail("time_limit_seconds must be positive");
        }
        Ok(())
    }

    pub(crate) fn time_limit(&self) -> Duration {
        Duration::try_from_secs_f64(self.time_limit_seconds).unwrap_or(Duration::MAX)
    }
}

/// Shared progress counters of a running fit.
#[derive(Debug)]
struct Progress {
    candidates: AtomicU64,
    incumbent: AtomicU64,
}

/// Snapshot of a running fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitProgress {
    pub candidates_evaluated: u64,
    pub incumbent_objective: Option<f64>,
}

/// Cooperative cancellation and progress reporting for a fit. Clones share
/// state, so one handle can be passed to the solver while another polls or
/// cancels.
#[derive(Debug, Clone)]
pub struct FitControl {
    cancelled: Arc<AtomicBool>,
    progress: Arc<Progress>,
}

impl Default for FitControl {
    fn default() -> Self {
        Self {
            cancelled: Arc::new(AtomicBool::new(false)),
            progress: Arc::new(Progress {
                candidates: AtomicU64::new(0),
                incumbent: AtomicU64::new(f64::NAN.to_bits()),
            }),
        }
    }
}

impl FitControl {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.cancelled.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.cancelled.load(Ordering::Relaxed)
    }

    pub fn progress(&self) -> FitProgress {
        let bits = self.progress.incumbent.load(Ordering::Relaxed);
        let obj = f64::from_bits(bits);
        FitProgress {
            candidates_evaluated: self.progress.candidates.load(Ordering::Relaxed),
            incumbent_objective: (!obj.is_nan()).then_some(obj),
        }
    }

    pub(crate) fn add_candidates(&self, n: u64) {
        self.progress.candidates.fetch_add(n, Ordering::Relaxed);
    }

    /// Records `objective` if it improves on the reported incumbent.
    pub(crate) fn offer_incumbent(&self, objective: f64) {
        let _ = self
            .progress
            .incumbent
            .fetch_update(Ordering::Relaxed, Ordering::Relaxed, |bits| {
                let cur = f64::from_bits(bits);
                (cur.is_nan() || objective < cur).then_some(objective.to_bits())
            });
    }
}

/// Wall-clock budget of a fit.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Deadline {
    start: Instant,
    limit: Duration,
}

impl Deadline {
    pub(crate) fn new(limit: Duration) -> Self {
        Self {
            start: Instant::now(),
            limit,
        }
    }

    pub(crate) fn expired(&self) -> bool {
        self.start.elapsed() >= self.limit
    }

    pub(crate) fn elapsed_secs(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }
}

/// Integer dot product of coefficients and an input row.
pub fn score(model: &RiskModel, row: &[i64]) -> Result<i64> {
    let coefs = model.coefficients();
    if row.len() != coefs.len() {
        return Err(Error::Dimension {
            expected: coefs.len(),
            found: row.len(),
        });
    }
    coefs
        .iter()
        .zip(row)
        .try_fold(0i64, |acc, (&c, &x)| c.checked_mul(x).and_then(|t| acc.checked_add(t)))
        .ok_or_else(|| Error::validation("score overflows a 64-bit integer"))
}

/// `1 / (1 + exp(bias - score))`.
pub fn predict_risk_from_score(bias: i64, score: i64) -> f64 {
    let z = (bias as i128 - score as i128) as f64;
    1.0 / (1.0 + z.exp())
}

/// `1 - predict_risk_from_score(bias, score)`, computed without
/// cancellation so it keeps full relative precision where the risk itself
/// rounds to 1.
pub fn predict_no_risk_from_score(bias: i64, score: i64) -> f64 {
    let z = (score as i128 - bias as i128) as f64;
    1.0 / (1.0 + z.exp())
}

pub fn predict_risk(model: &RiskModel, row: &[i64]) -> Result<f64> {
    Ok(predict_risk_from_score(model.bias(), score(model, row)?))
}

/// `ln(1 + exp(z))` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Negative log-likelihood of one observation under the risk formula.
pub(crate) fn row_loss(bias: i64, score: i64, positive: bool) -> f64 {
    let z = (bias as i128 - score as i128) as f64;
    if positive {
        softplus(z)
    } else {
        softplus(-z)
    }
}

/// Mean logistic loss of `model` on `ds`.
pub fn logistic_loss(model: &RiskModel, ds: &DataSet) -> Result<f64> {
    check_compatible(model, ds)?;
    if ds.n_rows() == 0 {
        return Err(Error::validation("dataset has no rows"));
    }
    let mut total = 0.0;
    for i in 0..ds.n_rows() {
        total += row_loss(model.bias(), score(model, ds.inputs(i))?, ds.target(i));
    }
    Ok(total / ds.n_rows() as f64)
}

/// Training objective: mean logistic loss plus the L0 penalty.
pub fn objective(model: &RiskModel, ds: &DataSet, l0_penalty: f64) -> Result<f64> {
    Ok(logistic_loss(model, ds)? + l0_penalty * model.model_size() as f64)
}

/// Fits with the solver chosen by `cfg.solver_mode`. In `auto` mode exact
/// search is used whenever its candidate count fits `cfg.exact_budget`.
pub fn fit(ds: &DataSet, cfg: &FitConfig) -> Result<RiskModel> {
    fit_with(ds, cfg, &FitControl::new())
}

pub fn fit_with(ds: &DataSet, cfg: &FitConfig, control: &FitControl) -> Result<RiskModel> {
    match choose_solver(ds, cfg)? {
        SolverKind::Exact => fit_exact_with(ds, cfg, control),
        SolverKind::Heuristic => fit_heuristic_with(ds, cfg, control),
    }
}

/// The solver [`fit`] would dispatch to. Fails with
/// [`Error::InfeasibleScale`] when exact search is forced beyond the budget.
pub fn choose_solver(ds: &DataSet, cfg: &FitConfig) -> Result<SolverKind> {
    cfg.validate()?;
    Ok(match cfg.solver_mode {
        SolverMode::Exact => {
            let candidates = exact_candidate_count(ds.n_features(), cfg);
            if candidates > cfg.exact_budget as u128 {
                return Err(Error::InfeasibleScale {
                    candidates,
                    budget: cfg.exact_budget as u128,
                });
            }
            SolverKind::Exact
        }
        SolverMode::Heuristic => SolverKind::Heuristic,
        SolverMode::Auto => {
            if exact_candidate_count(ds.n_features(), cfg) <= cfg.exact_budget as u128 {
                SolverKind::Exact
            } else {
                SolverKind::Heuristic
            }
        }
    })
}
