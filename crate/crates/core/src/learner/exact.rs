use std::cmp::Ordering;
use std::sync::atomic::{AtomicBool, Ordering as AtomicOrdering};

use itertools::Itertools;
use rayon::prelude::*;

use super::problem::{Candidate, Problem, ScoreHistogram};
use super::{Deadline, FitConfig, FitControl, FitMeta, RiskModel, SolverKind, SolverStatus};
use crate::dataset::{DataSet, HasHeader};
use crate::error::{Error, Result};

/// Number of (coefficient vector, bias) pairs exact search evaluates for `d`
/// input columns. Saturates instead of overflowing.
pub fn exact_candidate_count(d: usize, cfg: &FitConfig) -> u128 {
    let values = (cfg.coef_max - cfg.coef_min) as u128;
    let k_max = if values == 0 { 0 } else { cfg.max_model_size.min(d) };
    let biases = (cfg.bias_max - cfg.bias_min + 1) as u128;
    let mut total: u128 = 0;
    let mut binom: u128 = 1;
    let mut power: u128 = 1;
    for k in 0..=k_max {
        if k > 0 {
            binom = binom.saturating_mul((d - k + 1) as u128) / k as u128;
            power = power.saturating_mul(values);
        }
        total = total.saturating_add(binom.saturating_mul(power));
    }
    total.saturating_mul(biases)
}

pub fn fit_exact(ds: &DataSet, cfg: &FitConfig) -> Result<RiskModel> {
    fit_exact_with(ds, cfg, &FitControl::new())
}

/// Global minimiser of the objective over the whole constrained lattice.
///
/// Every support of size at most `max_model_size` is enumerated with every
/// nonzero coefficient value in the box, and every bias in the bias box.
/// Ties are broken towards fewer nonzeros, then smaller L1 norm, then the
/// lexicographically smallest `[bias, coefficients...]`. Supports are
/// searched in parallel; the reduction uses the same total order, so the
/// result does not depend on the thread count.
///
/// If the time limit expires the best model found so far is returned with
/// status `time-limit`.
pub fn fit_exact_with(ds: &DataSet, cfg: &FitConfig, control: &FitControl) -> Result<RiskModel> {
    cfg.validate()?;
    let problem = Problem::new(ds)?;
    let candidates = exact_candidate_count(problem.d, cfg);
    if candidates > cfg.exact_budget as u128 {
        return Err(Error::InfeasibleScale {
            candidates,
            budget: cfg.exact_budget as u128,
        });
    }
    let deadline = Deadline::new(cfg.time_limit());
    let stopped = AtomicBool::new(false);
    let values: Vec<i64> = (cfg.coef_min..=cfg.coef_max).filter(|&v| v != 0).collect();
    let k_max = if values.is_empty() {
        0
    } else {
        cfg.max_model_size.min(problem.d)
    };

    let supports: Vec<Vec<usize>> = (0..=k_max)
        .flat_map(|k| (0..problem.d).combinations(k))
        .collect();
    let best = supports
        .par_iter()
        .map(|support| {
            let search = SupportSearch {
                problem: &problem,
                cfg,
                control,
                deadline: &deadline,
                stopped: &stopped,
            };
            search.run(support, &values)
        })
        .reduce(|| None, Candidate::better)
        .expect("the empty support is always searched first");

    if control.is_cancelled() {
        return Err(Error::Cancelled);
    }
    let status = if stopped.load(AtomicOrdering::Relaxed) {
        SolverStatus::TimeLimit
    } else {
        SolverStatus::Optimal
    };
    let progress = control.progress();
    let meta = FitMeta {
        fit_config: cfg.clone(),
        objective: best.objective,
        solver: SolverKind::Exact,
        solver_status: status,
        candidates_evaluated: progress.candidates_evaluated,
        wall_time_seconds: deadline.elapsed_secs(),
        created_at: super::heuristic::timestamp(),
    };
    Ok(RiskModel::new(ds.header().to_vec(), best.bias, best.coefs)?
        .with_column_ranges(problem.column_ranges())?
        .with_meta(meta))
}

struct SupportSearch<'a> {
    problem: &'a Problem,
    cfg: &'a FitConfig,
    control: &'a FitControl,
    deadline: &'a Deadline,
    stopped: &'a AtomicBool,
}

/// How many coefficient vectors are evaluated between deadline checks.
const CHECK_EVERY: usize = 256;

impl SupportSearch<'_> {
    fn should_stop(&self) -> bool {
        if self.stopped.load(AtomicOrdering::Relaxed) {
            return true;
        }
        if self.control.is_cancelled() || self.deadline.expired() {
            self.stopped.store(true, AtomicOrdering::Relaxed);
            return true;
        }
        false
    }

    fn run(&self, support: &[usize], values: &[i64]) -> Option<Candidate> {
        // The empty support always runs so a time-limited search still has
        // an incumbent.
        if !support.is_empty() && self.should_stop() {
            return None;
        }
        let p = self.problem;
        let n = p.n as f64;
        let l0 = self.cfg.l0_penalty * support.len() as f64;
        let mut odometer = vec![0usize; support.len()];
        let mut coefs = vec![0i64; p.d];
        let mut scores = Vec::with_capacity(p.n);
        let mut hist = ScoreHistogram::default();
        let mut best: Option<Candidate> = None;
        let biases = (self.cfg.bias_max - self.cfg.bias_min + 1) as u64;
        let mut since_check = 0;

        loop {
            for (slot, &j) in odometer.iter().zip(support) {
                coefs[j] = values[*slot];
            }
            p.scores_into(&coefs, &mut scores);
            hist.rebuild(&scores, &p.y);
            for bias in self.cfg.bias_min..=self.cfg.bias_max {
                let objective = hist.total_loss(bias) / n + l0;
                let improves = match &best {
                    None => true,
                    Some(b) => match objective.total_cmp(&b.objective) {
                        Ordering::Less => true,
                        Ordering::Greater => false,
                        Ordering::Equal => {
                            let cand = Candidate {
                                objective,
                                bias,
                                coefs: coefs.clone(),
                            };
                            cand.rank(b) == Ordering::Less
                        }
                    },
                };
                if improves {
                    best = Some(Candidate {
                        objective,
                        bias,
                        coefs: coefs.clone(),
                    });
                    self.control.offer_incumbent(objective);
                }
            }
            self.control.add_candidates(biases);

            // Advance the odometer over nonzero values.
            let mut pos = 0;
            loop {
                if pos == odometer.len() {
                    return best;
                }
                odometer[pos] += 1;
                if odometer[pos] < values.len() {
                    break;
                }
                odometer[pos] = 0;
                pos += 1;
            }
            since_check += 1;
            if since_check == CHECK_EVERY {
                since_check = 0;
                if self.should_stop() {
                    return best;
                }
            }
        }
    }
}
