use std::cmp::Ordering;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::continuous::{l1_path, refit, Standardized};
use super::problem::{Candidate, Problem};
use super::{Deadline, FitConfig, FitControl, FitMeta, RiskModel, SolverKind, SolverStatus};
use crate::dataset::{DataSet, HasHeader};
use crate::error::{Error, Result};

pub(crate) fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Rounded starting points kept for coordinate descent.
const DESCENT_STARTS: usize = 8;
/// Random restarts after the path-based starts.
const RANDOM_RESTARTS: usize = 8;

enum Stop {
    Time,
    Cancelled,
}

pub fn fit_heuristic(ds: &DataSet, cfg: &FitConfig) -> Result<RiskModel> {
    fit_heuristic_with(ds, cfg, &FitControl::new())
}

/// Anytime solver.
///
/// 1. An L1-regularised continuous logistic path ranks the columns.
/// 2. Candidate supports are the top-`k` prefixes of that ranking for every
///    `k` up to `max_model_size`, plus the active sets met along the path.
/// 3. A light ridge refit on each support is rounded onto the integer
///    lattice, both as-is and rescaled so its largest weight lands on each
///    integer up to the coefficient box.
/// 4. The best starts, plus a few seeded random ones, are improved by
///    discrete coordinate descent: each step tries `λj ± 1` and `λj → 0` for
///    every column (the bias is re-optimised along its own axis for each
///    trial) and takes the best strictly improving move, earliest column
///    first on ties.
///
/// The zero model with its best bias is the first incumbent, so a valid model
/// is returned even when the time limit expires immediately.
pub fn fit_heuristic_with(ds: &DataSet, cfg: &FitConfig, control: &FitControl) -> Result<RiskModel> {
    cfg.validate()?;
    let problem = Problem::new(ds)?;
    let deadline = Deadline::new(cfg.time_limit());
    let mut search = Search {
        p: &problem,
        cfg,
        control,
        deadline,
        k_max: cfg.max_model_size.min(problem.d),
        scores: Vec::with_capacity(problem.n),
        trial: Vec::with_capacity(problem.n),
    };
    let zero = search.with_best_bias(vec![0; problem.d], initial_bias(&problem));
    control.offer_incumbent(zero.objective);
    let mut best = zero;
    let status = match search.run(&mut best) {
        Ok(()) => SolverStatus::LocalOptimum,
        Err(Stop::Time) => SolverStatus::TimeLimit,
        Err(Stop::Cancelled) => return Err(Error::Cancelled),
    };
    let meta = FitMeta {
        fit_config: cfg.clone(),
        objective: best.objective,
        solver: SolverKind::Heuristic,
        solver_status: status,
        candidates_evaluated: control.progress().candidates_evaluated,
        wall_time_seconds: deadline.elapsed_secs(),
        created_at: timestamp(),
    };
    Ok(RiskModel::new(ds.header().to_vec(), best.bias, best.coefs)?
        .with_column_ranges(problem.column_ranges())?
        .with_meta(meta))
}

/// Bias matching the base rate: `ln(negatives / positives)`.
fn initial_bias(p: &Problem) -> i64 {
    let pos = p.y.iter().filter(|&&t| t).count() as f64;
    let neg = p.n as f64 - pos;
    ((neg + 0.5) / (pos + 0.5)).ln().round() as i64
}

struct Search<'a> {
    p: &'a Problem,
    cfg: &'a FitConfig,
    control: &'a FitControl,
    deadline: Deadline,
    k_max: usize,
    scores: Vec<i64>,
    trial: Vec<i64>,
}

impl Search<'_> {
    fn tick(&self) -> Result<(), Stop> {
        if self.control.is_cancelled() {
            Err(Stop::Cancelled)
        } else if self.deadline.expired() {
            Err(Stop::Time)
        } else {
            Ok(())
        }
    }

    fn with_best_bias(&mut self, coefs: Vec<i64>, start: i64) -> Candidate {
        self.p.scores_into(&coefs, &mut self.scores);
        let (bias, loss, evals) = self.p.walk_bias(&self.scores, start, self.cfg);
        self.control.add_candidates(evals);
        let size = coefs.iter().filter(|&&c| c != 0).count();
        Candidate {
            objective: loss + self.cfg.l0_penalty * size as f64,
            bias,
            coefs,
        }
    }

    fn run(&mut self, best: &mut Candidate) -> Result<(), Stop> {
        if self.k_max == 0 {
            return Ok(());
        }
        self.tick()?;
        let std = Standardized::new(self.p);
        let path = l1_path(&std, &self.deadline).ok_or(Stop::Time)?;

        let mut supports: Vec<Vec<usize>> = Vec::new();
        for k in 1..=self.k_max.min(path.ranking.len()) {
            let mut s = path.ranking[..k].to_vec();
            s.sort_unstable();
            supports.push(s);
        }
        for s in path.active_sets.iter().filter(|s| s.len() <= self.k_max) {
            supports.push(s.clone());
        }
        supports.sort();
        supports.dedup();

        let mut starts: Vec<Candidate> = Vec::new();
        for support in &supports {
            self.tick()?;
            let fit = refit(&std, support, &self.deadline).ok_or(Stop::Time)?;
            for (coefs, intercept) in self.roundings(support, &fit.weights, fit.intercept) {
                if starts.iter().any(|c| c.coefs == coefs) {
                    continue;
                }
                let cand = self.with_best_bias(coefs, (-intercept).round() as i64);
                starts.push(cand);
            }
        }
        starts.sort_by(|a, b| a.rank(b));
        starts.truncate(DESCENT_STARTS);
        starts.push(best.clone());

        for start in starts {
            let local = self.descend(start, best)?;
            self.accept(best, local);
        }

        let signs: Vec<i64> = [1, -1]
            .into_iter()
            .filter(|s| (self.cfg.coef_min..=self.cfg.coef_max).contains(s))
            .collect();
        if signs.is_empty() || self.k_max == 0 {
            return Ok(());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.random_seed);
        for _ in 0..RANDOM_RESTARTS {
            self.tick()?;
            let k = rng.random_range(1..=self.k_max);
            let mut coefs = vec![0i64; self.p.d];
            for j in sample(&mut rng, self.p.d, k) {
                coefs[j] = signs[rng.random_range(0..signs.len())];
            }
            let start = self.with_best_bias(coefs, best.bias);
            let local = self.descend(start, best)?;
            self.accept(best, local);
        }
        Ok(())
    }

    fn accept(&self, best: &mut Candidate, cand: Candidate) {
        if cand.rank(best) == Ordering::Less {
            self.control.offer_incumbent(cand.objective);
            *best = cand;
        }
    }

    /// Integer roundings of a continuous weight vector: plain rounding and
    /// rescalings putting the largest weight on each integer up to the box.
    /// Each comes with the matching (rescaled) intercept.
    fn roundings(&self, support: &[usize], weights: &[f64], intercept: f64) -> Vec<(Vec<i64>, f64)> {
        let round = |scale: f64| -> Vec<i64> {
            let mut coefs = vec![0i64; self.p.d];
            for &j in support {
                coefs[j] = ((weights[j] * scale).round() as i64).clamp(self.cfg.coef_min, self.cfg.coef_max);
            }
            coefs
        };
        let mut out = vec![(round(1.0), intercept)];
        let largest = support.iter().map(|&j| weights[j].abs()).fold(0.0, f64::max);
        if largest > 0.0 {
            let reach = self.cfg.coef_max.max(-self.cfg.coef_min);
            for target in 1..=reach.min(10) {
                let scale = target as f64 / largest;
                out.push((round(scale), intercept * scale));
            }
        }
        out.retain(|(c, _)| c.iter().any(|&v| v != 0));
        out
    }

    /// Best-improvement discrete coordinate descent from `start`. Returns the
    /// local optimum; on interruption the incumbent is updated first.
    fn descend(&mut self, start: Candidate, best: &mut Candidate) -> Result<Candidate, Stop> {
        let mut cur = start;
        self.p.scores_into(&cur.coefs, &mut self.scores);
        loop {
            if let Err(stop) = self.tick() {
                self.accept(best, cur);
                return Err(stop);
            }
            let size = cur.size();
            let mut chosen: Option<(usize, i64, i64, f64)> = None;
            for j in 0..self.p.d {
                let c = cur.coefs[j];
                let mut moves: [Option<i64>; 3] = [Some(c + 1), Some(c - 1), None];
                if c.abs() > 1 {
                    moves[2] = Some(0);
                }
                for new in moves.into_iter().flatten() {
                    if new < self.cfg.coef_min || new > self.cfg.coef_max {
                        continue;
                    }
                    let new_size = size + (new != 0) as usize - (c != 0) as usize;
                    if new_size > self.k_max {
                        continue;
                    }
                    let delta = new - c;
                    self.trial.clear();
                    self.trial.extend(
                        self.scores
                            .iter()
                            .zip(&self.p.cols[j])
                            .map(|(&s, &x)| s + delta * x),
                    );
                    let (bias, loss, evals) = self.p.walk_bias(&self.trial, cur.bias, self.cfg);
                    self.control.add_candidates(evals);
                    let objective = loss + self.cfg.l0_penalty * new_size as f64;
                    let target = chosen.map_or(cur.objective, |m| m.3);
                    if objective < target {
                        chosen = Some((j, new, bias, objective));
                    }
                }
            }
            let Some((j, new, bias, objective)) = chosen else {
                return Ok(cur);
            };
            let delta = new - cur.coefs[j];
            for (s, &x) in self.scores.iter_mut().zip(&self.p.cols[j]) {
                *s += delta * x;
            }
            cur.coefs[j] = new;
            cur.bias = bias;
            cur.objective = objective;
        }
    }
}
