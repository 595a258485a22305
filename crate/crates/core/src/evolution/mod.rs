//! The outer search loop: populations of loss candidates scored by the
//! area under their learning curves.

mod crossval;
mod log;
mod mutation;
mod prune;
mod search;

pub use crossval::{cross_validate, CrossValidation};
pub use log::{read_search_log, CandidateRecord, SearchLog, StageLog};
pub use mutation::{
    bootstrap_population, category_counts, mutate_crossover, mutate_horizon, mutate_replacement,
    next_generation, random_candidate, HorizonDirection, Prior,
};
pub use prune::{forward_dynamics_input, prune_operators, OperatorScore, PruneReport};
pub use search::{
    resume_search, run_search, Evaluator, HammingSurrogate, RlEvaluator, SEARCH_LOG_FILE,
};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::OperatorSpec;
use crate::rl::LearningCurve;

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("crossover needs equal horizons, got {left} and {right}")]
    HorizonMismatch { left: usize, right: usize },
    #[error("learning curve has no checkpoints")]
    EmptyCurve,
    #[error("invalid search configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Log {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("worker pool: {0}")]
    Pool(String),
}

impl EvolutionError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

/// Fractions of each child category in a new population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MutationMix {
    pub replacement: f64,
    pub crossover: f64,
    pub horizon: f64,
    pub random: f64,
}

impl Default for MutationMix {
    fn default() -> Self {
        Self {
            replacement: 0.5,
            crossover: 0.2,
            horizon: 0.1,
            random: 0.2,
        }
    }
}

/// Population-level settings. What an evaluation means is up to the
/// [`Evaluator`].
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionConfig {
    pub population: usize,
    pub survivor_fraction: f64,
    pub mix: MutationMix,
    pub stages: usize,
    pub prior_fraction: f64,
    pub operator: OperatorSpec,
    pub seed: u64,
    pub workers: usize,
    /// Log real wall-clock times instead of zeros. Breaks byte-identical logs.
    pub record_wall_time: bool,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            population: 100,
            survivor_fraction: 0.25,
            mix: MutationMix::default(),
            stages: 5,
            prior_fraction: 0.25,
            operator: OperatorSpec::MSE,
            seed: 0,
            workers: 1,
            record_wall_time: false,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<(), EvolutionError> {
        let bad = |m: String| Err(EvolutionError::Config(m));
        if self.population == 0 {
            return bad("population must be positive".into());
        }
        if !(self.survivor_fraction > 0.0 && self.survivor_fraction < 1.0) {
            return bad(format!(
                "survivor fraction {} outside (0, 1)",
                self.survivor_fraction
            ));
        }
        let m = &self.mix;
        let parts = [m.replacement, m.crossover, m.horizon, m.random];
        if parts.iter().any(|&f| !(0.0..=1.0).contains(&f)) {
            return bad("mutation mix fractions must lie in [0, 1]".into());
        }
        let total: f64 = parts.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("mutation mix sums to {total}, not 1"));
        }
        if !(0.0..=1.0).contains(&self.prior_fraction) {
            return bad(format!(
                "prior fraction {} outside [0, 1]",
                self.prior_fraction
            ));
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        Ok(())
    }
}

/// `ceil(fraction * n)`, tolerant of representation error in `fraction`.
pub(crate) fn ceil_count(fraction: f64, n: usize) -> usize {
    (fraction * n as f64 - 1e-9).ceil().max(0.0) as usize
}

/// Mean of the checkpoint scores.
pub fn aulc(curve: &LearningCurve) -> Result<f64, EvolutionError> {
    if curve.checkpoints.is_empty() {
        return Err(EvolutionError::EmptyCurve);
    }
    let sum: f64 = curve.checkpoints.iter().map(|&(_, s)| s).sum();
    Ok(sum / curve.checkpoints.len() as f64)
}

/// Indices of the `n` best scores, best first; ties go to the lower index.
pub fn select_top_n(scores: &[f64], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(n);
    order
}

/// Survivor count for a stage: `floor(fraction * n)`, at least one.
pub fn survivor_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64 + 1e-9).floor() as usize).clamp(1, n.max(1))
}

/// The best `floor(fraction * |records|)` records (at least one).
pub fn select_top(records: &[CandidateRecord], fraction: f64) -> Vec<CandidateRecord> {
    let scores: Vec<f64> = records.iter().map(|r| r.aulc).collect();
    select_top_n(&scores, survivor_count(records.len(), fraction))
        .into_iter()
        .map(|i| records[i].clone())
        .collect()
}
