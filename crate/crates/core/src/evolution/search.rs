use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use super::log::{read_search_log, CandidateRecord, SearchLog, StageLog};
use super::mutation::{bootstrap_population, next_generation, random_candidate};
use super::{aulc, select_top_n, survivor_count, EvolutionConfig, EvolutionError};
use crate::dsl::{LossCandidate, OperatorSpec};
use crate::envs::EnvSpec;
use crate::rl::{train_run, LearningCurve, RlError, SacConfig};
use crate::seed::{derive_seed, rng_from_seed, Purpose};

pub const SEARCH_LOG_FILE: &str = "search.jsonl";

/// Scores one candidate under one seed. Implementations must be pure in
/// `(candidate, seed)` for searches to be reproducible.
pub trait Evaluator: Sync {
    fn evaluate(&self, candidate: &LossCandidate, seed: u64) -> Result<LearningCurve, RlError>;
}

/// Trains an agent with the candidate as its auxiliary loss.
#[derive(Debug, Clone)]
pub struct RlEvaluator {
    pub env: EnvSpec,
    pub budget: u64,
    pub sac: SacConfig,
}

impl Evaluator for RlEvaluator {
    fn evaluate(&self, candidate: &LossCandidate, seed: u64) -> Result<LearningCurve, RlError> {
        train_run(Some(candidate), &self.env, self.budget, seed, &self.sac)
    }
}

/// Cheap stand-in fitness: negative Hamming distance to a hidden genome.
/// Masks of different horizons are compared on their common prefix, and
/// every bit only one of them has counts as a mismatch. Used to exercise
/// the search machinery without training agents.
#[derive(Debug, Clone)]
pub struct HammingSurrogate {
    pub target: LossCandidate,
}

impl HammingSurrogate {
    pub fn new(target: LossCandidate) -> Self {
        Self { target }
    }

    /// A surrogate whose hidden genome is a random valid candidate.
    pub fn hidden(seed: u64) -> Self {
        let mut rng = rng_from_seed(derive_seed(seed, 0, 0, Purpose::Surrogate));
        loop {
            let c = random_candidate(&mut rng, None, OperatorSpec::MSE);
            if c.is_valid() {
                return Self::new(c);
            }
        }
    }

    pub fn distance(&self, c: &LossCandidate) -> usize {
        [
            (c.source().bits(), self.target.source().bits()),
            (c.target().bits(), self.target.target().bits()),
        ]
        .iter()
        .map(|(a, b)| {
            let common = a.iter().zip(b.iter()).filter(|(x, y)| x != y).count();
            common + a.len().abs_diff(b.len())
        })
        .sum()
    }

    pub fn fitness(&self, c: &LossCandidate) -> f64 {
        -(self.distance(c) as f64)
    }
}

impl Evaluator for HammingSurrogate {
    fn evaluate(&self, candidate: &LossCandidate, seed: u64) -> Result<LearningCurve, RlError> {
        Ok(LearningCurve {
            checkpoints: vec![(0, self.fitness(candidate))],
            seed,
            wall_ms: 0,
            env_steps: 0,
            diverged: false,
        })
    }
}

fn evaluate_stage(
    config: &EvolutionConfig,
    evaluator: &dyn Evaluator,
    pool: &rayon::ThreadPool,
    stage: usize,
    population: &[LossCandidate],
) -> Vec<CandidateRecord> {
    pool.install(|| {
        population
            .par_iter()
            .enumerate()
            .map(|(index, candidate)| {
                let seed = derive_seed(config.seed, stage as u64, index as u64, Purpose::Train);
                let (score, checkpoints, wall) = match evaluator.evaluate(candidate, seed) {
                    Ok(curve) => (
                        aulc(&curve).unwrap_or(f64::NEG_INFINITY),
                        curve.checkpoints,
                        curve.wall_ms,
                    ),
                    Err(_) => (f64::NEG_INFINITY, Vec::new(), 0),
                };
                CandidateRecord {
                    stage,
                    index,
                    candidate: candidate.clone(),
                    aulc: if score.is_nan() {
                        f64::NEG_INFINITY
                    } else {
                        score
                    },
                    checkpoints,
                    seed,
                    wall_ms: if config.record_wall_time { wall } else { 0 },
                }
            })
            .collect()
    })
}

fn mutation_seed(config: &EvolutionConfig, next_stage: usize) -> u64 {
    derive_seed(config.seed, next_stage as u64, 0, Purpose::Mutation)
}

fn first_population(config: &EvolutionConfig) -> Vec<LossCandidate> {
    let mut rng = rng_from_seed(derive_seed(config.seed, 0, 0, Purpose::Bootstrap));
    bootstrap_population(config, &mut rng)
}

fn stage_log(config: &EvolutionConfig, stage: usize, records: Vec<CandidateRecord>) -> StageLog {
    let scores: Vec<f64> = records.iter().map(|r| r.aulc).collect();
    let survivors = select_top_n(
        &scores,
        survivor_count(records.len(), config.survivor_fraction),
    );
    StageLog {
        stage,
        records,
        survivors,
        next_mutation_seed: mutation_seed(config, stage + 1),
    }
}

fn following_population(config: &EvolutionConfig, last: &StageLog) -> Vec<LossCandidate> {
    let mut rng = rng_from_seed(last.next_mutation_seed);
    next_generation(&last.survivor_candidates(), config, &mut rng)
}

fn write_stage(dir: &Path, log: &StageLog) -> Result<(), EvolutionError> {
    let path = dir.join(SEARCH_LOG_FILE);
    let mut text = String::new();
    for r in &log.records {
        text.push_str(&r.to_json_line());
        text.push('\n');
    }
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| EvolutionError::io(&path, e))?;
    file.write_all(text.as_bytes())
        .map_err(|e| EvolutionError::io(&path, e))?;
    file.sync_data().map_err(|e| EvolutionError::io(&path, e))?;

    let path = dir.join(format!("stage-{}-survivors.txt", log.stage));
    let mut text = String::new();
    for c in log.survivor_candidates() {
        text.push_str(&c.to_string());
        text.push('\n');
    }
    fs::write(&path, text).map_err(|e| EvolutionError::io(&path, e))
}

fn run_from(
    config: &EvolutionConfig,
    evaluator: &dyn Evaluator,
    out: Option<&Path>,
    mut log: SearchLog,
) -> Result<SearchLog, EvolutionError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| EvolutionError::Pool(e.to_string()))?;
    let mut population = match log.stages.last() {
        None => first_population(config),
        Some(last) => following_population(config, last),
    };
    for stage in log.stages.len() + 1..=config.stages {
        let records = evaluate_stage(config, evaluator, &pool, stage, &population);
        let stage_log = stage_log(config, stage, records);
        if let Some(dir) = out {
            write_stage(dir, &stage_log)?;
        }
        if stage < config.stages {
            population = following_population(config, &stage_log);
        }
        log.stages.push(stage_log);
    }
    Ok(log)
}

/// Bootstraps a population and runs `config.stages` rounds of evaluation,
/// selection and mutation. With `out`, every finished stage is appended to
/// `out/search.jsonl` and its survivors written to
/// `out/stage-<n>-survivors.txt`.
///
/// Results depend only on the configuration and seed, never on the worker
/// count or completion order. Failed evaluations score `-inf`.
pub fn run_search(
    config: &EvolutionConfig,
    evaluator: &dyn Evaluator,
    out: Option<&Path>,
) -> Result<SearchLog, EvolutionError> {
    config.validate()?;
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| EvolutionError::io(dir, e))?;
        let path = dir.join(SEARCH_LOG_FILE);
        fs::write(&path, "").map_err(|e| EvolutionError::io(&path, e))?;
    }
    run_from(config, evaluator, out, SearchLog::default())
}

/// Continues a search from the complete stages in `out/search.jsonl`.
///
/// A partially written trailing stage is discarded and re-run, so the final
/// log equals that of an uninterrupted run with the same configuration.
pub fn resume_search(
    config: &EvolutionConfig,
    evaluator: &dyn Evaluator,
    out: &Path,
) -> Result<SearchLog, EvolutionError> {
    config.validate()?;
    let path = out.join(SEARCH_LOG_FILE);
    let records = if path.exists() {
        read_search_log(&path)?
    } else {
        Vec::new()
    };
    let mismatch = |line: usize, message: String| EvolutionError::Log {
        path: path.clone(),
        line,
        message,
    };

    let p = config.population;
    let mut log = SearchLog::default();
    let mut expected = first_population(config);
    for (s, chunk) in records.chunks(p).enumerate() {
        let stage = s + 1;
        if chunk.len() < p || stage > config.stages {
            break;
        }
        for (i, r) in chunk.iter().enumerate() {
            let line = s * p + i + 1;
            if r.stage != stage || r.index != i {
                return Err(mismatch(line, format!("expected stage {stage} index {i}")));
            }
            if r.candidate != expected[i] {
                return Err(mismatch(
                    line,
                    "candidate differs from this configuration".into(),
                ));
            }
        }
        let stage_log = stage_log(config, stage, chunk.to_vec());
        expected = following_population(config, &stage_log);
        log.stages.push(stage_log);
    }

    // rewrite the log without any partial stage before appending
    let mut text = String::new();
    for r in log.records() {
        text.push_str(&r.to_json_line());
        text.push('\n');
    }
    fs::create_dir_all(out).map_err(|e| EvolutionError::io(out, e))?;
    fs::write(&path, text).map_err(|e| EvolutionError::io(&path, e))?;
    run_from(config, evaluator, Some(out), log)
}
