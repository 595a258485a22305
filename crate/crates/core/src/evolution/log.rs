use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvolutionError;
use crate::dsl::LossCandidate;

/// One evaluated candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRecord {
    pub stage: usize,
    pub index: usize,
    pub candidate: LossCandidate,
    /// Mean checkpoint score; `-inf` for failed runs.
    pub aulc: f64,
    pub checkpoints: Vec<(u64, f64)>,
    pub seed: u64,
    pub wall_ms: u64,
}

/// Records of one stage in index order, plus what selection kept.
#[derive(Debug, Clone, PartialEq)]
pub struct StageLog {
    pub stage: usize,
    pub records: Vec<CandidateRecord>,
    /// Indices into `records`, best first.
    pub survivors: Vec<usize>,
    /// Seed of the mutation stream that produces the next stage.
    pub next_mutation_seed: u64,
}

impl StageLog {
    pub fn survivor_candidates(&self) -> Vec<LossCandidate> {
        self.survivors
            .iter()
            .map(|&i| self.records[i].candidate.clone())
            .collect()
    }

    pub fn best(&self) -> Option<&CandidateRecord> {
        self.survivors.first().map(|&i| &self.records[i])
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SearchLog {
    pub stages: Vec<StageLog>,
}

impl SearchLog {
    pub fn records(&self) -> impl Iterator<Item = &CandidateRecord> {
        self.stages.iter().flat_map(|s| &s.records)
    }

    /// Highest-scoring record over all stages; ties go to the earliest.
    pub fn best(&self) -> Option<&CandidateRecord> {
        self.records()
            .fold(None, |best: Option<&CandidateRecord>, r| match best {
                Some(b) if b.aulc >= r.aulc => Some(b),
                _ => Some(r),
            })
    }
}

// Wire form. Field order is the line layout; non-finite scores become null.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    stage: usize,
    index: usize,
    candidate: String,
    aulc: Option<f64>,
    checkpoints: Vec<(u64, Option<f64>)>,
    seed: u64,
    wall_ms: u64,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

impl CandidateRecord {
    pub fn to_json_line(&self) -> String {
        let line = Line {
            stage: self.stage,
            index: self.index,
            candidate: self.candidate.to_string(),
            aulc: finite(self.aulc),
            checkpoints: self
                .checkpoints
                .iter()
                .map(|&(s, v)| (s, finite(v)))
                .collect(),
            seed: self.seed,
            wall_ms: self.wall_ms,
        };
        serde_json::to_string(&line).expect("plain data always serializes")
    }

    pub fn from_json_line(text: &str) -> Result<Self, String> {
        let line: Line = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let candidate = line
            .candidate
            .parse()
            .map_err(|e| format!("candidate: {e}"))?;
        Ok(Self {
            stage: line.stage,
            index: line.index,
            candidate,
            aulc: line.aulc.unwrap_or(f64::NEG_INFINITY),
            checkpoints: line
                .checkpoints
                .into_iter()
                .map(|(s, v)| (s, v.unwrap_or(f64::NEG_INFINITY)))
                .collect(),
            seed: line.seed,
            wall_ms: line.wall_ms,
        })
    }
}

/// Reads every record of a `search.jsonl` file. A malformed final line,
/// as left by an interrupted write, is dropped; malformed lines elsewhere
/// are errors.
pub fn read_search_log(path: &Path) -> Result<Vec<CandidateRecord>, EvolutionError> {
    let text = fs::read_to_string(path).map_err(|e| EvolutionError::io(path, e))?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, l) in lines.iter().enumerate() {
        match CandidateRecord::from_json_line(l) {
            Ok(r) => out.push(r),
            Err(_) if i + 1 == lines.len() && !text.ends_with('\n') => break,
            Err(message) => {
                return Err(EvolutionError::Log {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message,
                })
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::a2_winner;

    #[test]
    fn line_layout_and_round_trip() {
        let r = CandidateRecord {
            stage: 1,
            index: 2,
            candidate: "src:{s0,a0} tgt:{s1} op:mse k:1".parse().unwrap(),
            aulc: 1.5,
            checkpoints: vec![(10, 1.0), (20, 2.0)],
            seed: 7,
            wall_ms: 0,
        };
        let line = r.to_json_line();
        assert_eq!(
            line,
            r#"{"stage":1,"index":2,"candidate":"src:{s0,a0} tgt:{s1} op:mse k:1","aulc":1.5,"checkpoints":[[10,1.0],[20,2.0]],"seed":7,"wall_ms":0}"#
        );
        assert_eq!(CandidateRecord::from_json_line(&line).unwrap(), r);
    }

    #[test]
    fn failed_runs_survive_the_trip() {
        let r = CandidateRecord {
            stage: 1,
            index: 0,
            candidate: a2_winner(),
            aulc: f64::NEG_INFINITY,
            checkpoints: vec![(5, 3.0), (10, f64::NEG_INFINITY)],
            seed: 1,
            wall_ms: 0,
        };
        let line = r.to_json_line();
        assert!(line.contains(r#""aulc":null"#));
        assert_eq!(CandidateRecord::from_json_line(&line).unwrap(), r);
    }
}
