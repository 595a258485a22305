use crate::dsl::LossCandidate;

/// Scores of every candidate on every environment, raw and normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossValidation {
    pub env_ids: Vec<String>,
    /// `scores[c][e]`: mean over seeds of candidate `c` on environment `e`.
    pub scores: Vec<Vec<f64>>,
    /// `scores[c][e]` divided by the best score on environment `e`.
    pub normalized: Vec<Vec<f64>>,
    /// Mean normalized score per candidate.
    pub mean_normalized: Vec<f64>,
    pub winner: usize,
}

/// Evaluates each candidate on each environment and seed with `score` and
/// picks the highest mean normalized score; ties go to the lower index.
pub fn cross_validate<E>(
    candidates: &[LossCandidate],
    env_ids: &[String],
    seeds: &[u64],
    mut score: impl FnMut(&LossCandidate, &str, u64) -> Result<f64, E>,
) -> Result<CrossValidation, E> {
    assert!(!candidates.is_empty() && !env_ids.is_empty() && !seeds.is_empty());
    let mut scores = Vec::with_capacity(candidates.len());
    for c in candidates {
        let mut row = Vec::with_capacity(env_ids.len());
        for env in env_ids {
            let mut total = 0.0;
            for &s in seeds {
                total += score(c, env, s)?;
            }
            row.push(total / seeds.len() as f64);
        }
        scores.push(row);
    }
    let maxima: Vec<f64> = (0..env_ids.len())
        .map(|e| {
            scores
                .iter()
                .map(|r| r[e])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let normalized: Vec<Vec<f64>> = scores
        .iter()
        .map(|row| {
            row.iter()
                .zip(&maxima)
                .map(|(&s, &m)| {
                    if m != 0.0 && m.is_finite() {
                        s / m
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let mean_normalized: Vec<f64> = normalized
        .iter()
        .map(|r| r.iter().sum::<f64>() / r.len() as f64)
        .collect();
    let winner = super::select_top_n(&mean_normalized, 1)[0];
    Ok(CrossValidation {
        env_ids: env_ids.to_vec(),
        scores,
        normalized,
        mean_normalized,
        winner,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{a2_winner, a2_winner_v};
    use std::convert::Infallible;

    #[test]
    fn single_candidate_wins_with_one() {
        let envs = vec!["a".to_string(), "b".to_string()];
        let cv = cross_validate(&[a2_winner()], &envs, &[1, 2], |_, _, s| {
            Ok::<_, Infallible>(s as f64)
        })
        .unwrap();
        assert_eq!(cv.winner, 0);
        assert_eq!(cv.mean_normalized, vec![1.0]);
    }

    #[test]
    fn dominating_candidate_wins() {
        let envs: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let cands = vec![
            a2_winner(),
            a2_winner_v(),
            a2_winner(),
            a2_winner_v(),
            a2_winner(),
        ];
        let mut calls = 0;
        let cv = cross_validate(&cands, &envs, &[0], |_, env, _| {
            calls += 1;
            let base = (calls - 1) / 3;
            Ok::<_, Infallible>(if base == 3 {
                100.0
            } else {
                env.len() as f64 + base as f64
            })
        })
        .unwrap();
        assert_eq!(cv.winner, 3);
        assert_eq!(cv.scores.iter().map(Vec::len).sum::<usize>(), 15);
    }
}
