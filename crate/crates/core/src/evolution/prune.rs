use std::fmt::Write as _;

use super::{aulc, Evaluator};
use crate::dsl::{ElementRef, LossCandidate, Measure, OperatorSpec};
use crate::seed::{derive_seed, Purpose};

/// `{s0, a0} -> {s1}` under the given operator.
pub fn forward_dynamics_input(operator: OperatorSpec) -> LossCandidate {
    LossCandidate::from_elements(
        1,
        &[ElementRef::state(0), ElementRef::action(0)],
        &[ElementRef::state(1)],
        operator,
    )
    .expect("forward dynamics fits horizon 1")
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorScore {
    pub operator: OperatorSpec,
    pub mean: f64,
    pub std: f64,
    pub scores: Vec<f64>,
}

/// Operators ranked by mean score, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneReport {
    pub ranking: Vec<OperatorScore>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Scores all ten operators on the forward-dynamics input with `trials`
/// runs each. Trial `t` uses the same seed for every operator, and equal
/// means keep the operators' canonical order.
pub fn prune_operators(evaluator: &dyn Evaluator, trials: usize, seed: u64) -> PruneReport {
    assert!(trials >= 1, "need at least one trial");
    let mut ranking: Vec<OperatorScore> = OperatorSpec::all()
        .into_iter()
        .map(|operator| {
            let c = forward_dynamics_input(operator);
            let scores: Vec<f64> = (0..trials as u64)
                .map(|t| {
                    let s = derive_seed(seed, 0, t, Purpose::Prune);
                    evaluator
                        .evaluate(&c, s)
                        .ok()
                        .and_then(|curve| aulc(&curve).ok())
                        .unwrap_or(f64::NEG_INFINITY)
                })
                .collect();
            let (mean, std) = mean_std(&scores);
            OperatorScore {
                operator,
                mean,
                std,
                scores,
            }
        })
        .collect();
    ranking.sort_by(|a, b| b.mean.total_cmp(&a.mean));
    PruneReport { ranking }
}

impl PruneReport {
    pub fn best(&self) -> OperatorSpec {
        self.ranking[0].operator
    }

    /// Two rows (with and without negatives) by five measures of
    /// `mean ± std`, both divided by the best mean.
    pub fn table(&self) -> String {
        let best = self.ranking[0].mean;
        let scale = if best.is_finite() && best != 0.0 {
            best.abs()
        } else {
            1.0
        };
        let mut out = String::new();
        let _ = write!(out, "{:<22}", "operator");
        for m in Measure::ALL {
            let _ = write!(out, " | {:>17}", m.name());
        }
        out.push('\n');
        for (label, negatives) in [
            ("w/ negative samples", true),
            ("w/o negative samples", false),
        ] {
            let _ = write!(out, "{label:<22}");
            for m in Measure::ALL {
                let spec = OperatorSpec::new(m, negatives);
                let s = self
                    .ranking
                    .iter()
                    .find(|s| s.operator == spec)
                    .expect("all operators ranked");
                let cell = format!("{:.3} ± {:.3}", s.mean / scale, s.std / scale);
                let _ = write!(out, " | {cell:>17}");
            }
            out.push('\n');
        }
        out
    }
}
