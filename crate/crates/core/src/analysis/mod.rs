//! Which loss structures go with higher scores: pattern and cardinality
//! effects tested with Welch's t-test, histograms, and CSV export.
//!
//! Failed runs (non-finite scores) never enter a test; they are counted in
//! [`EffectReport::n_failed`].

mod export;
mod stats;

pub use export::{
    effect_table, format_sig6, read_records_csv, write_effects_csv, write_histogram_csv,
    write_records_csv, EffectRow,
};
pub use stats::{significance_marker, welch_t_test, TTest};

use std::path::PathBuf;

use thiserror::Error;

use crate::dsl::{element_count, ElementKind, LossCandidate, Pattern};
use crate::evolution::CandidateRecord;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need at least two values per sample, got {left} and {right}")]
    DegenerateSample { left: usize, right: usize },
    #[error("no records {0}")]
    EmptyCategory(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
}

/// One evaluated candidate as seen by the analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisRecord {
    pub candidate: LossCandidate,
    pub aulc: f64,
    pub env: String,
    pub stage: usize,
}

impl AnalysisRecord {
    pub fn from_search(record: &CandidateRecord, env: &str) -> Self {
        Self {
            candidate: record.candidate.clone(),
            aulc: record.aulc,
            env: env.to_string(),
            stage: record.stage,
        }
    }
}

/// Difference in mean score between records with and without a property.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectReport {
    pub label: String,
    pub mean_with: f64,
    pub mean_without: f64,
    /// `mean_with - mean_without`.
    pub mean_difference: f64,
    pub t: f64,
    pub p: f64,
    pub n_with: usize,
    pub n_without: usize,
    /// Records left out because their score is not finite.
    pub n_failed: usize,
}

impl EffectReport {
    /// `+1.28**` style cell.
    pub fn cell(&self) -> String {
        format!(
            "{:+.2}{}",
            self.mean_difference,
            significance_marker(self.p)
        )
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Splits finite records by `holds` and tests the score difference.
pub fn split_effect(
    records: &[AnalysisRecord],
    label: &str,
    holds: impl Fn(&AnalysisRecord) -> bool,
) -> Result<EffectReport, AnalysisError> {
    let mut with = Vec::new();
    let mut without = Vec::new();
    let mut n_failed = 0;
    for r in records {
        if !r.aulc.is_finite() {
            n_failed += 1;
        } else if holds(r) {
            with.push(r.aulc);
        } else {
            without.push(r.aulc);
        }
    }
    if with.is_empty() {
        return Err(AnalysisError::EmptyCategory(format!("with {label}")));
    }
    if without.is_empty() {
        return Err(AnalysisError::EmptyCategory(format!("without {label}")));
    }
    let test = welch_t_test(&with, &without)?;
    let (mean_with, mean_without) = (mean(&with), mean(&without));
    Ok(EffectReport {
        label: label.to_string(),
        mean_with,
        mean_without,
        mean_difference: mean_with - mean_without,
        t: test.t,
        p: test.p,
        n_with: with.len(),
        n_without: without.len(),
        n_failed,
    })
}

/// Effect of containing `pattern`.
pub fn pattern_effect(
    records: &[AnalysisRecord],
    pattern: &Pattern,
) -> Result<EffectReport, AnalysisError> {
    split_effect(records, &pattern.name, |r| r.candidate.has_pattern(pattern))
}

/// Whether the target holds more elements of `kind` than the source.
pub fn target_heavier(candidate: &LossCandidate, kind: ElementKind) -> bool {
    element_count(candidate.target(), kind) > element_count(candidate.source(), kind)
}

/// Effect of `n_target > n_source` for elements of `kind`.
pub fn cardinality_effect(
    records: &[AnalysisRecord],
    kind: ElementKind,
) -> Result<EffectReport, AnalysisError> {
    let label = format!("{} n_target > n_source", kind.name());
    split_effect(records, &label, |r| target_heavier(&r.candidate, kind))
}

/// Per-category percentages over shared, equal-width bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `bins + 1` ascending edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub categories: Vec<(String, Vec<f64>)>,
}

/// Bins every category's finite scores over `[min(0, lowest), highest]`.
/// Each category's percentages sum to 100 (an empty category is all zero).
pub fn histogram(groups: &[(String, Vec<f64>)], bins: usize) -> Histogram {
    assert!(bins >= 1, "need at least one bin");
    let finite = || {
        groups
            .iter()
            .flat_map(|(_, v)| v.iter().copied())
            .filter(|x| x.is_finite())
    };
    let lo = finite().fold(0.0f64, f64::min);
    let hi = finite().fold(lo, f64::max);
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let categories = groups
        .iter()
        .map(|(name, values)| {
            let mut counts = vec![0usize; bins];
            let mut n = 0usize;
            for &x in values.iter().filter(|x| x.is_finite()) {
                let i = if width > 0.0 {
                    ((x - lo) / width) as usize
                } else {
                    0
                };
                counts[i.min(bins - 1)] += 1;
                n += 1;
            }
            let pct = counts
                .iter()
                .map(|&c| {
                    if n == 0 {
                        0.0
                    } else {
                        100.0 * c as f64 / n as f64
                    }
                })
                .collect();
            (name.clone(), pct)
        })
        .collect();
    Histogram { edges, categories }
}

/// With/without histogram for one pattern.
pub fn pattern_histogram(records: &[AnalysisRecord], pattern: &Pattern, bins: usize) -> Histogram {
    let (with, without): (Vec<&AnalysisRecord>, Vec<&AnalysisRecord>) = records
        .iter()
        .partition(|r| r.candidate.has_pattern(pattern));
    let scores = |rs: Vec<&AnalysisRecord>| rs.iter().map(|r| r.aulc).collect::<Vec<_>>();
    histogram(
        &[
            (format!("with {}", pattern.name), scores(with)),
            (format!("without {}", pattern.name), scores(without)),
        ],
        bins,
    )
}
