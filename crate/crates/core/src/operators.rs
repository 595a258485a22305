//! Loss operators comparing a prediction batch `y` with a target batch `ŷ`.
//!
//! Five measures, each with or without negatives:
//!
//! | measure    | without negatives          | with negatives                         |
//! |------------|----------------------------|----------------------------------------|
//! | `inner`    | `-mean φ(y_i, ŷ_i)`        | InfoNCE over the batch                 |
//! | `bilinear` | same, `φ = yᵀWŷ`           | InfoNCE, `φ = yᵀWŷ`                    |
//! | `cosine`   | same, cosine similarity    | InfoNCE, cosine similarity             |
//! | `mse`      | `mean_d (y - ŷ)²`          | `mean_d (y - ŷ)² - mean_d (y - ŷ_π)²`  |
//! | `nmse`     | MSE of unit-normalized rows| same with unit-normalized rows         |
//!
//! Every loss is the batch mean of a per-row value; per-row values are means
//! over dimensions. `π` pairs each row with a different target row.

use rand::Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Var};
use crate::dsl::{Measure, OperatorSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OperatorError {
    #[error("row {row} has zero norm")]
    ZeroNormVector { row: usize },
    #[error("contrastive loss needs at least 2 rows, got {size}")]
    BatchTooSmall { size: usize },
    #[error("operator needs negatives but none were supplied")]
    MissingNegatives,
    #[error("bilinear measure needs a W matrix")]
    MissingBilinear,
    #[error("{0} is not a similarity measure")]
    NotASimilarity(&'static str),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

type Result<T> = std::result::Result<T, OperatorError>;

/// Operator-specific inputs.
#[derive(Debug, Clone, Copy)]
pub struct OperatorParams {
    /// Learnable `d x d` matrix of the bilinear measure.
    pub bilinear: Option<Var>,
    /// Added inside row norms. Zero selects the strict mode, in which
    /// zero-norm rows are an error.
    pub norm_eps: f64,
}

impl OperatorParams {
    /// Strict standalone mode: no epsilon, zero-norm rows are rejected.
    pub fn strict() -> Self {
        Self {
            bilinear: None,
            norm_eps: 0.0,
        }
    }

    /// Training mode with `eps = 1e-8` inside norms.
    pub fn training() -> Self {
        Self {
            bilinear: None,
            norm_eps: 1e-8,
        }
    }

    pub fn with_bilinear(mut self, w: Var) -> Self {
        self.bilinear = Some(w);
        self
    }
}

impl Default for OperatorParams {
    fn default() -> Self {
        Self::strict()
    }
}

/// Predictions, targets and optional negatives, all `batch x d`.
#[derive(Debug, Clone, Copy)]
pub struct LossBatch {
    pub predictions: Var,
    pub targets: Var,
    pub negatives: Option<Var>,
}

impl LossBatch {
    pub fn new(predictions: Var, targets: Var) -> Self {
        Self {
            predictions,
            targets,
            negatives: None,
        }
    }

    pub fn with_negatives(mut self, negatives: Var) -> Self {
        self.negatives = Some(negatives);
        self
    }
}

/// A derangement of `0..n` (cyclic shift by a random nonzero offset).
pub fn derangement(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    if n < 2 {
        return (0..n).collect();
    }
    let shift = rng.random_range(1..n);
    (0..n).map(|i| (i + shift) % n).collect()
}

fn check_nonzero_rows(tape: &Tape, v: Var) -> Result<()> {
    let m = tape.value(v);
    for i in 0..m.rows() {
        if m.row(i).iter().all(|&x| x == 0.0) {
            return Err(OperatorError::ZeroNormVector { row: i });
        }
    }
    Ok(())
}

fn normalize_rows(tape: &mut Tape, v: Var, eps: f64) -> Result<Var> {
    if eps == 0.0 {
        check_nonzero_rows(tape, v)?;
    }
    let norms = tape.l2_norm_rows(v, eps);
    Ok(tape.div_col(v, norms)?)
}

fn bilinear(params: &OperatorParams) -> Result<Var> {
    params.bilinear.ok_or(OperatorError::MissingBilinear)
}

/// `φ(y, ŷ)` for two `1 x d` vectors.
pub fn similarity(
    tape: &mut Tape,
    measure: Measure,
    y: Var,
    y_hat: Var,
    params: &OperatorParams,
) -> Result<Var> {
    let phi = paired_similarity(tape, measure, y, y_hat, params)?;
    Ok(tape.sum(phi))
}

/// Row-wise `φ(y_i, ŷ_i)`, `batch x 1`.
fn paired_similarity(
    tape: &mut Tape,
    measure: Measure,
    y: Var,
    y_hat: Var,
    params: &OperatorParams,
) -> Result<Var> {
    let (left, right) = match measure {
        Measure::Inner => (y, y_hat),
        Measure::Bilinear => {
            let w = bilinear(params)?;
            (tape.matmul(y, w)?, y_hat)
        }
        Measure::Cosine => (
            normalize_rows(tape, y, params.norm_eps)?,
            normalize_rows(tape, y_hat, params.norm_eps)?,
        ),
        Measure::Mse | Measure::Nmse => return Err(OperatorError::NotASimilarity(measure.name())),
    };
    let prod = tape.mul(left, right)?;
    Ok(tape.sum_rows(prod))
}

/// `M[i][j] = φ(y_i, ŷ_j)`, `batch x batch`.
pub fn similarity_matrix(
    tape: &mut Tape,
    measure: Measure,
    y: Var,
    y_hat: Var,
    params: &OperatorParams,
) -> Result<Var> {
    let (left, right) = match measure {
        Measure::Inner => (y, y_hat),
        Measure::Bilinear => {
            let w = bilinear(params)?;
            (tape.matmul(y, w)?, y_hat)
        }
        Measure::Cosine => (
            normalize_rows(tape, y, params.norm_eps)?,
            normalize_rows(tape, y_hat, params.norm_eps)?,
        ),
        Measure::Mse | Measure::Nmse => return Err(OperatorError::NotASimilarity(measure.name())),
    };
    let right_t = tape.transpose(right);
    Ok(tape.matmul(left, right_t)?)
}

/// Squared-error loss, optionally on unit-normalized rows and optionally
/// subtracting the error against one negative per row.
pub fn mse_loss(
    tape: &mut Tape,
    batch: &LossBatch,
    normalized: bool,
    with_negatives: bool,
    params: &OperatorParams,
) -> Result<Var> {
    let prep = |tape: &mut Tape, v: Var| -> Result<Var> {
        if normalized {
            normalize_rows(tape, v, params.norm_eps)
        } else {
            Ok(v)
        }
    };
    let y = prep(tape, batch.predictions)?;
    let y_hat = prep(tape, batch.targets)?;
    let diff = tape.sub(y, y_hat)?;
    let sq = tape.square(diff);
    let mut per_row = tape.mean_rows(sq);
    if with_negatives {
        let neg = batch.negatives.ok_or(OperatorError::MissingNegatives)?;
        let neg = prep(tape, neg)?;
        let diff = tape.sub(y, neg)?;
        let sq = tape.square(diff);
        let neg_rows = tape.mean_rows(sq);
        per_row = tape.sub(per_row, neg_rows)?;
    }
    Ok(tape.mean(per_row))
}

/// InfoNCE: `mean_i -log softmax_j(φ(y_i, ŷ_j))[i]`, where every other
/// target row in the batch acts as a negative.
pub fn infonce_loss(
    tape: &mut Tape,
    measure: Measure,
    batch: &LossBatch,
    params: &OperatorParams,
) -> Result<Var> {
    let size = tape.shape(batch.predictions).0;
    if size < 2 {
        return Err(OperatorError::BatchTooSmall { size });
    }
    let logits = similarity_matrix(tape, measure, batch.predictions, batch.targets, params)?;
    let lse = tape.log_sum_exp_rows(logits);
    let positives = tape.diag(logits)?;
    let per_row = tape.sub(lse, positives)?;
    Ok(tape.mean(per_row))
}

/// Dispatches an [`OperatorSpec`] to its loss.
pub fn operator_loss(
    tape: &mut Tape,
    spec: OperatorSpec,
    batch: &LossBatch,
    params: &OperatorParams,
) -> Result<Var> {
    match (spec.measure, spec.negatives) {
        (Measure::Mse, neg) => mse_loss(tape, batch, false, neg, params),
        (Measure::Nmse, neg) => mse_loss(tape, batch, true, neg, params),
        (m, true) => infonce_loss(tape, m, batch, params),
        (m, false) => {
            let phi = paired_similarity(tape, m, batch.predictions, batch.targets, params)?;
            let mean = tape.mean(phi);
            Ok(tape.neg(mean))
        }
    }
}
