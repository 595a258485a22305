//! Central finite-difference checks of tape gradients.

use super::{AutodiffError, ParamId, ParameterSet, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Perturbation applied to each scalar in both directions.
    pub step: f64,
    /// Lower bound on the denominator of the relative error, so that
    /// gradients that are zero on both sides compare as equal.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-6,
            floor: 1e-5,
        }
    }
}

/// Worst disagreement found by [`check_gradients`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Parameter and flat index of the worst entry.
    pub worst: Option<(ParamId, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    /// Number of scalars compared.
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

/// Compares the reverse-mode gradient of `loss` with central differences
/// for every scalar of the parameters in `ids`.
///
/// `loss` must be a deterministic function of the parameter values; it is
/// re-evaluated on a fresh tape twice per scalar.
pub fn check_gradients<E, F>(
    params: &ParameterSet,
    ids: &[ParamId],
    cfg: GradCheckConfig,
    mut loss: F,
) -> Result<GradCheck, E>
where
    E: From<AutodiffError>,
    F: FnMut(&mut Tape, &ParameterSet) -> Result<Var, E>,
{
    let mut tape = Tape::new();
    let out = loss(&mut tape, params)?;
    let grads = tape.backward(out, params)?;

    let mut eval = |p: &ParameterSet| -> Result<f64, E> {
        let mut tape = Tape::new();
        let v = loss(&mut tape, p)?;
        Ok(tape.item(v))
    };
    let mut work = params.clone();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for &id in ids {
        for k in 0..params.get(id).len() {
            let x = params.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = x + cfg.step;
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[k] = x - cfg.step;
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[k] = x;
            let numeric = (up - down) / (2.0 * cfg.step);
            let analytic = grads.get(id).data()[k];
            let err = relative_error(analytic, numeric, cfg.floor);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((id, k));
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
