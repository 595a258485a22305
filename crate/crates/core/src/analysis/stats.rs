use statrs::distribution::{ContinuousCDF, StudentsT};

use super::AnalysisError;

/// Result of a two-sided Welch t-test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub dof: f64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Welch's unequal-variance t-test with Welch–Satterthwaite degrees of
/// freedom.
///
/// Both samples need at least two values. If both variances are zero the
/// test degenerates: equal means give `t = 0, p = 1`, different means give
/// `t = ±inf, p = 0`.
pub fn welch_t_test(xs: &[f64], ys: &[f64]) -> Result<TTest, AnalysisError> {
    if xs.len() < 2 || ys.len() < 2 {
        return Err(AnalysisError::DegenerateSample {
            left: xs.len(),
            right: ys.len(),
        });
    }
    let (mx, vx) = mean_var(xs);
    let (my, vy) = mean_var(ys);
    let (nx, ny) = (xs.len() as f64, ys.len() as f64);
    let (sx, sy) = (vx / nx, vy / ny);
    let se2 = sx + sy;
    if se2 == 0.0 {
        let dof = nx + ny - 2.0;
        return Ok(if mx == my {
            TTest {
                t: 0.0,
                p: 1.0,
                dof,
            }
        } else {
            TTest {
                t: (mx - my).signum() * f64::INFINITY,
                p: 0.0,
                dof,
            }
        });
    }
    let t = (mx - my) / se2.sqrt();
    let dof = se2 * se2 / (sx * sx / (nx - 1.0) + sy * sy / (ny - 1.0));
    let dist = StudentsT::new(0.0, 1.0, dof).expect("positive degrees of freedom");
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest { t, p, dof })
}

/// `"**"` below 0.01, `"*"` below 0.05, otherwise empty.
pub fn significance_marker(p: f64) -> &'static str {
    if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}
