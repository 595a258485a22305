use std::fmt::Write as _;
use std::path::Path;

use super::{AnalysisError, AnalysisRecord, EffectReport, Histogram};

/// Six significant digits, `%g` style: fixed notation for moderate
/// magnitudes, scientific otherwise, trailing zeros trimmed.
pub fn format_sig6(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    if x == 0.0 {
        return "0".into();
    }
    // round first so the exponent reflects the rounded value (9.999996 -> 10)
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        trim_zeros(&s)
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

fn csv_err(path: &Path, e: impl ToString) -> AnalysisError {
    AnalysisError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, AnalysisError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| AnalysisError::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    csv::Writer::from_path(path).map_err(|e| csv_err(path, e))
}

const RECORD_HEADER: [&str; 4] = ["env", "stage", "candidate", "aulc"];

/// One row per record; candidates in their text form.
pub fn write_records_csv(records: &[AnalysisRecord], path: &Path) -> Result<(), AnalysisError> {
    let mut w = writer(path)?;
    w.write_record(RECORD_HEADER)
        .map_err(|e| csv_err(path, e))?;
    for r in records {
        w.write_record([
            r.env.clone(),
            r.stage.to_string(),
            r.candidate.to_string(),
            format_sig6(r.aulc),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| AnalysisError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Inverse of [`write_records_csv`] (scores at six significant digits).
pub fn read_records_csv(path: &Path) -> Result<Vec<AnalysisRecord>, AnalysisError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(RECORD_HEADER) {
        return Err(csv_err(path, format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for row in r.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let field = |i: usize| row.get(i).unwrap_or_default();
        out.push(AnalysisRecord {
            env: field(0).to_string(),
            stage: field(1).parse().map_err(|e| csv_err(path, e))?,
            candidate: field(2).parse().map_err(|e| csv_err(path, e))?,
            aulc: field(3).parse().map_err(|e| csv_err(path, e))?,
        });
    }
    Ok(out)
}

/// An effect measured on one environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectRow {
    pub env: String,
    pub effect: EffectReport,
}

pub fn write_effects_csv(rows: &[EffectRow], path: &Path) -> Result<(), AnalysisError> {
    let mut w = writer(path)?;
    w.write_record([
        "env",
        "effect",
        "n_with",
        "n_without",
        "n_failed",
        "mean_with",
        "mean_without",
        "difference",
        "t",
        "p",
        "marker",
    ])
    .map_err(|e| csv_err(path, e))?;
    for row in rows {
        let e = &row.effect;
        w.write_record([
            row.env.clone(),
            e.label.clone(),
            e.n_with.to_string(),
            e.n_without.to_string(),
            e.n_failed.to_string(),
            format_sig6(e.mean_with),
            format_sig6(e.mean_without),
            format_sig6(e.mean_difference),
            format_sig6(e.t),
            format_sig6(e.p),
            super::significance_marker(e.p).to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| AnalysisError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Long format: one row per (category, bin).
pub fn write_histogram_csv(h: &Histogram, path: &Path) -> Result<(), AnalysisError> {
    let mut w = writer(path)?;
    w.write_record(["category", "bin_low", "bin_high", "percent"])
        .map_err(|e| csv_err(path, e))?;
    for (name, pct) in &h.categories {
        for (i, p) in pct.iter().enumerate() {
            w.write_record([
                name.clone(),
                format_sig6(h.edges[i]),
                format_sig6(h.edges[i + 1]),
                format_sig6(*p),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| AnalysisError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Plain-text grid of environments by effects, cells like `+1.28**`.
/// `*` marks p < 0.05 and `**` p < 0.01.
pub fn effect_table(rows: &[EffectRow]) -> String {
    let mut labels: Vec<&str> = Vec::new();
    let mut envs: Vec<&str> = Vec::new();
    for r in rows {
        if !labels.contains(&r.effect.label.as_str()) {
            labels.push(&r.effect.label);
        }
        if !envs.contains(&r.env.as_str()) {
            envs.push(&r.env);
        }
    }
    let env_w = envs.iter().map(|e| e.len()).max().unwrap_or(0).max(3);
    let col_w: Vec<usize> = labels.iter().map(|l| l.len().max(10)).collect();
    let mut out = String::new();
    let _ = write!(out, "{:env_w$}", "");
    for (l, w) in labels.iter().zip(&col_w) {
        let _ = write!(out, " | {l:>w$}");
    }
    out.push('\n');
    for env in &envs {
        let _ = write!(out, "{env:env_w$}");
        for (l, w) in labels.iter().zip(&col_w) {
            let cell = rows
                .iter()
                .find(|r| r.env == *env && r.effect.label == *l)
                .map_or_else(|| "n/a".to_string(), |r| r.effect.cell());
            let _ = write!(out, " | {cell:>w$}");
        }
        out.push('\n');
    }
    out.push_str("*: p < 0.05, **: p < 0.01\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(format_sig6(0.0), "0");
        assert_eq!(format_sig6(1.0), "1");
        assert_eq!(format_sig6(123.456789), "123.457");
        assert_eq!(format_sig6(-0.000123456789), "-0.000123457");
        assert_eq!(format_sig6(9.9999996), "10");
        assert_eq!(format_sig6(1234567.0), "1.23457e6");
        assert_eq!(format_sig6(1.5e-7), "1.5e-7");
        assert_eq!(format_sig6(f64::NEG_INFINITY), "-inf");
    }
}
