//! Side-by-side error comparison of two stored traces.

use thiserror::Error;

use crate::trace::{fmt_f64, TraceTable};

/// Checkpoints used when none are given.
pub const DEFAULT_CHECKPOINTS: [usize; 3] = [100, 1_000, 10_000];

#[derive(Debug, Error, PartialEq)]
pub enum CompareError {
    #[error("trace {trace} has no row at k = {k}")]
    Coverage { trace: char, k: usize },
    #[error("trace {trace}: {message}")]
    Table { trace: char, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub k: usize,
    pub err_a: f64,
    pub err_b: f64,
    /// `err_a / err_b`
    pub ratio: f64,
}

fn error_at(t: &TraceTable, tag: char, k: usize, f_star: f64) -> Result<f64, CompareError> {
    let col = t.column_index("metric").map_err(|e| CompareError::Table {
        trace: tag,
        message: e.to_string(),
    })?;
    let row = t.row_at(k).ok_or(CompareError::Coverage { trace: tag, k })?;
    Ok((row[col] - f_star).abs())
}

/// `|metric - f_star|` of both traces at each checkpoint.
pub fn compare(a: &TraceTable, b: &TraceTable, f_star: f64, checkpoints: &[usize]) -> Result<Vec<CompareRow>, CompareError> {
    checkpoints
        .iter()
        .map(|&k| {
            let err_a = error_at(a, 'A', k, f_star)?;
            let err_b = error_at(b, 'B', k, f_star)?;
            Ok(CompareRow {
                k,
                err_a,
                err_b,
                ratio: err_a / err_b,
            })
        })
        .collect()
}

pub fn format_rows(rows: &[CompareRow]) -> String {
    let mut out = String::from("k,err_a,err_b,ratio\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.k, fmt_f64(r.err_a), fmt_f64(r.err_b), fmt_f64(r.ratio)));
    }
    out
}
