//! Trace CSV serialization.
//!
//! Files start with a `# schema=1` comment line followed by a header row.
//! Every float is written with 17 significant digits so reading a file back
//! reproduces the recorded values bit for bit.

use std::io::{self, BufRead, Read, Write};

use thiserror::Error;

use crate::dppd::{RunTrace, TraceKind};

pub const SCHEMA_VERSION: u32 = 1;

/// Name of the error column for the DPPD engine.
pub const DPPD_ERROR_COLUMN: &str = "run_eval_err";
/// Name of the error column for the saddle-point subgradient baseline.
pub const BASELINE_ERROR_COLUMN: &str = "ergodic_eval_err";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("missing schema line, expected `# schema={SCHEMA_VERSION}`")]
    MissingSchema,
    #[error("unsupported trace schema `{0}`")]
    Schema(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: cannot parse `{value}` as a number")]
    Number { row: usize, value: String },
    #[error("row {row} has {got} fields, expected {expected}")]
    Width { row: usize, expected: usize, got: usize },
}

/// Full-precision decimal rendering.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Column names for a trace of primal dimension `n`.
pub fn header(kind: TraceKind, n: usize) -> Vec<String> {
    let mut cols = vec!["k".to_string(), "alpha".to_string()];
    cols.extend((0..n).map(|i| format!("xbar_{i}")));
    cols.extend(
        ["cons_x", "cons_mu", "lagrangian"]
            .iter()
            .map(|s| s.to_string()),
    );
    cols.push(
        match kind {
            TraceKind::Dppd => DPPD_ERROR_COLUMN,
            TraceKind::Baseline => BASELINE_ERROR_COLUMN,
        }
        .to_string(),
    );
    cols.push("constr_viol".to_string());
    cols.push("metric".to_string());
    cols
}

pub fn write_trace<W: Write>(trace: &RunTrace, mut out: W) -> Result<(), TraceError> {
    writeln!(out, "# schema={SCHEMA_VERSION}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(trace.kind, trace.dim))?;
    for r in &trace.records {
        let mut row = vec![r.k.to_string(), fmt_f64(r.alpha)];
        row.extend(r.xbar.iter().map(|v| fmt_f64(*v)));
        for v in [r.cons_x, r.cons_mu, r.lagrangian, r.eval_err, r.constr_viol, r.metric] {
            row.push(fmt_f64(v));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// A trace read back from disk, column-addressable.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl TraceTable {
    pub fn column_index(&self, name: &str) -> Result<usize, TraceError> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| TraceError::MissingColumn(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>, TraceError> {
        let i = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }

    /// Row whose `k` column equals `k`.
    pub fn row_at(&self, k: usize) -> Option<&[f64]> {
        let i = self.column_index("k").ok()?;
        self.rows
            .iter()
            .find(|r| r[i] == k as f64)
            .map(|r| r.as_slice())
    }

    pub fn kind(&self) -> Option<TraceKind> {
        if self.columns.iter().any(|c| c == DPPD_ERROR_COLUMN) {
            Some(TraceKind::Dppd)
        } else if self.columns.iter().any(|c| c == BASELINE_ERROR_COLUMN) {
            Some(TraceKind::Baseline)
        } else {
            None
        }
    }
}

pub fn read_trace<R: Read>(input: R) -> Result<TraceTable, TraceError> {
    let mut input = io::BufReader::new(input);
    let mut first = String::new();
    input.read_line(&mut first)?;
    let schema = first
        .trim()
        .strip_prefix("# schema=")
        .ok_or(TraceError::MissingSchema)?;
    if schema != SCHEMA_VERSION.to_string() {
        return Err(TraceError::Schema(schema.to_string()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(input);
    let columns: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.len() != columns.len() {
            return Err(TraceError::Width {
                row,
                expected: columns.len(),
                got: rec.len(),
            });
        }
        let vals = rec
            .iter()
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| TraceError::Number {
                    row,
                    value: s.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(vals);
    }
    Ok(TraceTable { columns, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formatting_round_trips() {
        for v in [0.1, 1.0 / 3.0, -5.3111e-300, 1e308, f64::MIN_POSITIVE, 0.0, -0.0] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
        assert!(fmt_f64(f64::NAN).parse::<f64>().unwrap().is_nan());
        assert_eq!(fmt_f64(f64::INFINITY).parse::<f64>().unwrap(), f64::INFINITY);
    }

    #[test]
    fn reader_rejects_bad_input() {
        assert!(matches!(read_trace("k,alpha\n1,2\n".as_bytes()), Err(TraceError::MissingSchema)));
        assert!(matches!(read_trace("# schema=9\nk\n".as_bytes()), Err(TraceError::Schema(_))));
        assert!(matches!(
            read_trace("# schema=1\nk,alpha\n1,x\n".as_bytes()),
            Err(TraceError::Number { row: 0, .. })
        ));
        assert!(matches!(
            read_trace("# schema=1\nk,alpha\n1\n".as_bytes()),
            Err(TraceError::Width { .. })
        ));
    }
}
