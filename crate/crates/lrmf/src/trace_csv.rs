//! Per-iteration training trace as CSV.

use std::path::Path;

use lrmf_core::lrmf::TraceRow;

use crate::error::{FormatError, Result};
use crate::fmt_f64;
use crate::fsutil::write_atomic;

pub const TRACE_HEADER: &str = "iter,minibatch_loss,full_loss,grad_norm_T,grad_norm_S";

pub fn trace_to_string(rows: &[TraceRow]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        let full = r.full_loss.map(fmt_f64).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.iter,
            fmt_f64(r.minibatch_loss),
            full,
            fmt_f64(r.grad_norm_t),
            fmt_f64(r.grad_norm_s)
        ));
    }
    out
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| FormatError::Header(e.to_string()))?;
    let got: Vec<&str> = header.iter().collect();
    if got.join(",") != TRACE_HEADER {
        return Err(FormatError::Header(format!("expected `{TRACE_HEADER}`")));
    }
    let mut rows: Vec<TraceRow> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| FormatError::parse(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |k: usize| -> Result<f64> {
            rec[k]
                .parse()
                .map_err(|_| FormatError::parse(line, format!("`{}` is not a number", &rec[k])))
        };
        let iter: usize = rec[0]
            .parse()
            .map_err(|_| FormatError::parse(line, format!("iter `{}` is not an integer", &rec[0])))?;
        if rows.last().is_some_and(|p| p.iter >= iter) {
            return Err(FormatError::parse(line, "iter must increase strictly"));
        }
        let full_loss = if rec[2].is_empty() { None } else { Some(num(2)?) };
        let (grad_norm_t, grad_norm_s) = (num(3)?, num(4)?);
        if !(grad_norm_t >= 0.0 && grad_norm_s >= 0.0) {
            return Err(FormatError::parse(line, "gradient norms must be non-negative"));
        }
        rows.push(TraceRow {
            iter,
            minibatch_loss: num(1)?,
            full_loss,
            grad_norm_t,
            grad_norm_s,
        });
    }
    Ok(rows)
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    parse_trace(&std::fs::read_to_string(path)?)
}

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    Ok(write_atomic(path, trace_to_string(rows).as_bytes())?)
}
