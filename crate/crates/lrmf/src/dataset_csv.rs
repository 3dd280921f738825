//! Samples as CSV: a header `x0,...,x{d-1}` with an optional trailing
//! `label` column, then one row per sample.

use std::fmt::Write as _;
use std::path::Path;

use lrmf_core::Dataset;

use crate::error::{FormatError, Result};
use crate::fmt_f64;
use crate::fsutil::write_atomic;

pub fn dataset_to_string(ds: &Dataset) -> String {
    let d = ds.dim();
    let mut out = String::new();
    let header: Vec<String> = (0..d).map(|k| format!("x{k}")).collect();
    out.push_str(&header.join(","));
    if ds.labels().is_some() {
        out.push_str(",label");
    }
    out.push('\n');
    for (i, row) in ds.rows().enumerate() {
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            out.push_str(&fmt_f64(*v));
        }
        if let Some(l) = ds.labels() {
            let _ = write!(out, ",{}", l[i]);
        }
        out.push('\n');
    }
    out
}

/// Returns the dimension and whether a label column is present.
fn check_header(rec: &csv::StringRecord) -> Result<(usize, bool)> {
    let cols: Vec<&str> = rec.iter().map(str::trim).collect();
    let labelled = cols.last() == Some(&"label");
    let d = cols.len() - usize::from(labelled);
    if d == 0 {
        return Err(FormatError::Header("no feature columns".into()));
    }
    for (k, c) in cols[..d].iter().enumerate() {
        if *c != format!("x{k}") {
            return Err(FormatError::Header(format!("column {k} is `{c}`, expected `x{k}`")));
        }
    }
    Ok((d, labelled))
}

pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| FormatError::Header(e.to_string()))?
        .clone();
    let (d, labelled) = check_header(&header)?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            FormatError::parse(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        for (k, field) in rec.iter().take(d).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| FormatError::parse(line, format!("column x{k}: `{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(FormatError::parse(line, format!("column x{k}: non-finite value")));
            }
            data.push(v);
        }
        if labelled {
            let field = &rec[d];
            let l: i64 = field
                .parse()
                .map_err(|_| FormatError::parse(line, format!("label `{field}` is not an integer")))?;
            labels.push(l);
        }
    }
    if data.is_empty() {
        return Err(FormatError::Empty);
    }
    let ds = Dataset::new(d, data)?;
    Ok(if labelled { ds.with_labels(labels)? } else { ds })
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    parse_dataset(&std::fs::read_to_string(path)?)
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    Ok(write_atomic(path, dataset_to_string(ds).as_bytes())?)
}
