//! File formats and the command-line driver for `lrmf-core`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset_csv;
pub mod error;
pub mod fsutil;
pub mod trace_csv;

pub use error::{FormatError, Result};

/// Shortest decimal form that parses back to the same bits.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-5..1e16).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}
