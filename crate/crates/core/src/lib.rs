//! Log-likelihood ratio minimizing flows.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analytic;
pub mod autodiff;
pub mod config;
pub mod data;
pub mod densities;
pub mod error;
pub mod flows;
pub mod generators;
pub mod lrmf;
pub mod metrics;
pub mod rng;

pub use data::Dataset;
pub use error::{Error, Result};
