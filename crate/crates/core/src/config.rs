use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimizer budget and stopping thresholds shared by every gradient fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Stop once the summed gradient norm drops below this.
    pub grad_tol: f64,
    /// A run succeeds iff its final full-data loss is below this (nats).
    pub loss_tol: f64,
    pub batch_size: usize,
    pub max_iters: usize,
    pub seed: u64,
    /// Full-data loss is evaluated every `eval_every` iterations.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-2,
            grad_tol: 1e-4,
            loss_tol: 0.05,
            batch_size: 256,
            max_iters: 2000,
            seed: 0,
            eval_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig("learning_rate must be positive"));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::InvalidConfig("grad_tol must be positive"));
        }
        if !(self.loss_tol > 0.0) {
            return Err(Error::InvalidConfig("loss_tol must be positive"));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig("batch_size must be at least 2"));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidConfig("eval_every must be at least 1"));
        }
        Ok(())
    }
}
