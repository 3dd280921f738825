//! Run configuration read from JSON.

use std::path::Path;

use lrmf_core::config::TrainConfig;
use lrmf_core::densities::Family;
use lrmf_core::flows::{Activation, AffineForm, CouplingSpec, FlowSpec};
use lrmf_core::lrmf::{LrmfConfig, SharedInit};
use lrmf_core::metrics::{Bandwidth, MmdConfig};
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Gaussian,
    Mixture2,
    Flow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FlowKind {
    Affine,
    Coupling,
}

/// Alignment budget at the top level, an optional separate budget for the
/// density fits, and the architecture shared by every flow the run builds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub learning_rate: f64,
    pub grad_tol: f64,
    pub loss_tol: f64,
    pub batch_size: usize,
    pub max_iters: usize,
    pub seed: u64,
    pub eval_every: usize,
    /// Density fit budget; the alignment budget when absent.
    pub fit: Option<TrainConfig>,
    pub shared_init: SharedInit,
    pub hidden: usize,
    pub blocks: usize,
    pub activation: Activation,
    pub s_max: f64,
    pub affine_form: AffineForm,
    /// Fixed kernel bandwidth for MMD; median heuristic when absent.
    pub mmd_bandwidth: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let c = CouplingSpec::new(1);
        RunConfig {
            learning_rate: t.learning_rate,
            grad_tol: t.grad_tol,
            loss_tol: t.loss_tol,
            batch_size: t.batch_size,
            max_iters: t.max_iters,
            seed: t.seed,
            eval_every: t.eval_every,
            fit: None,
            shared_init: SharedInit::default(),
            hidden: c.hidden,
            blocks: c.blocks,
            activation: c.activation,
            s_max: c.s_max,
            affine_form: AffineForm::default(),
            mmd_bandwidth: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Defaults when `path` is `None`.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn validate(&self) -> Result<()> {
        self.train().validate()?;
        self.fit().validate()?;
        if self.hidden == 0 || self.blocks == 0 {
            return Err(lrmf_core::Error::InvalidConfig("hidden and blocks must be positive").into());
        }
        if !(self.s_max > 0.0) {
            return Err(lrmf_core::Error::InvalidConfig("s_max must be positive").into());
        }
        if let Some(h) = self.mmd_bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(lrmf_core::Error::InvalidConfig("bandwidth must be positive").into());
            }
        }
        Ok(())
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            grad_tol: self.grad_tol,
            loss_tol: self.loss_tol,
            batch_size: self.batch_size,
            max_iters: self.max_iters,
            seed: self.seed,
            eval_every: self.eval_every,
        }
    }

    pub fn fit(&self) -> TrainConfig {
        self.fit.clone().unwrap_or_else(|| self.train())
    }

    pub fn lrmf(&self) -> LrmfConfig {
        LrmfConfig {
            fit: self.fit(),
            train: self.train(),
            shared_init: self.shared_init,
        }
    }

    pub fn mmd(&self) -> MmdConfig {
        MmdConfig {
            bandwidth: self.mmd_bandwidth.map_or(Bandwidth::Median, Bandwidth::Fixed),
        }
    }

    pub fn coupling(&self, dim: usize) -> CouplingSpec {
        CouplingSpec {
            dim,
            blocks: self.blocks,
            hidden: self.hidden,
            activation: self.activation,
            s_max: self.s_max,
        }
    }

    pub fn flow_spec(&self, kind: FlowKind, dim: usize) -> FlowSpec {
        match kind {
            FlowKind::Affine => FlowSpec::Affine {
                dim,
                form: self.affine_form,
            },
            FlowKind::Coupling => FlowSpec::Coupling(self.coupling(dim)),
        }
    }

    /// Flow families use the coupling architecture.
    pub fn family(&self, kind: FamilyKind, dim: usize) -> Family {
        match kind {
            FamilyKind::Gaussian => Family::Gaussian,
            FamilyKind::Mixture2 => Family::Mixture2,
            FamilyKind::Flow => Family::Flow(FlowSpec::Coupling(self.coupling(dim))),
        }
    }
}
