//! Trained parameters as JSON: named shapes with flat row-major arrays.

use std::path::Path;

use lrmf_core::autodiff::Tensor;
use lrmf_core::densities::{DensityParams, Family, FitReport};
use lrmf_core::flows::{FlowParams, FlowSpec};
use lrmf_core::lrmf::{Convergence, LossBreakdown, LrmfState};
use lrmf_core::metrics::MmdState;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{FormatError, Result};
use crate::fsutil::write_atomic;

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedArray {
    fn check(&self) -> Result<()> {
        if self.shape.iter().product::<usize>() != self.data.len() {
            return Err(FormatError::Shape {
                name: self.name.clone(),
                shape: self.shape.clone(),
                actual: self.data.len(),
            });
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(FormatError::Checkpoint(format!("tensor `{}` holds a non-finite value", self.name)));
        }
        Ok(())
    }
}

fn pack(named: Vec<(String, Tensor)>) -> Vec<NamedArray> {
    named
        .into_iter()
        .map(|(name, t)| NamedArray {
            name,
            shape: t.shape().to_vec(),
            data: t.into_data(),
        })
        .collect()
}

fn unpack(arrays: &[NamedArray]) -> Result<Vec<(String, Tensor)>> {
    arrays
        .iter()
        .map(|a| {
            a.check()?;
            let t = Tensor::new(a.shape.clone(), a.data.clone()).map_err(lrmf_core::Error::from)?;
            Ok((a.name.clone(), t))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Density,
    Lrmf,
    Mmd,
}

/// Outcome figures recorded next to the parameters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSummary {
    pub iters: usize,
    pub final_loss: Option<LossBreakdown>,
    pub converged: Option<Convergence>,
    pub grad_converged: Option<bool>,
    pub avg_loglik: Option<f64>,
    pub final_mmd2: Option<f64>,
    pub bandwidth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u64,
    pub kind: CheckpointKind,
    pub dim: usize,
    /// Family tag, present for density and lrmf checkpoints.
    pub family: Option<String>,
    /// Flow tag, present for lrmf and mmd checkpoints.
    pub flow: Option<String>,
    pub family_spec: Option<Family>,
    pub flow_spec: Option<FlowSpec>,
    #[serde(default)]
    pub flow_params: Vec<NamedArray>,
    #[serde(default)]
    pub theta_s: Vec<NamedArray>,
    #[serde(default)]
    pub theta_a: Vec<NamedArray>,
    #[serde(default)]
    pub theta_b: Vec<NamedArray>,
    /// Parameters of a single fitted density.
    #[serde(default)]
    pub density: Vec<NamedArray>,
    pub c_ab: Option<f64>,
    pub seed: u64,
    pub config: RunConfig,
    pub summary: RunSummary,
}

impl Checkpoint {
    fn empty(kind: CheckpointKind, dim: usize, config: &RunConfig) -> Self {
        Checkpoint {
            schema_version: SCHEMA_VERSION,
            kind,
            dim,
            family: None,
            flow: None,
            family_spec: None,
            flow_spec: None,
            flow_params: Vec::new(),
            theta_s: Vec::new(),
            theta_a: Vec::new(),
            theta_b: Vec::new(),
            density: Vec::new(),
            c_ab: None,
            seed: config.seed,
            config: config.clone(),
            summary: RunSummary::default(),
        }
    }

    pub fn from_lrmf(state: &LrmfState, family: &Family, config: &RunConfig) -> Self {
        let spec = state.flow.spec();
        let mut ck = Self::empty(CheckpointKind::Lrmf, spec.dim(), config);
        ck.family = Some(family.tag().into());
        ck.flow = Some(spec.tag().into());
        ck.family_spec = Some(family.clone());
        ck.flow_spec = Some(spec);
        ck.flow_params = pack(state.flow.tensor_names().into_iter().zip(state.flow.raw()).collect());
        ck.theta_s = pack(state.theta_s.named_tensors());
        ck.theta_a = pack(state.private.theta_a.params.named_tensors());
        ck.theta_b = pack(state.private.theta_b.params.named_tensors());
        ck.c_ab = Some(state.c_ab());
        ck.summary = RunSummary {
            iters: state.iters,
            final_loss: Some(state.final_loss),
            converged: Some(state.converged),
            grad_converged: Some(state.grad_converged),
            ..Default::default()
        };
        ck
    }

    pub fn from_mmd(state: &MmdState, config: &RunConfig) -> Self {
        let spec = state.flow.spec();
        let mut ck = Self::empty(CheckpointKind::Mmd, spec.dim(), config);
        ck.flow = Some(spec.tag().into());
        ck.flow_spec = Some(spec);
        ck.flow_params = pack(state.flow.tensor_names().into_iter().zip(state.flow.raw()).collect());
        ck.summary = RunSummary {
            iters: state.iters,
            final_mmd2: Some(state.final_mmd2),
            bandwidth: Some(state.bandwidth),
            ..Default::default()
        };
        ck
    }

    pub fn from_density(report: &FitReport, family: &Family, dim: usize, config: &RunConfig) -> Self {
        let mut ck = Self::empty(CheckpointKind::Density, dim, config);
        ck.family = Some(family.tag().into());
        ck.family_spec = Some(family.clone());
        ck.density = pack(report.params.named_tensors());
        ck.summary = RunSummary {
            iters: report.iters,
            avg_loglik: Some(report.avg_loglik),
            grad_converged: Some(report.converged),
            ..Default::default()
        };
        ck
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(FormatError::Schema(self.schema_version));
        }
        if self.dim == 0 {
            return Err(FormatError::Checkpoint("dim must be positive".into()));
        }
        for a in [&self.flow_params, &self.theta_s, &self.theta_a, &self.theta_b, &self.density] {
            a.iter().try_for_each(NamedArray::check)?;
        }
        if let (Some(tag), Some(spec)) = (&self.family, &self.family_spec) {
            if tag != spec.tag() {
                return Err(FormatError::Checkpoint(format!("family `{tag}` disagrees with its spec")));
            }
        }
        if let (Some(tag), Some(spec)) = (&self.flow, &self.flow_spec) {
            if tag != spec.tag() || spec.dim() != self.dim {
                return Err(FormatError::Checkpoint(format!("flow `{tag}` disagrees with its spec")));
            }
        }
        let needs_flow = matches!(self.kind, CheckpointKind::Lrmf | CheckpointKind::Mmd);
        let needs_family = matches!(self.kind, CheckpointKind::Lrmf | CheckpointKind::Density);
        if needs_flow && self.flow_spec.is_none() {
            return Err(FormatError::Checkpoint("missing flow_spec".into()));
        }
        if needs_family && self.family_spec.is_none() {
            return Err(FormatError::Checkpoint("missing family_spec".into()));
        }
        if self.kind == CheckpointKind::Lrmf && self.c_ab.is_none() {
            return Err(FormatError::Checkpoint("missing c_ab".into()));
        }
        Ok(())
    }

    pub fn flow_params(&self) -> Result<FlowParams> {
        let spec = self
            .flow_spec
            .as_ref()
            .ok_or_else(|| FormatError::Checkpoint("checkpoint holds no flow".into()))?;
        Ok(FlowParams::from_named(spec, &unpack(&self.flow_params)?)?)
    }

    fn density_from(&self, arrays: &[NamedArray]) -> Result<DensityParams> {
        let family = self
            .family_spec
            .as_ref()
            .ok_or_else(|| FormatError::Checkpoint("checkpoint holds no density family".into()))?;
        Ok(DensityParams::from_named(family, self.dim, &unpack(arrays)?)?)
    }

    pub fn theta_s(&self) -> Result<DensityParams> {
        self.density_from(&self.theta_s)
    }

    pub fn theta_a(&self) -> Result<DensityParams> {
        self.density_from(&self.theta_a)
    }

    pub fn theta_b(&self) -> Result<DensityParams> {
        self.density_from(&self.theta_b)
    }

    pub fn density(&self) -> Result<DensityParams> {
        self.density_from(&self.density)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("schema_version").and_then(serde_json::Value::as_u64) {
            Some(SCHEMA_VERSION) => {}
            Some(v) => return Err(FormatError::Schema(v)),
            None => return Err(FormatError::Checkpoint("missing schema_version".into())),
        }
        let ck: Checkpoint = serde_json::from_value(value)?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(write_atomic(path, self.to_json()?.as_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
