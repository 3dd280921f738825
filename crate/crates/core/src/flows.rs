//! Invertible transforms with exact log-determinants.
//!
//! Two families are provided: an affine map with a triangular (or
//! triangular-factored positive definite) linear part, and a stack of
//! masked affine coupling blocks. Both evaluate forward and inverse passes
//! on a [`Tape`] so that every quantity is differentiable in the
//! parameters.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

/// Linear part of an affine flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AffineForm {
    /// `y = L x + b`, `L` lower triangular with positive diagonal.
    #[default]
    Triangular,
    /// `y = A^T A x + b`, `A` lower triangular with positive diagonal.
    PositiveDefinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingSpec {
    pub dim: usize,
    #[serde(default = "default_blocks")]
    pub blocks: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "default_s_max")]
    pub s_max: f64,
}

fn default_blocks() -> usize {
    4
}
fn default_hidden() -> usize {
    64
}
fn default_s_max() -> f64 {
    5.0
}

impl CouplingSpec {
    pub fn new(dim: usize) -> Self {
        CouplingSpec {
            dim,
            blocks: default_blocks(),
            hidden: default_hidden(),
            activation: Activation::default(),
            s_max: default_s_max(),
        }
    }

    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn with_blocks(mut self, blocks: usize) -> Self {
        self.blocks = blocks;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlowSpec {
    Affine {
        dim: usize,
        #[serde(default)]
        form: AffineForm,
    },
    Coupling(CouplingSpec),
}

impl FlowSpec {
    pub fn dim(&self) -> usize {
        match self {
            FlowSpec::Affine { dim, .. } => *dim,
            FlowSpec::Coupling(c) => c.dim,
        }
    }

    /// The same architecture in dimension `dim`.
    pub fn with_dim(&self, dim: usize) -> FlowSpec {
        match self {
            &FlowSpec::Affine { form, .. } => FlowSpec::Affine { dim, form },
            FlowSpec::Coupling(c) => FlowSpec::Coupling(CouplingSpec { dim, ..c.clone() }),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            FlowSpec::Affine { .. } => "affine",
            FlowSpec::Coupling(_) => "coupling",
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dim() == 0 {
            return Err(Error::InvalidConfig("flow dimension must be positive"));
        }
        if let FlowSpec::Coupling(c) = self {
            if c.blocks == 0 || c.hidden == 0 {
                return Err(Error::InvalidConfig("coupling flow needs blocks and hidden units"));
            }
            if !(c.s_max > 0.0) {
                return Err(Error::InvalidConfig("s_max must be positive"));
            }
        }
        Ok(())
    }

    /// Parameters for which the flow is exactly the identity map.
    ///
    /// Coupling blocks get Glorot-uniform hidden layers drawn from `rng`
    /// and zeroed output layers.
    pub fn init_identity(&self, rng: &mut Rng) -> Result<FlowParams> {
        self.validate()?;
        Ok(match self {
            &FlowSpec::Affine { dim, form } => FlowParams::Affine(AffineFlowParams {
                dim,
                form,
                raw_linear: Tensor::zeros(&[dim, dim]),
                bias: Tensor::zeros(&[1, dim]),
            }),
            FlowSpec::Coupling(spec) => {
                let d = spec.dim;
                let blocks = (0..spec.blocks)
                    .map(|k| {
                        let mask = (0..d).map(|i| if (i + k) % 2 == 0 { 1.0 } else { 0.0 }).collect();
                        CouplingBlock {
                            mask,
                            s_net: Mlp::init(d, spec.hidden, rng),
                            t_net: Mlp::init(d, spec.hidden, rng),
                        }
                    })
                    .collect();
                FlowParams::Coupling(CouplingFlowParams {
                    spec: spec.clone(),
                    blocks,
                })
            }
        })
    }
}

/// Three-layer perceptron `d -> h -> h -> d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub weights: [Tensor; 3],
    pub biases: [Tensor; 3],
}

impl Mlp {
    fn init(d: usize, h: usize, rng: &mut Rng) -> Self {
        let mut glorot = |fan_in: usize, fan_out: usize| {
            let lim = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
            let data = (0..fan_in * fan_out).map(|_| rng.random_range(-lim..lim)).collect();
            Tensor::matrix(fan_in, fan_out, data)
        };
        Mlp {
            weights: [glorot(d, h), glorot(h, h), Tensor::zeros(&[h, d])],
            biases: [
                Tensor::zeros(&[1, h]),
                Tensor::zeros(&[1, h]),
                Tensor::zeros(&[1, d]),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingBlock {
    /// 1 marks conditioning coordinates, which pass through unchanged.
    pub mask: Vec<f64>,
    pub s_net: Mlp,
    pub t_net: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingFlowParams {
    pub spec: CouplingSpec,
    pub blocks: Vec<CouplingBlock>,
}

/// Affine flow. The diagonal of the stored factor is log-parameterized:
/// the effective factor has `exp(raw_ii)` on its diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineFlowParams {
    pub dim: usize,
    pub form: AffineForm,
    pub raw_linear: Tensor,
    pub bias: Tensor,
}

impl AffineFlowParams {
    /// Triangular flow `y = L x + b` from an explicit factor.
    pub fn from_linear(linear: &[f64], bias: &[f64]) -> Result<Self> {
        let d = bias.len();
        if linear.len() != d * d {
            return Err(Error::DimensionMismatch {
                expected: d * d,
                actual: linear.len(),
            });
        }
        let mut raw = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..i {
                raw[i * d + j] = linear[i * d + j];
            }
            let diag = linear[i * d + i];
            if !(diag > 0.0) {
                return Err(Error::Degenerate("affine factor needs a positive diagonal"));
            }
            raw[i * d + i] = libm::log(diag);
        }
        Ok(AffineFlowParams {
            dim: d,
            form: AffineForm::Triangular,
            raw_linear: Tensor::matrix(d, d, raw),
            bias: Tensor::matrix(1, d, bias.to_vec()),
        })
    }

    /// Lower-triangular factor with exponentiated diagonal.
    pub fn factor(&self) -> Vec<f64> {
        let d = self.dim;
        let r = self.raw_linear.data();
        let mut l = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..i {
                l[i * d + j] = r[i * d + j];
            }
            l[i * d + i] = libm::exp(r[i * d + i]);
        }
        l
    }

    /// The effective matrix applied to inputs.
    pub fn linear(&self) -> Vec<f64> {
        let l = self.factor();
        match self.form {
            AffineForm::Triangular => l,
            AffineForm::PositiveDefinite => {
                let d = self.dim;
                let mut m = vec![0.0; d * d];
                for i in 0..d {
                    for j in 0..d {
                        m[i * d + j] = (0..d).map(|k| l[k * d + i] * l[k * d + j]).sum();
                    }
                }
                m
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FlowParams {
    Affine(AffineFlowParams),
    Coupling(CouplingFlowParams),
}

/// Flow parameters recorded on a tape.
pub struct BoundFlow<'t> {
    tape: &'t Tape,
    kind: BoundKind<'t>,
}

enum BoundKind<'t> {
    Affine {
        form: AffineForm,
        factor: Var<'t>,
        bias: Var<'t>,
        logdet: Var<'t>,
    },
    Coupling {
        activation: Activation,
        blocks: Vec<BoundBlock<'t>>,
    },
}

struct BoundBlock<'t> {
    mask: Var<'t>,
    /// `s_max * (1 - mask)`.
    s_gate: Var<'t>,
    t_gate: Var<'t>,
    s_net: [Var<'t>; 6],
    t_net: [Var<'t>; 6],
}

impl FlowParams {
    pub fn dim(&self) -> usize {
        match self {
            FlowParams::Affine(a) => a.dim,
            FlowParams::Coupling(c) => c.spec.dim,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            FlowParams::Affine(_) => "affine",
            FlowParams::Coupling(_) => "coupling",
        }
    }

    pub fn spec(&self) -> FlowSpec {
        match self {
            FlowParams::Affine(a) => FlowSpec::Affine {
                dim: a.dim,
                form: a.form,
            },
            FlowParams::Coupling(c) => FlowSpec::Coupling(c.spec.clone()),
        }
    }

    /// Trainable tensors in a fixed order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        match self {
            FlowParams::Affine(a) => vec![&a.raw_linear, &a.bias],
            FlowParams::Coupling(c) => c
                .blocks
                .iter()
                .flat_map(|b| {
                    [&b.s_net, &b.t_net]
                        .into_iter()
                        .flat_map(|m| m.weights.iter().zip(&m.biases).flat_map(|(w, b)| [w, b]))
                })
                .collect(),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            FlowParams::Affine(a) => vec![&mut a.raw_linear, &mut a.bias],
            FlowParams::Coupling(c) => c
                .blocks
                .iter_mut()
                .flat_map(|b| {
                    [&mut b.s_net, &mut b.t_net].into_iter().flat_map(|m| {
                        m.weights
                            .iter_mut()
                            .zip(m.biases.iter_mut())
                            .flat_map(|(w, b)| [w, b])
                    })
                })
                .collect(),
        }
    }

    /// Names matching [`FlowParams::tensors`], used by checkpoints.
    pub fn tensor_names(&self) -> Vec<String> {
        match self {
            FlowParams::Affine(_) => vec!["raw_linear".into(), "bias".into()],
            FlowParams::Coupling(c) => (0..c.blocks.len())
                .flat_map(|k| {
                    ["s", "t"].into_iter().flat_map(move |net| {
                        (0..3).flat_map(move |layer| {
                            [
                                format!("block{k}.{net}.w{layer}"),
                                format!("block{k}.{net}.b{layer}"),
                            ]
                        })
                    })
                })
                .collect(),
        }
    }

    pub fn raw(&self) -> Vec<Tensor> {
        self.tensors().into_iter().cloned().collect()
    }

    /// Rebuilds a flow of shape `spec` from `(name, tensor)` pairs as
    /// produced by [`FlowParams::tensor_names`] and [`FlowParams::raw`].
    pub fn from_named(spec: &FlowSpec, named: &[(String, Tensor)]) -> Result<Self> {
        let mut flow = spec.init_identity(&mut crate::rng::stream_rng(0, 0))?;
        let raw = flow
            .tensor_names()
            .iter()
            .map(|n| {
                named
                    .iter()
                    .find(|(m, _)| m == n)
                    .map(|(_, t)| t.clone())
                    .ok_or(Error::FamilyMismatch)
            })
            .collect::<Result<Vec<_>>>()?;
        flow.set_raw(&raw)?;
        Ok(flow)
    }

    pub fn set_raw(&mut self, raw: &[Tensor]) -> Result<()> {
        let mut slots = self.tensors_mut();
        if slots.len() != raw.len() {
            return Err(Error::FamilyMismatch);
        }
        for (s, r) in slots.iter_mut().zip(raw) {
            if s.shape() != r.shape() {
                return Err(Error::FamilyMismatch);
            }
            **s = r.clone();
        }
        Ok(())
    }

    /// Records the parameters on `tape`. Returns the leaves (in
    /// [`FlowParams::tensors`] order) when `trainable`, otherwise an empty list.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> (BoundFlow<'t>, Vec<Var<'t>>) {
        let mut leaves = Vec::new();
        let mut reg = |t: &Tensor| {
            if trainable {
                let v = tape.leaf(t.clone());
                leaves.push(v);
                v
            } else {
                tape.constant(t.clone())
            }
        };
        let kind = match self {
            FlowParams::Affine(a) => {
                let raw = reg(&a.raw_linear);
                let bias = reg(&a.bias);
                let d = a.dim;
                let eye = tape.constant(Tensor::identity(d));
                let mut strict = Tensor::zeros(&[d, d]);
                for i in 0..d {
                    for j in 0..i {
                        strict.data_mut()[i * d + j] = 1.0;
                    }
                }
                let strict = tape.constant(strict);
                let diag_raw = raw * eye;
                let factor = raw * strict + diag_raw.exp() * eye;
                let mut logdet = diag_raw.sum();
                if a.form == AffineForm::PositiveDefinite {
                    logdet = logdet.scale(2.0);
                }
                BoundKind::Affine {
                    form: a.form,
                    factor,
                    bias,
                    logdet,
                }
            }
            FlowParams::Coupling(c) => {
                let s_max = c.spec.s_max;
                let blocks = c
                    .blocks
                    .iter()
                    .map(|b| {
                        let d = b.mask.len();
                        let inv: Vec<f64> = b.mask.iter().map(|m| 1.0 - m).collect();
                        let mut net = |m: &Mlp| {
                            [
                                reg(&m.weights[0]),
                                reg(&m.biases[0]),
                                reg(&m.weights[1]),
                                reg(&m.biases[1]),
                                reg(&m.weights[2]),
                                reg(&m.biases[2]),
                            ]
                        };
                        let s_net = net(&b.s_net);
                        let t_net = net(&b.t_net);
                        BoundBlock {
                            mask: tape.constant(Tensor::matrix(1, d, b.mask.clone())),
                            s_gate: tape.constant(Tensor::matrix(1, d, inv.iter().map(|v| v * s_max).collect())),
                            t_gate: tape.constant(Tensor::matrix(1, d, inv)),
                            s_net,
                            t_net,
                        }
                    })
                    .collect();
                BoundKind::Coupling {
                    activation: c.spec.activation,
                    blocks,
                }
            }
        };
        (BoundFlow { tape, kind }, leaves)
    }
}

fn mlp<'t>(x: Var<'t>, p: &[Var<'t>; 6], act: Activation) -> Var<'t> {
    let act = |v: Var<'t>| match act {
        Activation::Tanh => v.tanh(),
        Activation::Relu => v.relu(),
    };
    let h = act(x.matmul(p[0]) + p[1]);
    let h = act(h.matmul(p[2]) + p[3]);
    h.matmul(p[4]) + p[5]
}

impl<'t> BoundBlock<'t> {
    fn scale_shift(&self, x: Var<'t>, act: Activation) -> (Var<'t>, Var<'t>) {
        let cond = x * self.mask;
        let s = mlp(cond, &self.s_net, act).tanh() * self.s_gate;
        let t = mlp(cond, &self.t_net, act) * self.t_gate;
        (s, t)
    }
}

impl<'t> BoundFlow<'t> {
    /// `y = T(x)` and `log |det dT/dx|` per row, shape `(n, 1)`.
    pub fn forward(&self, x: Var<'t>) -> (Var<'t>, Var<'t>) {
        let n = x.dims().0;
        let zero = self.tape.constant(Tensor::zeros(&[n, 1]));
        match &self.kind {
            BoundKind::Affine {
                form,
                factor,
                bias,
                logdet,
            } => {
                let y = match form {
                    AffineForm::Triangular => x.matmul(factor.t()),
                    AffineForm::PositiveDefinite => x.matmul(factor.t().matmul(*factor)),
                };
                (y + *bias, zero + *logdet)
            }
            BoundKind::Coupling { activation, blocks } => {
                let mut y = x;
                let mut ld = zero;
                for b in blocks {
                    let (s, t) = b.scale_shift(y, *activation);
                    y = y * s.exp() + t;
                    ld = ld + s.row_sums();
                }
                (y, ld)
            }
        }
    }

    /// `x = T^{-1}(y)` and `log |det dT^{-1}/dy|` per row.
    pub fn inverse(&self, y: Var<'t>) -> (Var<'t>, Var<'t>) {
        let n = y.dims().0;
        let zero = self.tape.constant(Tensor::zeros(&[n, 1]));
        match &self.kind {
            BoundKind::Affine {
                form,
                factor,
                bias,
                logdet,
            } => {
                let r = y - *bias;
                let x = match form {
                    AffineForm::Triangular => factor.tri_solve(r, false),
                    AffineForm::PositiveDefinite => factor.tri_solve(factor.tri_solve(r, true), false),
                };
                (x, zero - *logdet)
            }
            BoundKind::Coupling { activation, blocks } => {
                let mut x = y;
                let mut ld = zero;
                for b in blocks.iter().rev() {
                    let (s, t) = b.scale_shift(x, *activation);
                    x = (x - t) * s.neg().exp();
                    ld = ld - s.row_sums();
                }
                (x, ld)
            }
        }
    }
}

fn check_dim(x: &Tensor, flow: &FlowParams) -> Result<()> {
    if x.cols() != flow.dim() {
        return Err(Error::DimensionMismatch {
            expected: flow.dim(),
            actual: x.cols(),
        });
    }
    Ok(())
}

fn column(t: &Tensor) -> Vec<f64> {
    t.data().to_vec()
}

/// `T(x)` with per-row log-determinants.
pub fn flow_forward(x: &Tensor, flow: &FlowParams) -> Result<(Tensor, Vec<f64>)> {
    check_dim(x, flow)?;
    let tape = Tape::new();
    let (bound, _) = flow.bind(&tape, false);
    let (y, ld) = bound.forward(tape.constant(x.clone()));
    tape.check()?;
    Ok((y.value(), ld.with_value(column)))
}

/// `T^{-1}(y)` with per-row log-determinants of the inverse map.
pub fn flow_inverse_with_logdet(y: &Tensor, flow: &FlowParams) -> Result<(Tensor, Vec<f64>)> {
    check_dim(y, flow)?;
    let tape = Tape::new();
    let (bound, _) = flow.bind(&tape, false);
    let (x, ld) = bound.inverse(tape.constant(y.clone()));
    tape.check()?;
    Ok((x.value(), ld.with_value(column)))
}

pub fn flow_inverse(y: &Tensor, flow: &FlowParams) -> Result<Tensor> {
    flow_inverse_with_logdet(y, flow).map(|(x, _)| x)
}
