//! The log-likelihood ratio distance and the flow-training objective built on it.
//!
//! All likelihood quantities are averages over samples (nats per sample),
//! so the constant, the loss and the distance are directly comparable
//! across dataset sizes.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{global_norm, AdamConfig, AdamState, Tape, Tensor};
use crate::config::TrainConfig;
use crate::data::{BatchSampler, Dataset};
use crate::densities::{cosine_lr, fit_density, fit_shared, DensityParams, Family, FitReport};
use crate::error::{Error, Result};
use crate::flows::{flow_forward, FlowParams, FlowSpec};
use crate::rng::{self, stream_rng};

/// Private optima of both datasets and the resulting constant.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivateFits {
    /// `avg log p(A; theta_A*) + avg log p(B; theta_B*)`.
    pub c_ab: f64,
    pub theta_a: FitReport,
    pub theta_b: FitReport,
}

fn same_dim(a: &Dataset, b: &Dataset) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(())
}

pub fn precompute_constant(a: &Dataset, b: &Dataset, family: &Family, cfg: &TrainConfig) -> Result<PrivateFits> {
    same_dim(a, b)?;
    let theta_a = fit_density(family, a, cfg)?;
    let theta_b = fit_density(family, b, cfg)?;
    let c_ab = theta_a.avg_loglik + theta_b.avg_loglik;
    if !c_ab.is_finite() {
        return Err(Error::NonFiniteTerm { term: "c_ab" });
    }
    Ok(PrivateFits { c_ab, theta_a, theta_b })
}

/// Terms of the loss, each a per-sample average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// `mean log |det dT/dx|` over `A`.
    pub logdet: f64,
    /// `mean log p(T(A); theta_S)`.
    pub loglik_ta: f64,
    /// `mean log p(B; theta_S)`.
    pub loglik_b: f64,
    pub c_ab: f64,
    pub total: f64,
}

fn finite_term(tape: &Tape, v: f64, term: &'static str) -> Result<f64> {
    if tape.check().is_err() || !v.is_finite() {
        return Err(Error::NonFiniteTerm { term });
    }
    Ok(v)
}

/// `-mean logdet T(A) - mean log p(T(A)) - mean log p(B) + c_AB`.
pub fn lrmf_loss(
    a: &Tensor,
    b: &Tensor,
    flow: &FlowParams,
    theta_s: &DensityParams,
    c_ab: f64,
) -> Result<LossBreakdown> {
    for x in [a, b] {
        if x.cols() != flow.dim() || x.cols() != theta_s.dim() {
            return Err(Error::DimensionMismatch {
                expected: flow.dim(),
                actual: x.cols(),
            });
        }
    }
    let tape = Tape::new();
    let (t, _) = flow.bind(&tape, false);
    let (density, _) = theta_s.bind(&tape, false);
    let (ta, ld) = t.forward(tape.constant(a.clone()));
    let logdet = finite_term(&tape, ld.mean().item(), "logdet")?;
    let loglik_ta = finite_term(&tape, density.log_prob(ta).mean().item(), "loglik_ta")?;
    let loglik_b = finite_term(&tape, density.log_prob(tape.constant(b.clone())).mean().item(), "loglik_b")?;
    if !c_ab.is_finite() {
        return Err(Error::NonFiniteTerm { term: "c_ab" });
    }
    Ok(LossBreakdown {
        logdet,
        loglik_ta,
        loglik_b,
        c_ab,
        total: -logdet - loglik_ta - loglik_b + c_ab,
    })
}

/// Loss value with gradients over `flow.raw()` and `theta_s.trainable()`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad_t: Vec<Tensor>,
    pub grad_s: Vec<Tensor>,
}

/// Same objective as [`lrmf_loss`], differentiated on a trainable binding.
pub fn lrmf_loss_grad(
    a: &Tensor,
    b: &Tensor,
    flow: &FlowParams,
    theta_s: &DensityParams,
    c_ab: f64,
) -> Result<LossGrad> {
    let tape = Tape::new();
    let (t, leaves_t) = flow.bind(&tape, true);
    let (density, leaves_s) = theta_s.bind(&tape, true);
    let (ta, ld) = t.forward(tape.constant(a.clone()));
    let loss = (ld.mean() + density.log_prob(ta).mean() + density.log_prob(tape.constant(b.clone())).mean())
        .neg()
        .offset(c_ab);
    let leaves: Vec<_> = leaves_t.iter().chain(&leaves_s).copied().collect();
    let mut grad_t = tape.grad(loss, &leaves)?;
    let grad_s = grad_t.split_off(leaves_t.len());
    Ok(LossGrad {
        loss: loss.item(),
        grad_t,
        grad_s,
    })
}

/// Starting point of the shared model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharedInit {
    /// Start from the private optimum of `B`.
    #[default]
    PrivateB,
    /// Start from a fixed family default: standard normal or identity flow.
    Cold,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LrmfConfig {
    /// Budget of the private density fits.
    pub fit: TrainConfig,
    /// Budget and thresholds of the alignment itself.
    pub train: TrainConfig,
    pub shared_init: SharedInit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub minibatch_loss: f64,
    /// Present at evaluation iterations and on the last row.
    pub full_loss: Option<f64>,
    pub grad_norm_t: f64,
    pub grad_norm_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convergence {
    Succeeded,
    Failed,
}

impl Convergence {
    pub fn succeeded(self) -> bool {
        self == Convergence::Succeeded
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrmfState {
    pub flow: FlowParams,
    pub theta_s: DensityParams,
    pub private: PrivateFits,
    pub trace: Vec<TraceRow>,
    pub final_loss: LossBreakdown,
    /// Number of optimizer steps taken.
    pub iters: usize,
    /// True when the gradient threshold stopped training.
    pub grad_converged: bool,
    pub converged: Convergence,
}

impl LrmfState {
    pub fn c_ab(&self) -> f64 {
        self.private.c_ab
    }
}

fn cold_init(family: &Family, dim: usize, seed: u64) -> Result<DensityParams> {
    use crate::densities::{FlowDensityParams, GaussianParams, Mixture2Params};
    Ok(match family {
        Family::Gaussian => {
            let mut l = alloc::vec![0.0; dim * dim];
            for i in 0..dim {
                l[i * dim + i] = 1.0;
            }
            DensityParams::Gaussian(GaussianParams::new(alloc::vec![0.0; dim], l)?)
        }
        Family::Mixture2 => DensityParams::Mixture2(Mixture2Params::new(-1.0, 1.0, 1.0)?),
        Family::Flow(spec) => DensityParams::Flow(FlowDensityParams {
            flow: spec
                .with_dim(dim)
                .init_identity(&mut stream_rng(seed, rng::STREAM_DENSITY_INIT))?,
        }),
    })
}

/// Mini-batch alignment of `A` onto `B`.
///
/// The private optima are fitted first. Then the flow and the shared model
/// take one simultaneous Adam step per iteration until the summed gradient
/// norm drops below `train.grad_tol` or `train.max_iters` steps were taken.
/// The run succeeds iff the final full-data loss is below `train.loss_tol`.
pub fn train_lrmf(
    a: &Dataset,
    b: &Dataset,
    family: &Family,
    flow_spec: &FlowSpec,
    cfg: &LrmfConfig,
) -> Result<LrmfState> {
    same_dim(a, b)?;
    cfg.train.validate()?;
    if flow_spec.dim() != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: flow_spec.dim(),
        });
    }
    let private = precompute_constant(a, b, family, &cfg.fit)?;
    let c_ab = private.c_ab;
    let tc = &cfg.train;

    let mut flow = flow_spec.init_identity(&mut stream_rng(tc.seed, rng::STREAM_FLOW_INIT))?;
    let mut theta_s = match cfg.shared_init {
        SharedInit::PrivateB => private.theta_b.params.clone(),
        SharedInit::Cold => cold_init(family, a.dim(), tc.seed)?,
    };
    let mut raw_t = flow.raw();
    let mut raw_s = theta_s.trainable();
    let mut adam_t = AdamState::new(AdamConfig::new(tc.learning_rate), &raw_t);
    let mut adam_s = AdamState::new(AdamConfig::new(tc.learning_rate), &raw_s);
    let mut batch_a = BatchSampler::new(a.len(), stream_rng(tc.seed, rng::STREAM_BATCH_A));
    let mut batch_b = BatchSampler::new(b.len(), stream_rng(tc.seed, rng::STREAM_BATCH_B));
    let (full_a, full_b) = (a.to_tensor(), b.to_tensor());

    let mut trace = Vec::new();
    let mut grad_converged = false;
    let mut iters = 0;
    for iter in 0..=tc.max_iters {
        let xa = a.select(&batch_a.next_batch(tc.batch_size)).to_tensor();
        let xb = b.select(&batch_b.next_batch(tc.batch_size)).to_tensor();
        let LossGrad { loss, grad_t, grad_s } = lrmf_loss_grad(&xa, &xb, &flow, &theta_s, c_ab)?;
        let (g_t, g_s) = (&grad_t[..], &grad_s[..]);
        let (norm_t, norm_s) = (global_norm(g_t), global_norm(g_s));
        grad_converged = norm_t + norm_s < tc.grad_tol;
        let last = grad_converged || iter == tc.max_iters;
        let full_loss = if last || iter % tc.eval_every == 0 {
            Some(lrmf_loss(&full_a, &full_b, &flow, &theta_s, c_ab)?.total)
        } else {
            None
        };
        trace.push(TraceRow {
            iter,
            minibatch_loss: loss,
            full_loss,
            grad_norm_t: norm_t,
            grad_norm_s: norm_s,
        });
        if last {
            break;
        }
        let lr = cosine_lr(tc.learning_rate, iter, tc.max_iters);
        adam_t.config.learning_rate = lr;
        adam_s.config.learning_rate = lr;
        adam_t.step(&mut raw_t, g_t)?;
        adam_s.step(&mut raw_s, g_s)?;
        flow.set_raw(&raw_t)?;
        theta_s = theta_s.with_trainable(&raw_s)?;
        iters = iter + 1;
    }

    let final_loss = lrmf_loss(&full_a, &full_b, &flow, &theta_s, c_ab)?;
    let converged = if final_loss.total < tc.loss_tol {
        Convergence::Succeeded
    } else {
        Convergence::Failed
    };
    Ok(LrmfState {
        flow,
        theta_s,
        private,
        trace,
        final_loss,
        iters,
        grad_converged,
        converged,
    })
}

/// Private and shared fits behind one distance estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct LrdReport {
    pub value: f64,
    pub private: PrivateFits,
    pub shared: FitReport,
}

/// Private log-likelihood sum minus the shared one.
pub fn lrd_estimate(a: &Dataset, b: &Dataset, family: &Family, cfg: &TrainConfig) -> Result<LrdReport> {
    let private = precompute_constant(a, b, family, cfg)?;
    let shared = fit_shared(family, a, b, cfg, None)?;
    Ok(LrdReport {
        value: private.c_ab - shared.avg_loglik,
        private,
        shared,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundGap {
    /// Loss at `phi` minimized over the shared model.
    pub min_loss: f64,
    /// Distance estimate between `T(A)` and `B`.
    pub lrd: f64,
    pub gap: f64,
}

/// `min_theta L(A, B, phi, theta) - d(T(A), B)`.
pub fn bound_gap(a: &Dataset, b: &Dataset, flow: &FlowParams, family: &Family, cfg: &TrainConfig) -> Result<BoundGap> {
    same_dim(a, b)?;
    let (ta, logdet) = flow_forward(&a.to_tensor(), flow)?;
    let ta = Dataset::from_tensor(&ta)?;
    let mean_logdet = logdet.iter().sum::<f64>() / a.len() as f64;
    let private = precompute_constant(a, b, family, cfg)?;
    let lrd = lrd_estimate(&ta, b, family, cfg)?;
    let min_loss = -mean_logdet - lrd.shared.avg_loglik + private.c_ab;
    Ok(BoundGap {
        min_loss,
        lrd: lrd.value,
        gap: min_loss - lrd.value,
    })
}
