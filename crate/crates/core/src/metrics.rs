//! MMD alignment baseline and nearest-neighbour transfer accuracy.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{global_norm, AdamConfig, AdamState, Tape, Var};
use crate::config::TrainConfig;
use crate::densities::cosine_lr;
use crate::data::{BatchSampler, Dataset};
use crate::error::{Error, Result};
use crate::flows::{flow_forward, FlowParams, FlowSpec};
use crate::lrmf::TraceRow;
use crate::rng::{self, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    #[default]
    Median,
    Fixed(f64),
}

/// RBF kernel `exp(-|x - y|^2 / (2 h^2))`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MmdConfig {
    #[serde(default)]
    pub bandwidth: Bandwidth,
}

impl MmdConfig {
    pub fn resolve(&self, x: &Dataset, y: &Dataset) -> Result<f64> {
        match self.bandwidth {
            Bandwidth::Median => median_heuristic(x, y),
            Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => Ok(h),
            Bandwidth::Fixed(_) => Err(Error::InvalidConfig("bandwidth must be positive")),
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// Median pairwise Euclidean distance over the pooled sample.
pub fn median_heuristic(x: &Dataset, y: &Dataset) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            actual: y.dim(),
        });
    }
    let pooled: Vec<&[f64]> = x.rows().chain(y.rows()).collect();
    if pooled.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: pooled.len(),
        });
    }
    let mut d = Vec::with_capacity(pooled.len() * (pooled.len() - 1) / 2);
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            d.push(sq_dist(pooled[i], pooled[j]));
        }
    }
    let m = d.len();
    let (_, &mut hi, _) = d.select_nth_unstable_by(m / 2, f64::total_cmp);
    let med = if m % 2 == 1 {
        libm::sqrt(hi)
    } else {
        let lo = d[..m / 2].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (libm::sqrt(lo) + libm::sqrt(hi))
    };
    if !(med > 0.0) {
        return Err(Error::Degenerate("all pooled points coincide"));
    }
    Ok(med)
}

/// Unbiased squared MMD between the rows of `x` and `y` on a tape.
pub fn mmd2_on_tape<'t>(x: Var<'t>, y: Var<'t>, bandwidth: f64) -> Var<'t> {
    let (m, n) = (x.dims().0 as f64, y.dims().0 as f64);
    let gamma = -0.5 / (bandwidth * bandwidth);
    let kxx = x.sq_dist(x).scale(gamma).exp().sum().offset(-m);
    let kyy = y.sq_dist(y).scale(gamma).exp().sum().offset(-n);
    let kxy = x.sq_dist(y).scale(gamma).exp().sum();
    kxx.scale(1.0 / (m * (m - 1.0))) + kyy.scale(1.0 / (n * (n - 1.0))) - kxy.scale(2.0 / (m * n))
}

pub fn mmd2_unbiased(x: &Dataset, y: &Dataset, cfg: &MmdConfig) -> Result<f64> {
    let h = cfg.resolve(x, y)?;
    mmd2_with_bandwidth(x, y, h)
}

pub fn mmd2_with_bandwidth(x: &Dataset, y: &Dataset, bandwidth: f64) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            actual: y.dim(),
        });
    }
    for s in [x, y] {
        if s.len() < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: s.len() });
        }
    }
    if !(bandwidth > 0.0) {
        return Err(Error::InvalidConfig("bandwidth must be positive"));
    }
    let tape = Tape::new();
    let v = mmd2_on_tape(tape.constant(x.to_tensor()), tape.constant(y.to_tensor()), bandwidth);
    tape.check()?;
    Ok(v.item())
}

/// Accuracy of a 1-nearest-neighbour classifier fitted on `(b, yb)` and
/// evaluated on `(ta, ya)`. Ties go to the lowest index in `b`.
pub fn knn_transfer_accuracy(ta: &Dataset, ya: &[i64], b: &Dataset, yb: &[i64]) -> Result<f64> {
    if ta.is_empty() || b.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    if ta.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: b.dim(),
            actual: ta.dim(),
        });
    }
    if ya.len() != ta.len() || yb.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: ta.len(),
            actual: ya.len(),
        });
    }
    let mut hits = 0usize;
    for (row, &label) in ta.rows().zip(ya) {
        let mut best = (f64::INFINITY, 0usize);
        for (j, other) in b.rows().enumerate() {
            let d = sq_dist(row, other);
            if d < best.0 {
                best = (d, j);
            }
        }
        if yb[best.1] == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / ta.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmdState {
    pub flow: FlowParams,
    pub bandwidth: f64,
    pub trace: Vec<TraceRow>,
    /// Full-data MMD^2 after training.
    pub final_mmd2: f64,
    pub iters: usize,
}

/// Adam on mini-batch MMD^2 between `T(A)` and `B`, with the same seeds,
/// batching and stopping rule as the likelihood-ratio trainer. The
/// bandwidth is fixed once from the full data before training.
pub fn train_mmd_align(
    a: &Dataset,
    b: &Dataset,
    flow_spec: &FlowSpec,
    cfg: &TrainConfig,
    mmd: &MmdConfig,
) -> Result<MmdState> {
    if a.dim() != b.dim() || flow_spec.dim() != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    cfg.validate()?;
    let bandwidth = mmd.resolve(a, b)?;
    let mut flow = flow_spec.init_identity(&mut stream_rng(cfg.seed, rng::STREAM_FLOW_INIT))?;
    let mut raw = flow.raw();
    let mut adam = AdamState::new(AdamConfig::new(cfg.learning_rate), &raw);
    let mut batch_a = BatchSampler::new(a.len(), stream_rng(cfg.seed, rng::STREAM_BATCH_A));
    let mut batch_b = BatchSampler::new(b.len(), stream_rng(cfg.seed, rng::STREAM_BATCH_B));
    let full_a = a.to_tensor();
    let full_mmd = |flow: &FlowParams| -> Result<f64> {
        let (ta, _) = flow_forward(&full_a, flow)?;
        mmd2_with_bandwidth(&Dataset::from_tensor(&ta)?, b, bandwidth)
    };

    let mut trace = Vec::new();
    let mut iters = 0;
    for iter in 0..=cfg.max_iters {
        let xa = a.select(&batch_a.next_batch(cfg.batch_size)).to_tensor();
        let xb = b.select(&batch_b.next_batch(cfg.batch_size)).to_tensor();
        let tape = Tape::new();
        let (t, leaves) = flow.bind(&tape, true);
        let (ta, _) = t.forward(tape.constant(xa));
        let loss = mmd2_on_tape(ta, tape.constant(xb), bandwidth);
        let grads = tape.grad(loss, &leaves)?;
        let norm = global_norm(&grads);
        let last = norm < cfg.grad_tol || iter == cfg.max_iters;
        let full_loss = if last || iter % cfg.eval_every == 0 {
            Some(full_mmd(&flow)?)
        } else {
            None
        };
        trace.push(TraceRow {
            iter,
            minibatch_loss: loss.item(),
            full_loss,
            grad_norm_t: norm,
            grad_norm_s: 0.0,
        });
        if last {
            break;
        }
        adam.config.learning_rate = cosine_lr(cfg.learning_rate, iter, cfg.max_iters);
        adam.step(&mut raw, &grads)?;
        flow.set_raw(&raw)?;
        iters = iter + 1;
    }
    let final_mmd2 = trace.last().and_then(|r| r.full_loss).unwrap_or(f64::NAN);
    Ok(MmdState {
        flow,
        bandwidth,
        trace,
        final_mmd2,
        iters,
    })
}

/// Applies `flow` to `a` and returns the transformed rows with `a`'s labels.
pub fn transform(a: &Dataset, flow: &FlowParams) -> Result<Dataset> {
    let (ta, _) = flow_forward(&a.to_tensor(), flow)?;
    let out = Dataset::from_tensor(&ta)?;
    match a.labels() {
        Some(l) => out.with_labels(l.to_vec()),
        None => Ok(out),
    }
}
