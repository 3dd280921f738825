//! Density families with log-likelihood evaluation and maximum-likelihood fitting.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::autodiff::{global_norm, AdamConfig, AdamState, Tape, Tensor, Var};
use crate::config::TrainConfig;
use crate::data::{cholesky, BatchSampler, Dataset};
use crate::error::{Error, Result};
use crate::flows::{BoundFlow, FlowParams, FlowSpec};
use crate::rng::{self, stream_rng};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
pub const GAUSSIAN_DIAG_FLOOR: f64 = 1e-8;
pub const MIXTURE_VAR_FLOOR: f64 = 1e-10;
const MLE_RIDGE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    /// Equal-weight two-component univariate mixture with a shared variance.
    Mixture2,
    /// Flow pushforward of a standard normal.
    Flow(FlowSpec),
}

impl Family {
    pub fn tag(&self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Mixture2 => "mixture2",
            Family::Flow(_) => "flow",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub mean: Vec<f64>,
    /// Row-major lower-triangular factor of the covariance.
    pub scale_tril: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mixture2Params {
    pub mu1: f64,
    pub mu2: f64,
    pub var: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowDensityParams {
    pub flow: FlowParams,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DensityParams {
    Gaussian(GaussianParams),
    Mixture2(Mixture2Params),
    Flow(FlowDensityParams),
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

fn softplus_inv(y: f64) -> f64 {
    y + libm::log(-libm::expm1(-y))
}

impl GaussianParams {
    pub fn new(mean: Vec<f64>, scale_tril: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::Degenerate("gaussian dimension is zero"));
        }
        if scale_tril.len() != d * d {
            return Err(Error::DimensionMismatch {
                expected: d * d,
                actual: scale_tril.len(),
            });
        }
        if (0..d).any(|i| !(scale_tril[i * d + i] >= GAUSSIAN_DIAG_FLOOR)) {
            return Err(Error::Degenerate("scale_tril diagonal below floor"));
        }
        let mut scale_tril = scale_tril;
        for i in 0..d {
            for j in i + 1..d {
                scale_tril[i * d + j] = 0.0;
            }
        }
        Ok(GaussianParams { mean, scale_tril })
    }

    pub fn univariate(mu: f64, sigma: f64) -> Result<Self> {
        GaussianParams::new(vec![mu], vec![sigma])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `L L^T`.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.dim();
        let l = &self.scale_tril;
        let mut c = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                c[i * d + j] = (0..=i.min(j)).map(|k| l[i * d + k] * l[j * d + k]).sum();
            }
        }
        c
    }

    fn sum_log_diag(&self) -> f64 {
        let d = self.dim();
        (0..d).map(|i| libm::log(self.scale_tril[i * d + i])).sum()
    }
}

impl Mixture2Params {
    pub fn new(mu1: f64, mu2: f64, var: f64) -> Result<Self> {
        if !(var >= MIXTURE_VAR_FLOOR) || !var.is_finite() {
            return Err(Error::Degenerate("mixture variance below floor"));
        }
        Ok(Mixture2Params { mu1, mu2, var })
    }
}

/// Exact multivariate normal log-density.
pub fn gaussian_logpdf(x: &[f64], p: &GaussianParams) -> Result<f64> {
    let d = p.dim();
    if x.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: x.len(),
        });
    }
    let l = &p.scale_tril;
    let mut z = vec![0.0; d];
    for i in 0..d {
        let s: f64 = (0..i).map(|k| l[i * d + k] * z[k]).sum();
        z[i] = (x[i] - p.mean[i] - s) / l[i * d + i];
    }
    let quad: f64 = z.iter().map(|v| v * v).sum();
    Ok(-0.5 * quad - p.sum_log_diag() - 0.5 * d as f64 * LN_2PI)
}

/// `-1/2 log det(2 pi e Sigma)`.
pub fn gaussian_negentropy(p: &GaussianParams) -> f64 {
    -0.5 * p.dim() as f64 * (LN_2PI + 1.0) - p.sum_log_diag()
}

fn gaussian_from_moments(mean: Vec<f64>, cov: &[f64]) -> Result<GaussianParams> {
    let d = mean.len();
    let l = match cholesky(cov, d) {
        Some(l) => l,
        None => {
            let mut ridged = cov.to_vec();
            for i in 0..d {
                ridged[i * d + i] += MLE_RIDGE;
            }
            cholesky(&ridged, d).ok_or(Error::SingularCovariance)?
        }
    };
    if (0..d).any(|i| l[i * d + i] < GAUSSIAN_DIAG_FLOOR) {
        return Err(Error::SingularCovariance);
    }
    GaussianParams::new(mean, l)
}

/// Sample mean and biased sample covariance.
pub fn gaussian_mle(x: &Dataset) -> Result<GaussianParams> {
    let d = x.dim();
    if x.len() < d + 1 {
        return Err(Error::TooFewSamples {
            needed: d + 1,
            got: x.len(),
        });
    }
    gaussian_from_moments(x.mean(), &x.covariance())
}

/// Maximizer of `avg log p(A) + avg log p(B)` over Gaussians: the
/// moment match of the equal-weight mixture of the two samples.
pub fn gaussian_shared_mle(a: &Dataset, b: &Dataset) -> Result<GaussianParams> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let d = a.dim();
    for x in [a, b] {
        if x.len() < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: x.len() });
        }
    }
    let (ma, mb) = (a.mean(), b.mean());
    let (ca, cb) = (a.covariance(), b.covariance());
    let mean: Vec<f64> = ma.iter().zip(&mb).map(|(x, y)| 0.5 * (x + y)).collect();
    let mut cov = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            cov[i * d + j] =
                0.5 * (ca[i * d + j] + cb[i * d + j]) + 0.25 * (ma[i] - mb[i]) * (ma[j] - mb[j]);
        }
    }
    gaussian_from_moments(mean, &cov)
}

fn normal_logpdf(x: f64, mu: f64, var: f64) -> f64 {
    let z = x - mu;
    -0.5 * z * z / var - 0.5 * libm::log(var) - 0.5 * LN_2PI
}

/// Log-density of the equal mixture, via a max-shifted log-sum-exp.
pub fn mixture2_logpdf(x: f64, p: &Mixture2Params) -> f64 {
    let a = normal_logpdf(x, p.mu1, p.var);
    let b = normal_logpdf(x, p.mu2, p.var);
    let m = a.max(b);
    m + libm::log(libm::exp(a - m) + libm::exp(b - m)) - LN_2
}

/// Moment-based shared mixture: one component on each sample mean, the
/// variance the average of the two sample variances.
pub fn mixture2_moment_shared(a: &Dataset, b: &Dataset) -> Result<Mixture2Params> {
    for x in [a, b] {
        if x.dim() != 1 {
            return Err(Error::DimensionMismatch { expected: 1, actual: x.dim() });
        }
    }
    Mixture2Params::new(
        a.mean()[0],
        b.mean()[0],
        0.5 * (a.covariance()[0] + b.covariance()[0]),
    )
}

/// Per-row log-density of a flow density.
pub fn flow_logpdf(x: &Tensor, p: &FlowDensityParams) -> Result<Vec<f64>> {
    DensityParams::Flow(p.clone()).log_prob(x)
}

/// Density parameters recorded on a tape.
pub struct BoundDensity<'t> {
    tape: &'t Tape,
    kind: BoundKind<'t>,
}

enum BoundKind<'t> {
    Gaussian {
        mean: Var<'t>,
        tril: Var<'t>,
        sum_log_diag: Var<'t>,
    },
    Mixture2 {
        mus: Var<'t>,
        var: Var<'t>,
    },
    Flow(BoundFlow<'t>),
}

impl<'t> BoundDensity<'t> {
    /// Per-row log-density, shape `(n, 1)`.
    pub fn log_prob(&self, x: Var<'t>) -> Var<'t> {
        let (n, d) = x.dims();
        let norm = -0.5 * d as f64 * LN_2PI;
        match &self.kind {
            BoundKind::Gaussian {
                mean,
                tril,
                sum_log_diag,
            } => {
                let z = tril.tri_solve(x - *mean, false);
                z.square().row_sums().scale(-0.5).offset(norm) - *sum_log_diag
            }
            BoundKind::Mixture2 { mus, var } => {
                let spread = self.tape.constant(Tensor::full(&[1, 2], 1.0));
                let diff = x.matmul(spread) - *mus;
                let comp = (diff.square() / *var).scale(-0.5) - var.ln().scale(0.5);
                comp.row_logsumexp().offset(-0.5 * LN_2PI - LN_2)
            }
            BoundKind::Flow(flow) => {
                let _ = n;
                let (z, ld) = flow.inverse(x);
                z.square().row_sums().scale(-0.5).offset(norm) + ld
            }
        }
    }
}

impl DensityParams {
    pub fn family(&self) -> Family {
        match self {
            DensityParams::Gaussian(_) => Family::Gaussian,
            DensityParams::Mixture2(_) => Family::Mixture2,
            DensityParams::Flow(f) => Family::Flow(f.flow.spec()),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DensityParams::Gaussian(g) => g.dim(),
            DensityParams::Mixture2(_) => 1,
            DensityParams::Flow(f) => f.flow.dim(),
        }
    }

    /// Unconstrained tensors optimized by gradient fitting.
    pub fn trainable(&self) -> Vec<Tensor> {
        match self {
            DensityParams::Gaussian(g) => {
                let d = g.dim();
                let mut raw = g.scale_tril.clone();
                for i in 0..d {
                    raw[i * d + i] = softplus_inv(raw[i * d + i] - GAUSSIAN_DIAG_FLOOR);
                }
                vec![Tensor::matrix(1, d, g.mean.clone()), Tensor::matrix(d, d, raw)]
            }
            DensityParams::Mixture2(m) => vec![
                Tensor::row(vec![m.mu1, m.mu2]),
                Tensor::scalar(softplus_inv(m.var - MIXTURE_VAR_FLOOR)),
            ],
            DensityParams::Flow(f) => f.flow.raw(),
        }
    }

    /// Inverse of [`DensityParams::trainable`].
    pub fn with_trainable(&self, raw: &[Tensor]) -> Result<Self> {
        let shapes_match = {
            let cur = self.trainable();
            cur.len() == raw.len() && cur.iter().zip(raw).all(|(a, b)| a.shape() == b.shape())
        };
        if !shapes_match {
            return Err(Error::FamilyMismatch);
        }
        Ok(match self {
            DensityParams::Gaussian(g) => {
                let d = g.dim();
                let mut l = raw[1].data().to_vec();
                for i in 0..d {
                    l[i * d + i] = softplus(l[i * d + i]) + GAUSSIAN_DIAG_FLOOR;
                }
                DensityParams::Gaussian(GaussianParams::new(raw[0].data().to_vec(), l)?)
            }
            DensityParams::Mixture2(_) => {
                let mus = raw[0].data();
                DensityParams::Mixture2(Mixture2Params::new(
                    mus[0],
                    mus[1],
                    softplus(raw[1].item()) + MIXTURE_VAR_FLOOR,
                )?)
            }
            DensityParams::Flow(f) => {
                let mut flow = f.flow.clone();
                flow.set_raw(raw)?;
                DensityParams::Flow(FlowDensityParams { flow })
            }
        })
    }

    /// Named tensors holding the parameter values exactly.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        match self {
            DensityParams::Gaussian(g) => {
                let d = g.dim();
                vec![
                    ("mean".into(), Tensor::matrix(1, d, g.mean.clone())),
                    ("scale_tril".into(), Tensor::matrix(d, d, g.scale_tril.clone())),
                ]
            }
            DensityParams::Mixture2(m) => vec![
                ("mu1".into(), Tensor::scalar(m.mu1)),
                ("mu2".into(), Tensor::scalar(m.mu2)),
                ("var".into(), Tensor::scalar(m.var)),
            ],
            DensityParams::Flow(f) => f.flow.tensor_names().into_iter().zip(f.flow.raw()).collect(),
        }
    }

    /// Rebuilds parameters of `family` in dimension `dim` from
    /// [`DensityParams::named_tensors`] output.
    pub fn from_named(family: &Family, dim: usize, named: &[(String, Tensor)]) -> Result<Self> {
        let get = |name: &str| {
            named
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or(Error::FamilyMismatch)
        };
        match family {
            Family::Gaussian => {
                let (mean, tril) = (get("mean")?, get("scale_tril")?);
                if mean.numel() != dim || tril.numel() != dim * dim {
                    return Err(Error::FamilyMismatch);
                }
                Ok(DensityParams::Gaussian(GaussianParams::new(
                    mean.data().to_vec(),
                    tril.data().to_vec(),
                )?))
            }
            Family::Mixture2 => Ok(DensityParams::Mixture2(Mixture2Params::new(
                get("mu1")?.item(),
                get("mu2")?.item(),
                get("var")?.item(),
            )?)),
            Family::Flow(spec) => Ok(DensityParams::Flow(FlowDensityParams {
                flow: FlowParams::from_named(&spec.with_dim(dim), named)?,
            })),
        }
    }

    /// Records the density on `tape`. When `trainable`, the returned leaves
    /// correspond to [`DensityParams::trainable`]; otherwise values are
    /// bound exactly as stored and no leaves are returned.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> (BoundDensity<'t>, Vec<Var<'t>>) {
        let mut leaves = Vec::new();
        let kind = match self {
            DensityParams::Gaussian(g) => {
                let d = g.dim();
                if trainable {
                    let raw = self.trainable();
                    let mean = tape.leaf(raw[0].clone());
                    let rl = tape.leaf(raw[1].clone());
                    leaves.extend([mean, rl]);
                    let eye = tape.constant(Tensor::identity(d));
                    let mut strict = Tensor::zeros(&[d, d]);
                    for i in 0..d {
                        for j in 0..i {
                            strict.data_mut()[i * d + j] = 1.0;
                        }
                    }
                    let diag = rl.softplus().offset(GAUSSIAN_DIAG_FLOOR) * eye;
                    let tril = rl * tape.constant(strict) + diag;
                    let sum_log_diag = diag.col_sums().ln().sum();
                    BoundKind::Gaussian {
                        mean,
                        tril,
                        sum_log_diag,
                    }
                } else {
                    BoundKind::Gaussian {
                        mean: tape.constant(Tensor::matrix(1, d, g.mean.clone())),
                        tril: tape.constant(Tensor::matrix(d, d, g.scale_tril.clone())),
                        sum_log_diag: tape.scalar(g.sum_log_diag()),
                    }
                }
            }
            DensityParams::Mixture2(m) => {
                if trainable {
                    let raw = self.trainable();
                    let mus = tape.leaf(raw[0].clone());
                    let rv = tape.leaf(raw[1].clone());
                    leaves.extend([mus, rv]);
                    BoundKind::Mixture2 {
                        mus,
                        var: rv.softplus().offset(MIXTURE_VAR_FLOOR),
                    }
                } else {
                    BoundKind::Mixture2 {
                        mus: tape.constant(Tensor::row(vec![m.mu1, m.mu2])),
                        var: tape.scalar(m.var),
                    }
                }
            }
            DensityParams::Flow(f) => {
                let (flow, l) = f.flow.bind(tape, trainable);
                leaves = l;
                BoundKind::Flow(flow)
            }
        };
        (BoundDensity { tape, kind }, leaves)
    }

    fn check_dim(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.cols(),
            });
        }
        Ok(())
    }

    pub fn log_prob(&self, x: &Tensor) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let tape = Tape::new();
        let (bound, _) = self.bind(&tape, false);
        let lp = bound.log_prob(tape.constant(x.clone()));
        tape.check()?;
        Ok(lp.value().into_data())
    }

    /// Average log-likelihood of the rows of `x`, in nats.
    pub fn avg_log_likelihood(&self, x: &Tensor) -> Result<f64> {
        self.check_dim(x)?;
        let tape = Tape::new();
        let (bound, _) = self.bind(&tape, false);
        let v = bound.log_prob(tape.constant(x.clone())).mean();
        tape.check()?;
        Ok(v.item())
    }
}

/// Outcome of a maximum-likelihood fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub params: DensityParams,
    /// Sum over the fitted datasets of the average log-likelihood (nats).
    pub avg_loglik: f64,
    pub iters: usize,
    /// False when a gradient fit stopped at `max_iters`.
    pub converged: bool,
}

fn split_mixture_init(x: &Dataset) -> Result<Mixture2Params> {
    if x.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            actual: x.dim(),
        });
    }
    let mut v = x.data().to_vec();
    v.sort_by(f64::total_cmp);
    let h = v.len() / 2;
    let (lo, hi) = v.split_at(h.max(1));
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len().max(1) as f64;
    let var = |s: &[f64], m: f64| s.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / s.len().max(1) as f64;
    let (m1, m2) = (mean(lo), if hi.is_empty() { mean(lo) } else { mean(hi) });
    let pooled = 0.5 * (var(lo, m1) + var(hi, m2));
    let fallback = x.covariance()[0];
    let var0 = if pooled > 1e-6 { pooled } else { fallback.max(1e-6) };
    Mixture2Params::new(m1, m2, var0)
}

fn initial_params(family: &Family, x: &Dataset, seed: u64) -> Result<DensityParams> {
    Ok(match family {
        Family::Gaussian => DensityParams::Gaussian(gaussian_mle(x)?),
        Family::Mixture2 => DensityParams::Mixture2(split_mixture_init(x)?),
        Family::Flow(spec) => {
            let flow = spec
                .with_dim(x.dim())
                .init_identity(&mut stream_rng(seed, rng::STREAM_DENSITY_INIT))?;
            DensityParams::Flow(FlowDensityParams { flow })
        }
    })
}

/// Adam on `-sum_k mean log p(batch_k)`.
/// Cosine decay from `base` down to `base / 20` over `total` steps.
pub(crate) fn cosine_lr(base: f64, iter: usize, total: usize) -> f64 {
    let frac = iter as f64 / total.max(1) as f64;
    base * (0.05 + 0.95 * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * frac)))
}

fn gradient_fit(init: DensityParams, sets: &[Dataset], cfg: &TrainConfig) -> Result<(DensityParams, usize, bool)> {
    let mut samplers: Vec<BatchSampler> = sets
        .iter()
        .enumerate()
        .map(|(k, s)| BatchSampler::new(s.len(), stream_rng(cfg.seed, rng::STREAM_FIT_BATCH + k as u64)))
        .collect();
    let mut raw = init.trainable();
    let mut adam = AdamState::new(AdamConfig::new(cfg.learning_rate), &raw);
    let mut params = init;
    for iter in 0..cfg.max_iters {
        adam.config.learning_rate = cosine_lr(cfg.learning_rate, iter, cfg.max_iters);
        let tape = Tape::new();
        let (bound, leaves) = params.bind(&tape, true);
        let mut nll = tape.scalar(0.0);
        for (set, sampler) in sets.iter().zip(&mut samplers) {
            let batch = set.select(&sampler.next_batch(cfg.batch_size)).to_tensor();
            nll = nll - bound.log_prob(tape.constant(batch)).mean();
        }
        let grads = tape.grad(nll, &leaves)?;
        if global_norm(&grads) < cfg.grad_tol {
            return Ok((params, iter, true));
        }
        adam.step(&mut raw, &grads)?;
        params = params.with_trainable(&raw)?;
    }
    Ok((params, cfg.max_iters, false))
}

/// Maximum-likelihood fit of `family` to `x`.
///
/// Gaussians are fitted in closed form. Other families run Adam on
/// mini-batch negative log-likelihood over the rows of `x` in canonical
/// order, so the result does not depend on the input row order.
pub fn fit_density(family: &Family, x: &Dataset, cfg: &TrainConfig) -> Result<FitReport> {
    if x.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    cfg.validate()?;
    let full = x.to_tensor();
    if let Family::Gaussian = family {
        let params = DensityParams::Gaussian(gaussian_mle(x)?);
        let avg_loglik = params.avg_log_likelihood(&full)?;
        return Ok(FitReport {
            params,
            avg_loglik,
            iters: 0,
            converged: true,
        });
    }
    let init = initial_params(family, x, cfg.seed)?;
    let (params, iters, converged) = gradient_fit(init, &[x.canonical()], cfg)?;
    let avg_loglik = params.avg_log_likelihood(&full)?;
    Ok(FitReport {
        params,
        avg_loglik,
        iters,
        converged,
    })
}

/// Maximizes `avg log p(A) + avg log p(B)` over one shared parameter set.
///
/// Gaussians use the closed form; other families start from `init` (or
/// the family default built from the pooled sample) and run Adam.
pub fn fit_shared(
    family: &Family,
    a: &Dataset,
    b: &Dataset,
    cfg: &TrainConfig,
    init: Option<&DensityParams>,
) -> Result<FitReport> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    cfg.validate()?;
    let (ta, tb) = (a.to_tensor(), b.to_tensor());
    let (params, iters, converged) = match family {
        Family::Gaussian => (DensityParams::Gaussian(gaussian_shared_mle(a, b)?), 0, true),
        _ => {
            let init = match init {
                Some(p) => p.clone(),
                None => initial_params(family, &a.concat(b)?, cfg.seed)?,
            };
            gradient_fit(init, &[a.canonical(), b.canonical()], cfg)?
        }
    };
    let avg_loglik = params.avg_log_likelihood(&ta)? + params.avg_log_likelihood(&tb)?;
    Ok(FitReport {
        params,
        avg_loglik,
        iters,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::{AffineFlowParams, CouplingSpec, FlowParams};
    use crate::generators::gen_blobs;
    use core::f64::consts::PI;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn standard_normal_at_zero() {
        let p = GaussianParams::univariate(0.0, 1.0).unwrap();
        assert!(close(gaussian_logpdf(&[0.0], &p).unwrap(), -0.5 * libm::log(2.0 * PI), 1e-15));
    }

    #[test]
    fn logpdf_at_mean_is_log_normalizer() {
        let p = GaussianParams::new(vec![1.0, -2.0], vec![1.5, 0.0, 0.3, 0.7]).unwrap();
        let det: f64 = 1.5 * 1.5 * 0.7 * 0.7;
        let expect = -0.5 * libm::log(libm::pow(2.0 * PI, 2.0) * det);
        assert!(close(gaussian_logpdf(&[1.0, -2.0], &p).unwrap(), expect, 1e-13));
    }

    #[test]
    fn hand_evaluated_normal() {
        let p = GaussianParams::univariate(0.0, 2.0).unwrap();
        let expect = -LN_2 - 0.5 * libm::log(2.0 * PI) - 0.125;
        assert!(close(gaussian_logpdf(&[1.0], &p).unwrap(), expect, 1e-15));
        assert!(gaussian_logpdf(&[1.0, 2.0], &p).is_err());
    }

    #[test]
    fn mle_of_symmetric_pair() {
        let x = Dataset::from_rows(&[[-1.0], [1.0]]).unwrap();
        let p = gaussian_mle(&x).unwrap();
        assert_eq!(p.mean, vec![0.0]);
        assert_eq!(p.covariance(), vec![1.0]);
    }

    #[test]
    fn mle_blob_mean() {
        let (a, _) = gen_blobs(0, 50_000).unwrap();
        let p = gaussian_mle(&a).unwrap();
        assert!(close(p.mean[0], 1.0, 0.02) && close(p.mean[1], 1.0, 0.02));
    }

    #[test]
    fn loglik_at_mle_is_negentropy() {
        let (a, b) = gen_blobs(4, 500).unwrap();
        for x in [a, b] {
            let p = gaussian_mle(&x).unwrap();
            let avg = DensityParams::Gaussian(p.clone()).avg_log_likelihood(&x.to_tensor()).unwrap();
            assert!(close(avg, gaussian_negentropy(&p), 1e-10));
        }
    }

    #[test]
    fn ridge_rescues_rank_deficiency_once() {
        let x = Dataset::from_rows(&[[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]).unwrap();
        let p = gaussian_mle(&x).unwrap();
        assert!(p.scale_tril[3] < 1e-3);
        let bad = Dataset::from_rows(&[[1.0, 2.0], [2.0, f64::INFINITY], [3.0, 6.0]]).unwrap();
        assert_eq!(gaussian_mle(&bad), Err(Error::SingularCovariance));
        let few = Dataset::from_rows(&[[1.0, 2.0], [2.0, 4.0]]).unwrap();
        assert!(matches!(gaussian_mle(&few), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn negentropy_values() {
        let c = 0.5 * libm::log(2.0 * PI * core::f64::consts::E);
        let unit = GaussianParams::univariate(0.0, 1.0).unwrap();
        assert!(close(gaussian_negentropy(&unit), -c, 1e-15));
        let e = GaussianParams::univariate(0.0, core::f64::consts::E).unwrap();
        assert!(close(gaussian_negentropy(&e), -1.0 - c, 1e-15));
        let d = GaussianParams::new(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        assert!(close(gaussian_negentropy(&d), -LN_2 - 2.0 * c, 1e-14));
    }

    #[test]
    fn mixture_special_cases() {
        let g = GaussianParams::univariate(0.0, 1.5).unwrap();
        let m = Mixture2Params::new(0.0, 0.0, 2.25).unwrap();
        for x in [-3.0, 0.0, 0.4, 7.0] {
            assert!(close(mixture2_logpdf(x, &m), gaussian_logpdf(&[x], &g).unwrap(), 1e-14));
        }
        let sym = Mixture2Params::new(-1.3, 1.3, 0.8).unwrap();
        assert!(close(mixture2_logpdf(0.0, &sym), normal_logpdf(0.0, -1.3, 0.8), 1e-14));
        let m = Mixture2Params::new(0.0, 2.0, 1.0).unwrap();
        assert!(close(mixture2_logpdf(1.0, &m), normal_logpdf(1.0, 0.0, 1.0), 1e-15));
    }

    #[test]
    fn tape_matches_direct_evaluation() {
        let x = Tensor::matrix(3, 1, vec![-0.5, 0.2, 3.0]);
        let m = DensityParams::Mixture2(Mixture2Params::new(-1.0, 0.5, 0.7).unwrap());
        let lp = m.log_prob(&x).unwrap();
        let DensityParams::Mixture2(mp) = m else { unreachable!() };
        for (v, xi) in lp.iter().zip(x.data()) {
            assert!(close(*v, mixture2_logpdf(*xi, &mp), 1e-14));
        }
        let g = GaussianParams::new(vec![0.3, -1.0], vec![1.2, 0.0, -0.4, 0.9]).unwrap();
        let pts = Tensor::matrix(2, 2, vec![0.0, 0.0, 1.0, -3.0]);
        let lp = DensityParams::Gaussian(g.clone()).log_prob(&pts).unwrap();
        for (v, r) in lp.iter().zip(pts.data().chunks(2)) {
            assert!(close(*v, gaussian_logpdf(r, &g).unwrap(), 1e-14));
        }
    }

    #[test]
    fn trainable_round_trip() {
        let g = DensityParams::Gaussian(GaussianParams::new(vec![0.3, -1.0], vec![1.2, 0.0, -0.4, 0.9]).unwrap());
        let back = g.with_trainable(&g.trainable()).unwrap();
        let (DensityParams::Gaussian(a), DensityParams::Gaussian(b)) = (&g, &back) else { unreachable!() };
        for (x, y) in a.scale_tril.iter().zip(&b.scale_tril) {
            assert!(close(*x, *y, 1e-14));
        }
        let m = DensityParams::Mixture2(Mixture2Params::new(1.0, 2.0, 0.3).unwrap());
        let DensityParams::Mixture2(mb) = m.with_trainable(&m.trainable()).unwrap() else { unreachable!() };
        assert!(close(mb.var, 0.3, 1e-14));
    }

    #[test]
    fn trainable_binding_matches_constant_binding() {
        let g = DensityParams::Gaussian(GaussianParams::new(vec![0.3, -1.0], vec![1.2, 0.0, -0.4, 0.9]).unwrap());
        let x = Tensor::matrix(2, 2, vec![0.0, 0.0, 1.0, -3.0]);
        let tape = Tape::new();
        let (b, _) = g.bind(&tape, true);
        let lp = b.log_prob(tape.constant(x.clone())).value();
        let direct = g.log_prob(&x).unwrap();
        for (u, v) in lp.data().iter().zip(&direct) {
            assert!(close(*u, *v, 1e-12));
        }
    }

    #[test]
    fn identity_flow_density_is_standard_normal() {
        let spec = CouplingSpec::new(2).with_hidden(4);
        let flow = FlowSpec::Coupling(spec).init_identity(&mut stream_rng(0, 0)).unwrap();
        let x = Tensor::matrix(2, 2, vec![0.1, -0.3, 2.0, 1.0]);
        let lp = flow_logpdf(&x, &FlowDensityParams { flow }).unwrap();
        let unit = GaussianParams::new(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        for (v, r) in lp.iter().zip(x.data().chunks(2)) {
            assert!(close(*v, gaussian_logpdf(r, &unit).unwrap(), 1e-14));
        }
    }

    #[test]
    fn scaling_flow_change_of_variables() {
        let flow = FlowParams::Affine(AffineFlowParams::from_linear(&[2.0], &[0.0]).unwrap());
        let p = DensityParams::Flow(FlowDensityParams { flow });
        let y = 1.7;
        let lp = p.log_prob(&Tensor::matrix(1, 1, vec![y])).unwrap()[0];
        assert!(close(lp, normal_logpdf(y / 2.0, 0.0, 1.0) - LN_2, 1e-14));
    }

    #[test]
    fn named_round_trip_is_exact() {
        let g = DensityParams::Gaussian(GaussianParams::new(vec![0.3, -1.0], vec![1.2, 0.0, -0.4, 0.9]).unwrap());
        assert_eq!(DensityParams::from_named(&Family::Gaussian, 2, &g.named_tensors()).unwrap(), g);
        let m = DensityParams::Mixture2(Mixture2Params::new(1.0, 2.0, 0.3).unwrap());
        assert_eq!(DensityParams::from_named(&Family::Mixture2, 1, &m.named_tensors()).unwrap(), m);
        let fam = Family::Flow(FlowSpec::Coupling(CouplingSpec::new(2).with_hidden(3)));
        let init = initial_params(&fam, &Dataset::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap(), 5).unwrap();
        assert_eq!(DensityParams::from_named(&fam, 2, &init.named_tensors()).unwrap(), init);
        assert!(DensityParams::from_named(&Family::Mixture2, 1, &g.named_tensors()).is_err());
    }

    #[test]
    fn gaussian_fit_is_the_mle() {
        let (a, _) = gen_blobs(1, 200).unwrap();
        let r = fit_density(&Family::Gaussian, &a, &TrainConfig::default()).unwrap();
        assert_eq!(r.params, DensityParams::Gaussian(gaussian_mle(&a).unwrap()));
    }

    #[test]
    fn shared_gaussian_closed_form() {
        let a = Dataset::from_rows(&[[-1.0], [1.0]]).unwrap();
        let b = Dataset::from_rows(&[[-2.0], [2.0]]).unwrap();
        let g = gaussian_shared_mle(&a, &b).unwrap();
        assert!(close(g.covariance()[0], 2.5, 1e-15));
        let c = Dataset::from_rows(&[[1.0], [3.0]]).unwrap();
        let g = gaussian_shared_mle(&a, &c).unwrap();
        assert!(close(g.mean[0], 1.0, 1e-15));
        assert!(close(g.covariance()[0], 1.0 + 1.0, 1e-15));
    }
}
