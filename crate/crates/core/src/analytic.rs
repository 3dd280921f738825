//! Closed-form reference cases: univariate Gaussians under affine maps, the
//! divergence decomposition of the distance, and the gradient decay of a
//! mixture objective.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::densities::GaussianParams;
use crate::error::{Error, Result};
use crate::generators::mixture1d_draws;
use crate::rng::{self, stream_rng};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments1d {
    pub mu: f64,
    pub sigma: f64,
}

impl Moments1d {
    pub fn new(mu: f64, sigma: f64) -> Self {
        Moments1d { mu, sigma }
    }
}

/// Variance of the equal mixture of two univariate laws.
pub fn mixture_variance(a: Moments1d, b: Moments1d) -> f64 {
    let dm = a.mu - b.mu;
    0.5 * (a.sigma * a.sigma + b.sigma * b.sigma) + 0.25 * dm * dm
}

/// Population loss for Gaussian `A`, `B` and the map
/// `T(x) = a (x - mu_A) + mu_A + b`, with the shared Gaussian at its optimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianAffineLoss {
    pub a: Moments1d,
    pub b: Moments1d,
}

impl GaussianAffineLoss {
    pub fn eval(&self, scale: f64, shift: f64) -> f64 {
        let ta = Moments1d::new(self.a.mu + shift, scale * self.a.sigma);
        -libm::log(scale) + libm::log(mixture_variance(ta, self.b))
            - libm::log(self.a.sigma)
            - libm::log(self.b.sigma)
    }

    /// Offset of the same map written as `T(x) = scale x + offset`.
    pub fn uncentered_offset(&self, scale: f64, shift: f64) -> f64 {
        self.a.mu + shift - scale * self.a.mu
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineSolution {
    pub a_star: f64,
    pub b_star: f64,
    pub loss: GaussianAffineLoss,
}

pub fn gaussian_affine_solution(a: Moments1d, b: Moments1d) -> Result<AffineSolution> {
    for m in [a, b] {
        if !(m.sigma > 0.0) || !m.sigma.is_finite() || !m.mu.is_finite() {
            return Err(Error::Degenerate("standard deviations must be positive"));
        }
    }
    Ok(AffineSolution {
        a_star: b.sigma / a.sigma,
        b_star: b.mu - a.mu,
        loss: GaussianAffineLoss { a, b },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridMin {
    pub a: f64,
    pub b: f64,
    pub value: f64,
}

/// Exhaustive minimum of `f` over `[a_lo, a_hi] x [b_lo, b_hi]` at spacing `step`.
pub fn grid_argmin(f: impl Fn(f64, f64) -> f64, a_range: (f64, f64), b_range: (f64, f64), step: f64) -> GridMin {
    let count = |(lo, hi): (f64, f64)| libm::round((hi - lo) / step) as usize + 1;
    let (na, nb) = (count(a_range), count(b_range));
    let mut best = GridMin {
        a: f64::NAN,
        b: f64::NAN,
        value: f64::INFINITY,
    };
    for i in 0..na {
        let a = a_range.0 + i as f64 * step;
        for j in 0..nb {
            let b = b_range.0 + j as f64 * step;
            let v = f(a, b);
            if v < best.value {
                best = GridMin { a, b, value: v };
            }
        }
    }
    best
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> Result<f64> {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    if diff.abs() <= 15.0 * tol {
        return Ok(left + right + diff / 15.0);
    }
    if depth == 0 || !diff.is_finite() {
        return Err(Error::Quadrature);
    }
    Ok(simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`, split into `panels`
/// equal pieces first.
pub fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, panels: usize) -> Result<f64> {
    let panels = panels.max(1);
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for k in 0..panels {
        let (lo, hi) = (a + k as f64 * h, a + (k + 1) as f64 * h);
        let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
        let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
        total += simpson_step(&f, lo, hi, fa, fm, fb, whole, tol / panels as f64, 48)?;
    }
    Ok(total)
}

fn log_normal(x: f64, m: Moments1d) -> f64 {
    let z = (x - m.mu) / m.sigma;
    -0.5 * z * z - libm::log(m.sigma) - 0.5 * LN_2PI
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + libm::log(libm::exp(a - m) + libm::exp(b - m))
}

/// Both sides of `d = 2 JSD(A, B) + 2 KL(mix || N(mix moments))` for
/// univariate Gaussians, where the Gaussian-to-family terms vanish.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JsdCheck {
    /// Distance from the Gaussian closed forms.
    pub lhs: f64,
    /// Divergence decomposition by quadrature.
    pub rhs: f64,
    pub jsd: f64,
    pub kl_mixture: f64,
}

fn univariate(p: &GaussianParams) -> Result<Moments1d> {
    if p.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            actual: p.dim(),
        });
    }
    Ok(Moments1d::new(p.mean[0], p.scale_tril[0]))
}

pub fn jsd_identity_check(pa: &GaussianParams, pb: &GaussianParams) -> Result<JsdCheck> {
    let (a, b) = (univariate(pa)?, univariate(pb)?);
    let var = mixture_variance(a, b);
    let lhs = libm::log(var) - libm::log(a.sigma) - libm::log(b.sigma);
    let mix = Moments1d::new(0.5 * (a.mu + b.mu), libm::sqrt(var));

    let spread = 12.0 * a.sigma.max(b.sigma);
    let (lo, hi) = (a.mu.min(b.mu) - spread, a.mu.max(b.mu) + spread);
    let log_mix = |x: f64| log_add_exp(log_normal(x, a), log_normal(x, b)) - LN_2;
    let kl_term = |x: f64, m: Moments1d| {
        let lp = log_normal(x, m);
        libm::exp(lp) * (lp - log_mix(x))
    };
    let tol = 1e-10;
    let panels = 256;
    let kl_a = adaptive_simpson(|x| kl_term(x, a), lo, hi, tol, panels)?;
    let kl_b = adaptive_simpson(|x| kl_term(x, b), lo, hi, tol, panels)?;
    let kl_mixture = adaptive_simpson(
        |x| {
            let lm = log_mix(x);
            libm::exp(lm) * (lm - log_normal(x, mix))
        },
        lo,
        hi,
        tol,
        panels,
    )?;
    let jsd = 0.5 * (kl_a + kl_b);
    Ok(JsdCheck {
        lhs,
        rhs: 2.0 * jsd + 2.0 * kl_mixture,
        jsd,
        kl_mixture,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares `y ~ slope x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: x.len() });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(u, v)| (u - mx) * (v - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("regressor is constant"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(u, v)| { let r = v - slope * u - intercept; r * r }).sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(LinearFit { slope, intercept, r2 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradDecayConfig {
    pub delta: f64,
    pub sigma0: f64,
    pub mu_min: f64,
    pub mu_max: f64,
    /// Number of equally spaced grid points on `[mu_min, mu_max]`.
    pub points: usize,
    pub n: usize,
    pub seed: u64,
}

impl Default for GradDecayConfig {
    fn default() -> Self {
        GradDecayConfig {
            delta: libm::sqrt(1.35),
            sigma0: 0.2,
            mu_min: 7.0,
            mu_max: 16.0,
            points: 91,
            n: 100_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradDecayReport {
    /// `(mu, |dL/dmu|)` for every grid point that did not underflow.
    pub points: Vec<(f64, f64)>,
    /// Grid points whose gradient fell below `1e-300`.
    pub dropped: Vec<f64>,
    /// Fit of `sqrt(-ln g)` against `mu`.
    pub fit: LinearFit,
    /// `1 / sqrt(2 (sigma0^2 + delta^2))`.
    pub predicted_slope: f64,
}

const UNDERFLOW: f64 = 1e-300;

/// The fixed sample used by [`gradient_decay_sim`].
pub fn gradient_decay_sample(cfg: &GradDecayConfig) -> Vec<f64> {
    let mut r = stream_rng(cfg.seed, rng::STREAM_GRAD_DECAY);
    mixture1d_draws(&mut r, cfg.n, 0.0, cfg.delta, cfg.sigma0)
}

/// Gradient magnitude of the mean mixture log-likelihood of a fixed sample
/// with respect to the location of one component, as that component moves
/// away from the data.
///
/// The sample comes from the equal mixture at `+-delta` with variance
/// `sigma0^2`; the model has components at `mu` and `0`, both with variance
/// `sigma0^2 + delta^2`.
pub fn gradient_decay_sim(cfg: &GradDecayConfig) -> Result<GradDecayReport> {
    if !(cfg.sigma0 > 0.0) {
        return Err(Error::InvalidConfig("sigma0 must be positive"));
    }
    if cfg.points < 2 || !(cfg.mu_max > cfg.mu_min) {
        return Err(Error::InvalidConfig("grid needs two points and mu_max > mu_min"));
    }
    if cfg.n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: cfg.n });
    }
    let var = cfg.sigma0 * cfg.sigma0 + cfg.delta * cfg.delta;
    let x = Tensor::matrix(cfg.n, 1, gradient_decay_sample(cfg));

    let mut points = Vec::with_capacity(cfg.points);
    let mut dropped = Vec::new();
    let step = (cfg.mu_max - cfg.mu_min) / (cfg.points - 1) as f64;
    for k in 0..cfg.points {
        let mu = cfg.mu_min + k as f64 * step;
        let tape = Tape::new();
        let mu_leaf = tape.leaf(Tensor::matrix(1, 1, vec![mu]));
        let mus = mu_leaf.matmul(tape.constant(Tensor::row(vec![1.0, 0.0])));
        let diff = tape.constant(x.clone()).matmul(tape.constant(Tensor::row(vec![1.0, 1.0]))) - mus;
        let comp = diff.square().scale(-0.5 / var).offset(-0.5 * libm::log(var) - 0.5 * LN_2PI);
        let ll = comp.row_logsumexp().offset(-LN_2).mean();
        let g = libm::fabs(tape.grad(ll, &[mu_leaf])?[0].item());
        if !(UNDERFLOW..1.0).contains(&g) {
            dropped.push(mu);
        } else {
            points.push((mu, g));
        }
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| libm::sqrt(-libm::log(p.1))).collect();
    let fit = linear_fit(&xs, &ys)?;
    Ok(GradDecayReport {
        points,
        dropped,
        fit,
        predicted_slope: 1.0 / libm::sqrt(2.0 * var),
    })
}
