//! Seeded synthetic datasets for the alignment experiments.
//!
//! Every generator is a pure function of its arguments; see [`crate::rng`]
//! for the stream layout.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, stream_rng, Rng};

pub const BLOB_MEAN_A: [f64; 2] = [1.0, 1.0];
pub const BLOB_MEAN_B: [f64; 2] = [4.0, -2.0];
/// Whitening factors `W` of the two blobs: samples are `mu + W^{-1} z`.
pub const BLOB_WHITEN_A: [f64; 4] = [0.5, 0.7, -0.5, 0.3];
pub const BLOB_WHITEN_B: [f64; 4] = [0.5, 3.0, 3.0, -2.0];

fn normal(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn inv2(w: &[f64; 4]) -> [f64; 4] {
    let det = w[0] * w[3] - w[1] * w[2];
    [w[3] / det, -w[1] / det, -w[2] / det, w[0] / det]
}

/// Population covariance `W^{-1} W^{-T}` of a blob.
pub fn blob_covariance(whiten: &[f64; 4]) -> [f64; 4] {
    let m = inv2(whiten);
    [
        m[0] * m[0] + m[1] * m[1],
        m[0] * m[2] + m[1] * m[3],
        m[0] * m[2] + m[1] * m[3],
        m[2] * m[2] + m[3] * m[3],
    ]
}

fn blob(rng: &mut Rng, n: usize, mean: &[f64; 2], whiten: &[f64; 4]) -> Dataset {
    let m = inv2(whiten);
    let mut data = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let (z0, z1) = (normal(rng), normal(rng));
        data.push(mean[0] + m[0] * z0 + m[1] * z1);
        data.push(mean[1] + m[2] * z0 + m[3] * z1);
    }
    Dataset::new(2, data).expect("blob rows")
}

/// Two 2-D Gaussian blobs of `n` samples each.
pub fn gen_blobs(seed: u64, n: usize) -> Result<(Dataset, Dataset)> {
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let a = blob(&mut stream_rng(seed, rng::STREAM_BLOBS_A), n, &BLOB_MEAN_A, &BLOB_WHITEN_A);
    let b = blob(&mut stream_rng(seed, rng::STREAM_BLOBS_B), n, &BLOB_MEAN_B, &BLOB_WHITEN_B);
    Ok((a, b))
}

fn linspace_pi(k: usize, i: usize) -> f64 {
    if k <= 1 {
        0.0
    } else {
        PI * i as f64 / (k - 1) as f64
    }
}

/// Two interleaved unit half circles: the upper arc is centred at the
/// origin (label 0), the lower one at `(1, 0.5)` (label 1).
fn moons(rng: &mut Rng, n: usize, noise: f64) -> Dataset {
    let n_out = n / 2;
    let n_in = n - n_out;
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n_out {
        let t = linspace_pi(n_out, i);
        data.push(libm::cos(t));
        data.push(libm::sin(t));
        labels.push(0);
    }
    for i in 0..n_in {
        let t = linspace_pi(n_in, i);
        data.push(1.0 - libm::cos(t));
        data.push(0.5 - libm::sin(t));
        labels.push(1);
    }
    if noise > 0.0 {
        for v in data.iter_mut() {
            *v += noise * normal(rng);
        }
    }
    Dataset::new(2, data)
        .and_then(|d| d.with_labels(labels))
        .expect("moons rows")
}

/// Rotates every row of a 2-D dataset by `deg` degrees about its centroid.
pub fn rotate_about_centroid(x: &Dataset, deg: f64) -> Dataset {
    let c = x.mean();
    let (s, co) = libm::sincos(deg.to_radians());
    let mut data = Vec::with_capacity(x.data().len());
    for r in x.rows() {
        let (dx, dy) = (r[0] - c[0], r[1] - c[1]);
        data.push(c[0] + co * dx - s * dy);
        data.push(c[1] + s * dx + co * dy);
    }
    let out = Dataset::new(2, data).expect("rotated rows");
    match x.labels() {
        Some(l) => out.with_labels(l.to_vec()).expect("labels"),
        None => out,
    }
}

/// Labelled moons pair; `B` is an independent draw rotated by
/// `rotation_deg` about its own centroid.
pub fn gen_moons(seed: u64, n: usize, rotation_deg: f64, noise: f64) -> Result<(Dataset, Dataset)> {
    if n < 4 {
        return Err(Error::TooFewSamples { needed: 4, got: n });
    }
    if noise < 0.0 || !noise.is_finite() {
        return Err(Error::InvalidConfig("moons noise must be finite and non-negative"));
    }
    let a = moons(&mut stream_rng(seed, rng::STREAM_MOONS_A), n, noise);
    let b = moons(&mut stream_rng(seed, rng::STREAM_MOONS_B), n, noise);
    Ok((a, rotate_about_centroid(&b, rotation_deg)))
}

/// Equal mixture of `N(mu + delta, sigma0^2)` and `N(mu - delta, sigma0^2)`.
pub fn gen_mixture1d(seed: u64, n: usize, mu: f64, delta: f64, sigma0: f64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    if !(sigma0 > 0.0) {
        return Err(Error::InvalidConfig("sigma0 must be positive"));
    }
    let mut rng = stream_rng(seed, rng::STREAM_MIXTURE1D);
    Ok(Dataset::new(1, mixture1d_draws(&mut rng, n, mu, delta, sigma0)).expect("1-d rows"))
}

pub(crate) fn mixture1d_draws(rng: &mut Rng, n: usize, mu: f64, delta: f64, sigma0: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let centre = if rng.random::<bool>() { mu + delta } else { mu - delta };
            centre + sigma0 * normal(rng)
        })
        .collect()
}
