use lrmf_core::autodiff::Tensor;
use lrmf_core::flows::{FlowParams, FlowSpec};
use lrmf_core::rng::{stream_rng, Rng};
use lrmf_core::Dataset;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> Rng {
    stream_rng(seed, 7_777)
}

pub fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal_tensor(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| normal(rng)).collect())
}

pub fn uniform_tensor(rng: &mut Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect())
}

pub fn normal_dataset(rng: &mut Rng, n: usize, dim: usize, mean: f64, sd: f64) -> Dataset {
    Dataset::new(dim, (0..n * dim).map(|_| mean + sd * normal(rng)).collect()).unwrap()
}

/// Identity-initialised flow with every raw parameter jittered by `sd`.
pub fn jittered_flow(spec: &FlowSpec, seed: u64, sd: f64) -> FlowParams {
    let mut r = rng(seed);
    let mut flow = spec.init_identity(&mut r).unwrap();
    let mut raw = flow.raw();
    for t in &mut raw {
        for v in t.data_mut() {
            *v += sd * normal(&mut r);
        }
    }
    flow.set_raw(&raw).unwrap();
    flow
}

/// Norm of the difference over the larger norm, floored.
pub fn rel_err(a: &[Tensor], b: &[Tensor], floor: f64) -> f64 {
    let flat = |ts: &[Tensor]| ts.iter().flat_map(|t| t.data().to_vec()).collect::<Vec<_>>();
    let (a, b) = (flat(a), flat(b));
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(&a).max(norm(&b)).max(floor)
}
