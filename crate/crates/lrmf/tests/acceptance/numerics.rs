//! Gradient checks, flow invertibility and density normalization.

use lrmf_core::autodiff::{finite_diff_grad, AdError, Tape, Tensor, Var};
use lrmf_core::densities::{DensityParams, FlowDensityParams, GaussianParams, Mixture2Params};
use lrmf_core::flows::{flow_forward, flow_inverse_with_logdet, AffineForm, CouplingSpec, FlowParams, FlowSpec};
use lrmf_core::lrmf::{lrmf_loss, lrmf_loss_grad};
use rand::Rng as _;

use crate::support::{jittered_flow, normal, normal_dataset, normal_tensor, rel_err, rng, uniform_tensor};

const SEEDS: u64 = 100;
const GRAD_TOL: f64 = 1e-4;
const STEP: f64 = 1e-6;

type Build = for<'t> fn(&'t Tape, &[Var<'t>]) -> Var<'t>;
type Make = fn(&mut lrmf_core::rng::Rng) -> Vec<Tensor>;

/// Relative error between tape and central-difference gradients of
/// `sum(build(params) * w)`.
fn primitive_error(seed: u64, params: Vec<Tensor>, build: Build) -> f64 {
    let shape = {
        let tape = Tape::new();
        let vars: Vec<_> = params.iter().map(|p| tape.constant(p.clone())).collect();
        build(&tape, &vars).dims()
    };
    let w = normal_tensor(&mut rng(seed ^ 0x5eed), shape.0, shape.1);
    let eval = |ps: &[Tensor], leaf: bool| {
        let tape = Tape::new();
        let vars: Vec<_> = ps
            .iter()
            .map(|p| if leaf { tape.leaf(p.clone()) } else { tape.constant(p.clone()) })
            .collect();
        let out = (build(&tape, &vars) * tape.constant(w.clone())).sum();
        let grads = if leaf { tape.grad(out, &vars).unwrap() } else { Vec::new() };
        (out.item(), grads)
    };
    let (_, ad) = eval(&params, true);
    let fd = finite_diff_grad::<AdError>(|ps| Ok(eval(ps, false).0), &params, STEP).unwrap();
    rel_err(&ad, &fd, 1e-6)
}

fn signed(r: &mut lrmf_core::rng::Rng, rows: usize, cols: usize) -> Tensor {
    let mut t = uniform_tensor(r, rows, cols, 0.3, 2.0);
    for v in t.data_mut() {
        if r.random::<bool>() {
            *v = -*v;
        }
    }
    t
}

fn tril(r: &mut lrmf_core::rng::Rng) -> Tensor {
    let mut l = normal_tensor(r, 3, 3);
    for i in 0..3 {
        for j in i..3 {
            l.data_mut()[i * 3 + j] = if i == j { r.random_range(0.5..2.0) } else { 0.0 };
        }
    }
    l
}

fn primitives() -> Vec<(&'static str, Make, Build)> {
    vec![
        ("add", |r| vec![normal_tensor(r, 3, 4), normal_tensor(r, 1, 4)], |_, v| v[0] + v[1]),
        ("sub", |r| vec![normal_tensor(r, 3, 4), normal_tensor(r, 3, 1)], |_, v| v[0] - v[1]),
        ("mul", |r| vec![normal_tensor(r, 3, 4), normal_tensor(r, 3, 4)], |_, v| v[0] * v[1]),
        ("div", |r| vec![normal_tensor(r, 3, 4), signed(r, 1, 4)], |_, v| v[0] / v[1]),
        (
            "affine",
            |r| vec![normal_tensor(r, 5, 2), normal_tensor(r, 1, 2), normal_tensor(r, 1, 2)],
            |_, v| v[0].affine(v[1], v[2]),
        ),
        ("neg", |r| vec![normal_tensor(r, 3, 3)], |_, v| -v[0]),
        ("scale", |r| vec![normal_tensor(r, 3, 3)], |_, v| v[0].scale(-2.5)),
        ("offset", |r| vec![normal_tensor(r, 3, 3)], |_, v| v[0].offset(1.5).square()),
        ("exp", |r| vec![normal_tensor(r, 3, 3)], |_, v| v[0].exp()),
        ("ln", |r| vec![uniform_tensor(r, 3, 3, 0.2, 3.0)], |_, v| v[0].ln()),
        ("tanh", |r| vec![normal_tensor(r, 3, 3)], |_, v| v[0].tanh()),
        ("relu", |r| vec![signed(r, 3, 3)], |_, v| v[0].relu()),
        ("softplus", |r| vec![normal_tensor(r, 3, 3).map(|x| 4.0 * x)], |_, v| v[0].softplus()),
        ("sqrt", |r| vec![uniform_tensor(r, 3, 3, 0.2, 3.0)], |_, v| v[0].sqrt()),
        ("square", |r| vec![normal_tensor(r, 3, 3)], |_, v| v[0].square()),
        ("matmul", |r| vec![normal_tensor(r, 3, 4), normal_tensor(r, 4, 2)], |_, v| v[0].matmul(v[1])),
        ("transpose", |r| vec![normal_tensor(r, 3, 4)], |_, v| v[0].t().square()),
        ("reshape", |r| vec![normal_tensor(r, 3, 4)], |_, v| v[0].reshape(&[2, 6]).tanh()),
        ("sq_dist", |r| vec![normal_tensor(r, 4, 3), normal_tensor(r, 5, 3)], |_, v| v[0].sq_dist(v[1])),
        ("tri_solve", |r| vec![tril(r), normal_tensor(r, 4, 3)], |_, v| v[0].tri_solve(v[1], false)),
        ("tri_solve_t", |r| vec![tril(r), normal_tensor(r, 4, 3)], |_, v| v[0].tri_solve(v[1], true)),
        ("sum", |r| vec![normal_tensor(r, 3, 4)], |_, v| v[0].square().sum()),
        ("mean", |r| vec![normal_tensor(r, 3, 4)], |_, v| v[0].square().mean()),
        ("row_sums", |r| vec![normal_tensor(r, 3, 4)], |_, v| v[0].row_sums()),
        ("col_sums", |r| vec![normal_tensor(r, 3, 4)], |_, v| v[0].col_sums()),
        ("row_logsumexp", |r| vec![normal_tensor(r, 3, 4).map(|x| 3.0 * x)], |_, v| v[0].row_logsumexp()),
        ("logsumexp", |r| vec![normal_tensor(r, 3, 4)], |_, v| v[0].logsumexp()),
        (
            "select",
            |r| vec![normal_tensor(r, 2, 3), normal_tensor(r, 2, 3)],
            |_, v| v[0].select(&[true, false, true, false, false, true], v[1]),
        ),
    ]
}

fn loss_error(a: &Tensor, b: &Tensor, flow: &FlowParams, theta: &DensityParams) -> f64 {
    let c_ab = 0.25;
    let got = lrmf_loss_grad(a, b, flow, theta, c_ab).unwrap();
    let split = flow.raw().len();
    let params: Vec<Tensor> = flow.raw().into_iter().chain(theta.trainable()).collect();
    let fd = finite_diff_grad::<lrmf_core::Error>(
        |ps| {
            let mut f = flow.clone();
            f.set_raw(&ps[..split])?;
            Ok(lrmf_loss(a, b, &f, &theta.with_trainable(&ps[split..])?, c_ab)?.total)
        },
        &params,
        STEP,
    )
    .unwrap();
    let ad: Vec<Tensor> = got.grad_t.into_iter().chain(got.grad_s).collect();
    rel_err(&ad, &fd, 1e-6)
}

fn full_loss_worst() -> f64 {
    let coupling = FlowSpec::Coupling(CouplingSpec::new(2).with_hidden(6).with_blocks(2));
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let a = normal_dataset(&mut r, 12, 2, 0.5, 1.0).to_tensor();
        let b = normal_dataset(&mut r, 10, 2, -1.0, 2.0).to_tensor();
        let form = if seed % 2 == 0 { AffineForm::Triangular } else { AffineForm::PositiveDefinite };
        let flow = jittered_flow(&FlowSpec::Affine { dim: 2, form }, seed, 0.3);
        let theta = DensityParams::Gaussian(GaussianParams::new(vec![0.1, -0.2], vec![1.2, 0.0, 0.3 * normal(&mut r), 0.8]).unwrap());
        worst = worst.max(loss_error(&a, &b, &flow, &theta));

        let a1 = normal_dataset(&mut r, 12, 1, 0.0, 1.5).to_tensor();
        let b1 = normal_dataset(&mut r, 12, 1, 1.0, 1.0).to_tensor();
        let flow1 = jittered_flow(&FlowSpec::Affine { dim: 1, form: AffineForm::Triangular }, seed, 0.3);
        let mix = DensityParams::Mixture2(Mixture2Params::new(-1.0 + 0.2 * normal(&mut r), 1.5, 0.7).unwrap());
        worst = worst.max(loss_error(&a1, &b1, &flow1, &mix));

        let a2 = normal_dataset(&mut r, 8, 2, 0.0, 1.0).to_tensor();
        let b2 = normal_dataset(&mut r, 8, 2, 0.5, 1.0).to_tensor();
        let fd = DensityParams::Flow(FlowDensityParams {
            flow: jittered_flow(&coupling, seed + 1000, 0.2),
        });
        worst = worst.max(loss_error(&a2, &b2, &jittered_flow(&coupling, seed, 0.2), &fd));
    }
    worst
}

/// Worst round-trip error and worst `|logdet forward + logdet inverse|`.
fn invertibility_worst() -> (f64, f64) {
    let specs = [
        FlowSpec::Coupling(CouplingSpec::new(2).with_hidden(16)),
        FlowSpec::Coupling(CouplingSpec::new(3).with_hidden(8)),
        FlowSpec::Affine { dim: 3, form: AffineForm::Triangular },
        FlowSpec::Affine { dim: 3, form: AffineForm::PositiveDefinite },
    ];
    let (mut trip, mut cancel) = (0.0f64, 0.0f64);
    for seed in 0..SEEDS {
        for spec in &specs {
            let flow = jittered_flow(spec, seed, 0.1);
            let x = normal_tensor(&mut rng(seed + 50_000), 64, spec.dim());
            let (y, fwd) = flow_forward(&x, &flow).unwrap();
            let (back, inv) = flow_inverse_with_logdet(&y, &flow).unwrap();
            trip = trip.max(back.max_abs_diff(&x));
            cancel = cancel.max(fwd.iter().zip(&inv).map(|(f, i)| (f + i).abs()).fold(0.0, f64::max));
        }
    }
    (trip, cancel)
}

/// Largest `|mass - 1|` of 1-d flow densities by the trapezoid rule.
fn normalization_worst() -> f64 {
    let spec = FlowSpec::Coupling(CouplingSpec::new(1).with_hidden(8));
    let (n, lo, hi) = (40_000usize, -25.0, 25.0);
    let h = (hi - lo) / n as f64;
    let grid = Tensor::matrix(n + 1, 1, (0..=n).map(|i| lo + i as f64 * h).collect());
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let p = DensityParams::Flow(FlowDensityParams {
            flow: jittered_flow(&spec, seed, 0.1),
        });
        let lp = p.log_prob(&grid).unwrap();
        let mass = h * (lp[1..n].iter().map(|v| v.exp()).sum::<f64>() + 0.5 * (lp[0].exp() + lp[n].exp()));
        worst = worst.max((mass - 1.0).abs());
    }
    worst
}

pub fn run() -> crate::Outcome {
    let mut worst_prim = (0.0f64, "");
    for (name, make, build) in primitives() {
        for seed in 0..SEEDS {
            let e = primitive_error(seed, make(&mut rng(seed)), build);
            if e > worst_prim.0 {
                worst_prim = (e, name);
            }
        }
    }
    let loss = full_loss_worst();
    let (trip, cancel) = invertibility_worst();
    let mass = normalization_worst();
    crate::ensure(
        worst_prim.0 <= GRAD_TOL && loss <= GRAD_TOL && trip <= 1e-9 && cancel <= 1e-9 && mass <= 1e-3,
        format!(
            "primitive grad error {:.1e} ({}), loss grad error {loss:.1e}, round trip {trip:.1e}, \
             logdet cancellation {cancel:.1e}, |mass - 1| {mass:.1e}",
            worst_prim.0, worst_prim.1
        ),
    )
}
