use alloc::vec;
use alloc::vec::Vec;
use core::cell::{Cell, RefCell};
use core::ops;

use super::tensor::{matmul, matmul_nt, matmul_tn};
use super::{AdError, Tensor};

/// Define-by-run record of a computation.
///
/// Numerical faults (non-finite values, division by zero, `ln` of a
/// non-positive number) do not abort recording: the first fault is kept and
/// reported by [`Tape::check`] and [`Tape::grad`]. Incompatible operand
/// shapes are programming errors and panic.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    fault: Cell<Option<AdError>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

struct Node {
    value: Tensor,
    op: Op,
}

enum Op {
    Leaf,
    Const,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    Offset(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Sum(usize),
    Mean(usize),
    RowSums(usize),
    ColSums(usize),
    Exp(usize),
    Ln(usize),
    Tanh(usize),
    Relu(usize),
    Softplus(usize),
    Sqrt(usize),
    Square(usize),
    RowLogSumExp(usize),
    Select(Vec<bool>, usize, usize),
    SqDist(usize, usize),
    TriSolve { l: usize, x: usize, transpose: bool },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Const => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(_) => "neg",
            Op::Scale(..) => "scale",
            Op::Offset(_) => "offset",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Reshape(_) => "reshape",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::RowSums(_) => "row_sums",
            Op::ColSums(_) => "col_sums",
            Op::Exp(_) => "exp",
            Op::Ln(_) => "ln",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Softplus(_) => "softplus",
            Op::Sqrt(_) => "sqrt",
            Op::Square(_) => "square",
            Op::RowLogSumExp(_) => "row_logsumexp",
            Op::Select(..) => "select",
            Op::SqDist(..) => "sq_dist",
            Op::TriSolve { .. } => "tri_solve",
        }
    }
}

fn broadcast_dims(a: (usize, usize), b: (usize, usize)) -> Option<(usize, usize)> {
    fn one(x: usize, y: usize) -> Option<usize> {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    }
    Some((one(a.0, b.0)?, one(a.1, b.1)?))
}

#[inline]
fn bidx(dims: (usize, usize), i: usize, j: usize) -> usize {
    let r = if dims.0 == 1 { 0 } else { i };
    let c = if dims.1 == 1 { 0 } else { j };
    r * dims.1 + c
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + libm::exp(-x)
    } else {
        libm::log1p(libm::exp(x))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Forward or transposed triangular solve on every row of `x`.
///
/// Only the lower triangle of `l` is read. With `transpose == false` each
/// row becomes `L^{-1} x`, otherwise `L^{-T} x`.
fn tri_solve_rows(l: &[f64], d: usize, x: &[f64], transpose: bool) -> Vec<f64> {
    let n = x.len() / d;
    let mut out = vec![0.0; x.len()];
    for r in 0..n {
        let xr = &x[r * d..(r + 1) * d];
        let zr = &mut out[r * d..(r + 1) * d];
        if !transpose {
            for i in 0..d {
                let mut acc = xr[i];
                for k in 0..i {
                    acc -= l[i * d + k] * zr[k];
                }
                zr[i] = acc / l[i * d + i];
            }
        } else {
            for i in (0..d).rev() {
                let mut acc = xr[i];
                for k in i + 1..d {
                    acc -= l[k * d + i] * zr[k];
                }
                zr[i] = acc / l[i * d + i];
            }
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// First numerical fault recorded on this tape, if any.
    pub fn check(&self) -> Result<(), AdError> {
        match self.fault.get() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    fn flag(&self, e: AdError) {
        if self.fault.get().is_none() {
            self.fault.set(Some(e));
        }
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        if !value.is_finite() {
            self.flag(AdError::NonFinite { op: op.name() });
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Registers a differentiable input.
    pub fn leaf(&self, t: Tensor) -> Var<'_> {
        self.push(t, Op::Leaf)
    }

    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.push(t, Op::Const)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(Tensor::scalar(v))
    }

    fn value_of<R>(&self, id: usize, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[id].value)
    }

    /// Reverse pass from a scalar `root`; returns `d root / d param` for
    /// each entry of `params` (all of which must be leaves of this tape).
    pub fn grad(&self, root: Var<'_>, params: &[Var<'_>]) -> Result<Vec<Tensor>, AdError> {
        self.check()?;
        let nodes = self.nodes.borrow();
        for p in params {
            if !core::ptr::eq(p.tape, self) || !matches!(nodes[p.id].op, Op::Leaf) {
                return Err(AdError::NotALeaf);
            }
        }
        if !core::ptr::eq(root.tape, self) {
            return Err(AdError::NotALeaf);
        }
        let numel = nodes[root.id].value.numel();
        if numel != 1 {
            return Err(AdError::NonScalarRoot { numel });
        }

        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(root.id + 1);
        grads.resize_with(root.id + 1, || None);
        grads[root.id] = Some(vec![1.0]);

        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf | Op::Const) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(AdError::NonFinite { op: node.op.name() });
            }
            backward(&nodes, node, &g, &mut grads);
        }

        params
            .iter()
            .map(|p| {
                let shape = nodes[p.id].value.shape().to_vec();
                let data = grads[p.id]
                    .clone()
                    .unwrap_or_else(|| vec![0.0; nodes[p.id].value.numel()]);
                if data.iter().any(|v| !v.is_finite()) {
                    return Err(AdError::NonFinite { op: "grad" });
                }
                Tensor::new(shape, data)
            })
            .collect()
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: usize, contrib: Vec<f64>) {
    match &mut grads[id] {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contrib) {
                *e += c;
            }
        }
        slot @ None => *slot = Some(contrib),
    }
}

fn unary_grad(
    grads: &mut [Option<Vec<f64>>],
    a: usize,
    x: &Tensor,
    y: &Tensor,
    g: &[f64],
    f: impl Fn(f64, f64, f64) -> f64,
) {
    let contrib = x
        .data()
        .iter()
        .zip(y.data())
        .zip(g)
        .map(|((&xv, &yv), &gv)| f(xv, yv, gv))
        .collect();
    accumulate(grads, a, contrib);
}

#[allow(clippy::too_many_arguments)]
fn binary_grad(
    grads: &mut [Option<Vec<f64>>],
    ia: usize,
    ib: usize,
    a: &Tensor,
    b: &Tensor,
    out: (usize, usize),
    g: &[f64],
    da: impl Fn(f64, f64, f64) -> f64,
    db: impl Fn(f64, f64, f64) -> f64,
) {
    let (ad, bd) = (a.dims(), b.dims());
    let mut ga = vec![0.0; a.numel()];
    let mut gb = vec![0.0; b.numel()];
    let (av, bv) = (a.data(), b.data());
    for i in 0..out.0 {
        for j in 0..out.1 {
            let k = i * out.1 + j;
            let (pa, pb) = (bidx(ad, i, j), bidx(bd, i, j));
            ga[pa] += da(av[pa], bv[pb], g[k]);
            gb[pb] += db(av[pa], bv[pb], g[k]);
        }
    }
    accumulate(grads, ia, ga);
    accumulate(grads, ib, gb);
}

fn backward(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |i: usize| &nodes[i].value;
    let y = &node.value;
    match &node.op {
        Op::Leaf | Op::Const => {}
        &Op::Add(a, b) => binary_grad(
            grads,
            a,
            b,
            val(a),
            val(b),
            y.dims(),
            g,
            |_, _, g| g,
            |_, _, g| g,
        ),
        &Op::Sub(a, b) => binary_grad(
            grads,
            a,
            b,
            val(a),
            val(b),
            y.dims(),
            g,
            |_, _, g| g,
            |_, _, g| -g,
        ),
        &Op::Mul(a, b) => binary_grad(
            grads,
            a,
            b,
            val(a),
            val(b),
            y.dims(),
            g,
            |_, bv, g| g * bv,
            |av, _, g| g * av,
        ),
        &Op::Div(a, b) => binary_grad(
            grads,
            a,
            b,
            val(a),
            val(b),
            y.dims(),
            g,
            |_, bv, g| g / bv,
            |av, bv, g| -g * av / (bv * bv),
        ),
        &Op::Neg(a) => accumulate(grads, a, g.iter().map(|v| -v).collect()),
        &Op::Scale(a, s) => accumulate(grads, a, g.iter().map(|v| v * s).collect()),
        &Op::Offset(a) | &Op::Reshape(a) => accumulate(grads, a, g.to_vec()),
        &Op::MatMul(a, b) => {
            let (n, k) = val(a).dims();
            let m = val(b).cols();
            accumulate(grads, a, matmul_nt(g, val(b).data(), n, m, k));
            accumulate(grads, b, matmul_tn(val(a).data(), g, n, k, m));
        }
        &Op::Transpose(a) => {
            let (r, c) = val(a).dims();
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    out[i * c + j] = g[j * r + i];
                }
            }
            accumulate(grads, a, out);
        }
        &Op::Sum(a) => accumulate(grads, a, vec![g[0]; val(a).numel()]),
        &Op::Mean(a) => {
            let n = val(a).numel();
            accumulate(grads, a, vec![g[0] / n as f64; n]);
        }
        &Op::RowSums(a) => {
            let (r, c) = val(a).dims();
            let out = (0..r * c).map(|k| g[k / c]).collect();
            accumulate(grads, a, out);
        }
        &Op::ColSums(a) => {
            let (r, c) = val(a).dims();
            let out = (0..r * c).map(|k| g[k % c]).collect();
            accumulate(grads, a, out);
        }
        &Op::Exp(a) => unary_grad(grads, a, val(a), y, g, |_, y, g| g * y),
        &Op::Ln(a) => unary_grad(grads, a, val(a), y, g, |x, _, g| g / x),
        &Op::Tanh(a) => unary_grad(grads, a, val(a), y, g, |_, y, g| g * (1.0 - y * y)),
        &Op::Relu(a) => unary_grad(grads, a, val(a), y, g, |x, _, g| if x > 0.0 { g } else { 0.0 }),
        &Op::Softplus(a) => unary_grad(grads, a, val(a), y, g, |x, _, g| g * sigmoid(x)),
        &Op::Sqrt(a) => unary_grad(grads, a, val(a), y, g, |_, y, g| g * 0.5 / y),
        &Op::Square(a) => unary_grad(grads, a, val(a), y, g, |x, _, g| 2.0 * x * g),
        &Op::RowLogSumExp(a) => {
            let x = val(a);
            let (r, c) = x.dims();
            let out = (0..r * c)
                .map(|k| g[k / c] * libm::exp(x.data()[k] - y.data()[k / c]))
                .collect();
            accumulate(grads, a, out);
        }
        Op::Select(mask, a, b) => {
            let ga = mask.iter().zip(g).map(|(&m, &v)| if m { v } else { 0.0 }).collect();
            let gb = mask.iter().zip(g).map(|(&m, &v)| if m { 0.0 } else { v }).collect();
            accumulate(grads, *a, ga);
            accumulate(grads, *b, gb);
        }
        &Op::SqDist(a, b) => {
            let (x, yv) = (val(a), val(b));
            let (n, d) = x.dims();
            let m = yv.rows();
            let gy_x = matmul(g, yv.data(), n, m, d); // G Y
            let gt_x = matmul_tn(g, x.data(), n, m, d); // G^T X
            let mut gx = vec![0.0; n * d];
            for i in 0..n {
                let rs: f64 = g[i * m..(i + 1) * m].iter().sum();
                for k in 0..d {
                    gx[i * d + k] = 2.0 * (rs * x.data()[i * d + k] - gy_x[i * d + k]);
                }
            }
            let mut gy = vec![0.0; m * d];
            for j in 0..m {
                let cs: f64 = (0..n).map(|i| g[i * m + j]).sum();
                for k in 0..d {
                    gy[j * d + k] = -2.0 * (gt_x[j * d + k] - cs * yv.data()[j * d + k]);
                }
            }
            accumulate(grads, a, gx);
            accumulate(grads, b, gy);
        }
        &Op::TriSolve { l, x, transpose } => {
            let lv = val(l);
            let d = lv.rows();
            let n = val(x).numel() / d;
            let z = y.data();
            // w = dF/dX, obtained with the opposite solve direction.
            let w = tri_solve_rows(lv.data(), d, g, !transpose);
            let mut gl = vec![0.0; d * d];
            for r in 0..n {
                let (wr, zr) = (&w[r * d..(r + 1) * d], &z[r * d..(r + 1) * d]);
                for j in 0..d {
                    for k in 0..=j {
                        gl[j * d + k] -= if transpose {
                            zr[j] * wr[k]
                        } else {
                            wr[j] * zr[k]
                        };
                    }
                }
            }
            accumulate(grads, x, w);
            accumulate(grads, l, gl);
        }
    }
}

#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.value_of(self.id, Tensor::clone)
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        self.tape.value_of(self.id, f)
    }

    pub fn item(&self) -> f64 {
        self.with_value(Tensor::item)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.with_value(Tensor::dims)
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(core::ptr::eq(self.tape, other.tape), "variables from different tapes");
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let v = self.with_value(|x| x.map(f));
        self.tape.push(v, op)
    }

    fn binary(self, rhs: Var<'t>, op: Op, f: impl Fn(f64, f64) -> f64) -> Var<'t> {
        self.same_tape(&rhs);
        let v = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[rhs.id].value);
            let (ad, bd) = (a.dims(), b.dims());
            let out = broadcast_dims(ad, bd).unwrap_or_else(|| {
                panic!("cannot broadcast {:?} with {:?} in `{}`", ad, bd, op.name())
            });
            let (av, bv) = (a.data(), b.data());
            let data = if a.shape() == b.shape() {
                av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect()
            } else {
                let mut data = Vec::with_capacity(out.0 * out.1);
                for i in 0..out.0 {
                    for j in 0..out.1 {
                        data.push(f(av[bidx(ad, i, j)], bv[bidx(bd, i, j)]));
                    }
                }
                data
            };
            let shape = if a.shape() == b.shape() {
                a.shape().to_vec()
            } else {
                vec![out.0, out.1]
            };
            Tensor::new(shape, data).expect("broadcast shape")
        };
        self.tape.push(v, op)
    }

    pub fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Add(self.id, rhs.id), |a, b| a + b)
    }

    pub fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Sub(self.id, rhs.id), |a, b| a - b)
    }

    pub fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Mul(self.id, rhs.id), |a, b| a * b)
    }

    pub fn div(self, rhs: Var<'t>) -> Var<'t> {
        if rhs.with_value(|t| t.data().contains(&0.0)) {
            self.tape.flag(AdError::DivisionByZero { op: "div" });
        }
        self.binary(rhs, Op::Div(self.id, rhs.id), |a, b| a / b)
    }

    pub fn neg(self) -> Var<'t> {
        self.unary(Op::Neg(self.id), |x| -x)
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, s), |x| x * s)
    }

    pub fn offset(self, c: f64) -> Var<'t> {
        self.unary(Op::Offset(self.id), |x| x + c)
    }

    /// Elementwise `self * scale + shift` with broadcasting.
    pub fn affine(self, scale: Var<'t>, shift: Var<'t>) -> Var<'t> {
        self.mul(scale).add(shift)
    }

    pub fn matmul(self, rhs: Var<'t>) -> Var<'t> {
        self.same_tape(&rhs);
        let v = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[rhs.id].value);
            let ((n, k), (k2, m)) = (a.dims(), b.dims());
            assert_eq!(k, k2, "matmul inner dimensions {} vs {}", k, k2);
            Tensor::matrix(n, m, matmul(a.data(), b.data(), n, k, m))
        };
        self.tape.push(v, Op::MatMul(self.id, rhs.id))
    }

    pub fn t(self) -> Var<'t> {
        let v = self.with_value(|a| {
            let (r, c) = a.dims();
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = a.data()[i * c + j];
                }
            }
            Tensor::matrix(c, r, out)
        });
        self.tape.push(v, Op::Transpose(self.id))
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        let v = self.with_value(|a| a.reshaped(shape)).expect("reshape size");
        self.tape.push(v, Op::Reshape(self.id))
    }

    pub fn sum(self) -> Var<'t> {
        let v = self.with_value(|a| Tensor::scalar(a.data().iter().sum()));
        self.tape.push(v, Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let v = self.with_value(|a| Tensor::scalar(a.data().iter().sum::<f64>() / a.numel() as f64));
        self.tape.push(v, Op::Mean(self.id))
    }

    /// Sum over columns: `(r, c) -> (r, 1)`.
    pub fn row_sums(self) -> Var<'t> {
        let v = self.with_value(|a| {
            let (r, c) = a.dims();
            Tensor::matrix(r, 1, a.data().chunks(c).map(|row| row.iter().sum()).collect())
        });
        self.tape.push(v, Op::RowSums(self.id))
    }

    /// Sum over rows: `(r, c) -> (1, c)`.
    pub fn col_sums(self) -> Var<'t> {
        let v = self.with_value(|a| {
            let c = a.cols();
            let mut out = vec![0.0; c];
            for row in a.data().chunks(c) {
                for (o, x) in out.iter_mut().zip(row) {
                    *o += x;
                }
            }
            Tensor::matrix(1, c, out)
        });
        self.tape.push(v, Op::ColSums(self.id))
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id), libm::exp)
    }

    pub fn ln(self) -> Var<'t> {
        if self.with_value(|t| t.data().iter().any(|&x| x <= 0.0)) {
            self.tape.flag(AdError::Domain { op: "ln" });
        }
        self.unary(Op::Ln(self.id), libm::log)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), libm::tanh)
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |x| if x > 0.0 { x } else { 0.0 })
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(self) -> Var<'t> {
        self.unary(Op::Softplus(self.id), softplus)
    }

    pub fn sqrt(self) -> Var<'t> {
        if self.with_value(|t| t.data().iter().any(|&x| x < 0.0)) {
            self.tape.flag(AdError::Domain { op: "sqrt" });
        }
        self.unary(Op::Sqrt(self.id), libm::sqrt)
    }

    pub fn square(self) -> Var<'t> {
        self.unary(Op::Square(self.id), |x| x * x)
    }

    /// Max-shifted log-sum-exp of each row: `(r, c) -> (r, 1)`.
    pub fn row_logsumexp(self) -> Var<'t> {
        let v = self.with_value(|a| {
            let (r, c) = a.dims();
            let out = a
                .data()
                .chunks(c)
                .map(|row| {
                    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    if m == f64::NEG_INFINITY {
                        return m;
                    }
                    m + libm::log(row.iter().map(|x| libm::exp(x - m)).sum::<f64>())
                })
                .collect();
            Tensor::matrix(r, 1, out)
        });
        self.tape.push(v, Op::RowLogSumExp(self.id))
    }

    /// Log-sum-exp over every element, returned as a scalar.
    pub fn logsumexp(self) -> Var<'t> {
        let n = self.with_value(Tensor::numel);
        self.reshape(&[1, n]).row_logsumexp().reshape(&[])
    }

    /// Elementwise `mask ? self : other`.
    pub fn select(self, mask: &[bool], other: Var<'t>) -> Var<'t> {
        self.same_tape(&other);
        let v = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            assert_eq!(a.shape(), b.shape(), "select operands differ in shape");
            assert_eq!(mask.len(), a.numel(), "select mask length");
            let data = mask
                .iter()
                .zip(a.data().iter().zip(b.data()))
                .map(|(&m, (&x, &y))| if m { x } else { y })
                .collect();
            Tensor::new(a.shape().to_vec(), data).expect("select shape")
        };
        self.tape.push(v, Op::Select(mask.to_vec(), self.id, other.id))
    }

    /// Pairwise squared Euclidean distances between rows: `(n, d), (m, d) -> (n, m)`.
    pub fn sq_dist(self, other: Var<'t>) -> Var<'t> {
        self.same_tape(&other);
        let v = {
            let nodes = self.tape.nodes.borrow();
            let (x, y) = (&nodes[self.id].value, &nodes[other.id].value);
            let ((n, d), (m, d2)) = (x.dims(), y.dims());
            assert_eq!(d, d2, "sq_dist feature dimensions");
            let mut out = Vec::with_capacity(n * m);
            for xi in x.data().chunks(d) {
                for yj in y.data().chunks(d) {
                    out.push(xi.iter().zip(yj).map(|(a, b)| (a - b) * (a - b)).sum());
                }
            }
            Tensor::matrix(n, m, out)
        };
        self.tape.push(v, Op::SqDist(self.id, other.id))
    }

    /// Treating `self` as a lower-triangular `d x d` factor `L`, solves every
    /// row `x` of `rhs` for `L^{-1} x` (or `L^{-T} x` when `transpose`).
    pub fn tri_solve(self, rhs: Var<'t>, transpose: bool) -> Var<'t> {
        self.same_tape(&rhs);
        let v = {
            let nodes = self.tape.nodes.borrow();
            let (l, x) = (&nodes[self.id].value, &nodes[rhs.id].value);
            let (d, d2) = l.dims();
            assert_eq!(d, d2, "triangular factor must be square");
            assert_eq!(x.cols(), d, "tri_solve right-hand side width");
            if (0..d).any(|i| l.data()[i * d + i] == 0.0) {
                self.tape.flag(AdError::DivisionByZero { op: "tri_solve" });
            }
            let z = tri_solve_rows(l.data(), d, x.data(), transpose);
            Tensor::new(x.shape().to_vec(), z).expect("tri_solve shape")
        };
        self.tape.push(
            v,
            Op::TriSolve {
                l: self.id,
                x: rhs.id,
                transpose,
            },
        )
    }
}

impl<'t> ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        Var::add(self, rhs)
    }
}

impl<'t> ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        Var::sub(self, rhs)
    }
}

impl<'t> ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        Var::mul(self, rhs)
    }
}

impl<'t> ops::Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        Var::div(self, rhs)
    }
}

impl<'t> ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        Var::neg(self)
    }
}
