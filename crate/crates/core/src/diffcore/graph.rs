//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its value; [`Graph::backward`]
//! walks the tape in reverse and accumulates adjoints. Shapes are checked
//! eagerly and violations panic: callers validate external inputs before
//! they reach the graph.

use std::cell::{Ref, RefCell};

use super::conv::ConvGeom;
use super::{Real, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Relu,
    Elu,
    Tanh,
    Sigmoid,
    Softplus,
    Exp,
    Log,
    Square,
    Neg,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Unary(Var, Unary),
    MaxScalar(Var, f64),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    SliceRows { x: Var, start: usize },
    Reshape(Var),
    SumRows(Var),
    SumAll(Var),
    Conv { x: Var, w: Var, b: Var, geom: ConvGeom },
    ConvT { x: Var, w: Var, b: Var, geom: ConvGeom },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    grad: bool,
}

/// Images processed per patch matrix in convolutions.
const CONV_CHUNK: usize = 32;

pub struct Graph<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
    record: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    /// Graph that records operations for differentiation.
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            record: true,
        }
    }

    /// Graph that only evaluates values; `backward` yields no gradients.
    pub fn inference() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            record: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Position to later [`truncate`](Self::truncate) back to.
    pub fn mark(&self) -> usize {
        self.len()
    }

    /// Drops every node created after `mark`, freeing its value. Vars
    /// created after the mark become invalid.
    pub fn truncate(&self, mark: usize) {
        self.nodes.borrow_mut().truncate(mark);
    }

    fn push(&self, value: Tensor<T>, op: Op, grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let grad = grad && self.record;
        let op = if grad { op } else { Op::Leaf };
        nodes.push(Node { value, op, grad });
        Var(nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].grad)
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable leaf.
    pub fn param(&self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        self.value(v).clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }

    /// Value of a single-element node.
    pub fn item(&self, v: Var) -> T {
        let t = self.value(v);
        assert_eq!(t.len(), 1, "item() on a non-scalar node");
        t.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].grad
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn stop_gradient(&self, v: Var) -> Var {
        let t = self.tensor(v);
        self.input(t)
    }

    fn binary(&self, a: Var, b: Var, op: Op, f: impl Fn(T, T) -> T) -> Var {
        let out = {
            let (ta, tb) = (self.value(a), self.value(b));
            assert_eq!(ta.shape(), tb.shape(), "elementwise shape mismatch");
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(ta.shape(), data).expect("same shape")
        };
        let g = self.needs(&[a, b]);
        self.push(out, op, g)
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let k = T::c(c);
        let out = self.value(a).map(|x| x * k);
        let g = self.needs(&[a]);
        self.push(out, Op::Scale(a, c), g)
    }

    pub fn shift(&self, a: Var, c: f64) -> Var {
        let k = T::c(c);
        let out = self.value(a).map(|x| x + k);
        let g = self.needs(&[a]);
        self.push(out, Op::Shift(a), g)
    }

    pub fn unary(&self, a: Var, kind: Unary) -> Var {
        let out = self.value(a).map(|x| unary_forward(kind, x));
        let g = self.needs(&[a]);
        self.push(out, Op::Unary(a, kind), g)
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, Unary::Relu)
    }

    pub fn elu(&self, a: Var) -> Var {
        self.unary(a, Unary::Elu)
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, Unary::Tanh)
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn softplus(&self, a: Var) -> Var {
        self.unary(a, Unary::Softplus)
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }

    pub fn log(&self, a: Var) -> Var {
        self.unary(a, Unary::Log)
    }

    pub fn square(&self, a: Var) -> Var {
        self.unary(a, Unary::Square)
    }

    pub fn neg(&self, a: Var) -> Var {
        self.unary(a, Unary::Neg)
    }

    /// `max(a, c)` elementwise. The gradient passes only where `a > c`.
    pub fn max_scalar(&self, a: Var, c: f64) -> Var {
        let k = T::c(c);
        let out = self.value(a).map(|x| if x > k { x } else { k });
        let g = self.needs(&[a]);
        self.push(out, Op::MaxScalar(a, c), g)
    }

    /// `x [n, i] @ w [i, o] + b [o]`.
    pub fn linear(&self, x: Var, w: Var, b: Option<Var>) -> Var {
        let out = {
            let (tx, tw) = (self.value(x), self.value(w));
            assert_eq!(tw.shape().len(), 2, "linear weight must be 2-D");
            let (n, i, o) = (tx.rows(), tw.shape()[0], tw.shape()[1]);
            assert_eq!(tx.row_len(), i, "linear input width {} != {}", tx.row_len(), i);
            let mut out = vec![T::zero(); n * o];
            if let Some(b) = b {
                let tb = self.value(b);
                assert_eq!(tb.len(), o, "bias length");
                for row in out.chunks_mut(o.max(1)) {
                    row.copy_from_slice(tb.data());
                }
            }
            T::gemm(
                n,
                i,
                o,
                tx.data(),
                (i as isize, 1),
                tw.data(),
                (o as isize, 1),
                T::one(),
                &mut out,
                (o as isize, 1),
            );
            Tensor::new(&[n, o], out).expect("linear shape")
        };
        let mut deps = vec![x, w];
        deps.extend(b);
        let g = self.needs(&deps);
        self.push(out, Op::Linear { x, w, b }, g)
    }

    /// Concatenates 2-D nodes along columns.
    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let out = {
            let ts: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
            let n = ts[0].rows();
            assert!(ts.iter().all(|t| t.rows() == n), "concat_cols row mismatch");
            let width: usize = ts.iter().map(|t| t.row_len()).sum();
            let mut data = Vec::with_capacity(n * width);
            for r in 0..n {
                for t in &ts {
                    data.extend_from_slice(t.row(r));
                }
            }
            Tensor::new(&[n, width], data).expect("concat shape")
        };
        let g = self.needs(parts);
        self.push(out, Op::ConcatCols(parts.to_vec()), g)
    }

    /// Columns `start..end` of a 2-D node.
    pub fn slice_cols(&self, x: Var, start: usize, end: usize) -> Var {
        let out = {
            let t = self.value(x);
            let (n, w) = (t.rows(), t.row_len());
            assert!(start <= end && end <= w, "slice_cols out of range");
            let mut data = Vec::with_capacity(n * (end - start));
            for r in 0..n {
                data.extend_from_slice(&t.row(r)[start..end]);
            }
            Tensor::new(&[n, end - start], data).expect("slice shape")
        };
        let g = self.needs(&[x]);
        self.push(out, Op::SliceCols { x, start }, g)
    }

    /// Stacks nodes along the leading dimension.
    pub fn concat_rows(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let out = {
            let ts: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
            let tail = ts[0].shape()[1..].to_vec();
            assert!(ts.iter().all(|t| t.shape()[1..] == tail[..]), "concat_rows shape mismatch");
            let n: usize = ts.iter().map(|t| t.rows()).sum();
            let data: Vec<T> = ts.iter().flat_map(|t| t.data().iter().copied()).collect();
            let mut shape = vec![n];
            shape.extend(tail);
            Tensor::new(&shape, data).expect("concat_rows shape")
        };
        let g = self.needs(parts);
        self.push(out, Op::ConcatRows(parts.to_vec()), g)
    }

    pub fn slice_rows(&self, x: Var, start: usize, end: usize) -> Var {
        let out = {
            let t = self.value(x);
            assert!(start <= end && end <= t.rows(), "slice_rows out of range");
            t.slice_rows(start, end)
        };
        let g = self.needs(&[x]);
        self.push(out, Op::SliceRows { x, start }, g)
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Var {
        let out = self.tensor(x).reshape(shape).expect("reshape");
        let g = self.needs(&[x]);
        self.push(out, Op::Reshape(x), g)
    }

    /// Sum over all non-leading dimensions: `[n, ...] -> [n, 1]`.
    pub fn sum_rows(&self, x: Var) -> Var {
        let out = {
            let t = self.value(x);
            let n = t.rows();
            let data = (0..n).map(|r| t.row(r).iter().copied().sum()).collect();
            Tensor::new(&[n, 1], data).expect("sum_rows shape")
        };
        let g = self.needs(&[x]);
        self.push(out, Op::SumRows(x), g)
    }

    pub fn sum(&self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let g = self.needs(&[x]);
        self.push(out, Op::SumAll(x), g)
    }

    pub fn mean(&self, x: Var) -> Var {
        let n = self.value(x).len();
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Strided convolution over NHWC images.
    ///
    /// `w` is `[kernel * kernel * in_c, out_c]`, `b` is `[out_c]`.
    pub fn conv2d(&self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let (out, geom) = {
            let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
            let s = tx.shape();
            assert_eq!(s.len(), 4, "conv2d expects NHWC input");
            let (n, h, wd, c) = (s[0], s[1], s[2], s[3]);
            let out_c = tw.shape()[1];
            let kernel = ((tw.shape()[0] / c) as f64).sqrt().round() as usize;
            assert_eq!(kernel * kernel * c, tw.shape()[0], "conv2d weight shape");
            assert_eq!(tb.len(), out_c, "conv2d bias shape");
            let geom = ConvGeom::new(h, wd, c, kernel, stride, pad).expect("conv geometry");
            let (p, pl) = (geom.positions(), geom.patch_len());
            let mut out = vec![T::zero(); n * p * out_c];
            let mut cols = vec![T::zero(); CONV_CHUNK.min(n) * p * pl];
            for start in (0..n).step_by(CONV_CHUNK) {
                let m = CONV_CHUNK.min(n - start);
                for i in 0..m {
                    let img = &tx.data()[(start + i) * geom.image_len()..][..geom.image_len()];
                    geom.im2col(img, &mut cols[i * p * pl..(i + 1) * p * pl]);
                }
                let dst = &mut out[start * p * out_c..(start + m) * p * out_c];
                for row in dst.chunks_mut(out_c) {
                    row.copy_from_slice(tb.data());
                }
                T::gemm(
                    m * p,
                    pl,
                    out_c,
                    &cols,
                    (pl as isize, 1),
                    tw.data(),
                    (out_c as isize, 1),
                    T::one(),
                    dst,
                    (out_c as isize, 1),
                );
            }
            let t = Tensor::new(&[n, geom.out_h, geom.out_w, out_c], out).expect("conv shape");
            (t, geom)
        };
        let g = self.needs(&[x, w, b]);
        self.push(out, Op::Conv { x, w, b, geom }, g)
    }

    /// Transposed convolution (adjoint of [`conv2d`](Self::conv2d)) over NHWC
    /// images. `w` is `[in_c, kernel * kernel * out_c]`, `b` is `[out_c]`.
    pub fn conv_transpose2d(&self, x: Var, w: Var, b: Var, kernel: usize, stride: usize, pad: usize) -> Var {
        let (out, geom) = {
            let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
            let s = tx.shape();
            assert_eq!(s.len(), 4, "conv_transpose2d expects NHWC input");
            let (n, ih, iw, ic) = (s[0], s[1], s[2], s[3]);
            assert_eq!(tw.shape()[0], ic, "conv_transpose2d weight rows");
            let out_c = tb.len();
            let geom = ConvGeom::transposed(ih, iw, out_c, kernel, stride, pad).expect("geometry");
            let (p, pl) = (geom.positions(), geom.patch_len());
            assert_eq!(tw.shape()[1], pl, "conv_transpose2d weight cols");
            let img_len = geom.image_len();
            let mut out = vec![T::zero(); n * img_len];
            for row in out.chunks_mut(out_c) {
                row.copy_from_slice(tb.data());
            }
            let mut cols = vec![T::zero(); CONV_CHUNK.min(n) * p * pl];
            for start in (0..n).step_by(CONV_CHUNK) {
                let m = CONV_CHUNK.min(n - start);
                let src = &tx.data()[start * p * ic..(start + m) * p * ic];
                T::gemm(
                    m * p,
                    ic,
                    pl,
                    src,
                    (ic as isize, 1),
                    tw.data(),
                    (pl as isize, 1),
                    T::zero(),
                    &mut cols[..m * p * pl],
                    (pl as isize, 1),
                );
                for i in 0..m {
                    geom.col2im(
                        &cols[i * p * pl..(i + 1) * p * pl],
                        &mut out[(start + i) * img_len..(start + i + 1) * img_len],
                    );
                }
            }
            let t = Tensor::new(&[n, geom.h, geom.w, out_c], out).expect("deconv shape");
            (t, geom)
        };
        let g = self.needs(&[x, w, b]);
        self.push(out, Op::ConvT { x, w, b, geom }, g)
    }

    /// Reverse pass from a single-element node.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.0].value.len(), 1, "backward() needs a scalar loss");
        let mut grads: Vec<Option<Vec<T>>> = vec![None; nodes.len()];
        if !nodes[loss.0].grad {
            return Gradients { grads };
        }
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            backprop(&nodes, &mut grads, node, &gy);
            grads[i] = Some(gy);
        }
        Gradients { grads }
    }
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn unary_forward<T: Real>(kind: Unary, x: T) -> T {
    match kind {
        Unary::Relu => x.max(T::zero()),
        Unary::Elu => {
            if x > T::zero() {
                x
            } else {
                x.exp_m1()
            }
        }
        Unary::Tanh => x.tanh(),
        Unary::Sigmoid => sigmoid(x),
        Unary::Softplus => x.max(T::zero()) + (-x.abs()).exp().ln_1p(),
        Unary::Exp => x.exp(),
        Unary::Log => x.ln(),
        Unary::Square => x * x,
        Unary::Neg => -x,
    }
}

#[inline]
fn unary_derivative<T: Real>(kind: Unary, x: T, y: T) -> T {
    match kind {
        Unary::Relu => {
            if x > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        Unary::Elu => {
            if x > T::zero() {
                T::one()
            } else {
                y + T::one()
            }
        }
        Unary::Tanh => T::one() - y * y,
        Unary::Sigmoid => y * (T::one() - y),
        Unary::Softplus => sigmoid(x),
        Unary::Exp => y,
        Unary::Log => T::one() / x,
        Unary::Square => x + x,
        Unary::Neg => -T::one(),
    }
}

fn accumulate<T: Real>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    v: Var,
    f: impl FnOnce(&mut [T]),
) {
    if !nodes[v.0].grad {
        return;
    }
    let g = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.len()]);
    f(g);
}

fn add_into<T: Real>(dst: &mut [T], src: impl IntoIterator<Item = T>) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

fn backprop<T: Real>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], node: &Node<T>, gy: &[T]) {
    let val = |v: Var| nodes[v.0].value.data();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, |g| add_into(g, gy.iter().copied()));
            accumulate(nodes, grads, *b, |g| add_into(g, gy.iter().copied()));
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, |g| add_into(g, gy.iter().copied()));
            accumulate(nodes, grads, *b, |g| add_into(g, gy.iter().map(|&d| -d)));
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            accumulate(nodes, grads, *a, |g| add_into(g, gy.iter().zip(vb).map(|(&d, &y)| d * y)));
            accumulate(nodes, grads, *b, |g| add_into(g, gy.iter().zip(va).map(|(&d, &x)| d * x)));
        }
        Op::Div(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            accumulate(nodes, grads, *a, |g| add_into(g, gy.iter().zip(vb).map(|(&d, &y)| d / y)));
            accumulate(nodes, grads, *b, |g| {
                add_into(
                    g,
                    gy.iter().zip(va).zip(vb).map(|((&d, &x), &y)| -d * x / (y * y)),
                )
            });
        }
        Op::Scale(a, c) => {
            let k = T::c(*c);
            accumulate(nodes, grads, *a, |g| add_into(g, gy.iter().map(|&d| d * k)));
        }
        Op::Shift(a) => accumulate(nodes, grads, *a, |g| add_into(g, gy.iter().copied())),
        Op::Unary(a, kind) => {
            let (x, y) = (val(*a), node.value.data());
            accumulate(nodes, grads, *a, |g| {
                for i in 0..g.len() {
                    g[i] = g[i] + gy[i] * unary_derivative(*kind, x[i], y[i]);
                }
            });
        }
        Op::MaxScalar(a, c) => {
            let k = T::c(*c);
            let x = val(*a);
            accumulate(nodes, grads, *a, |g| {
                for i in 0..g.len() {
                    if x[i] > k {
                        g[i] = g[i] + gy[i];
                    }
                }
            });
        }
        Op::Linear { x, w, b } => {
            let (tx, tw) = (&nodes[x.0].value, &nodes[w.0].value);
            let (n, i, o) = (tx.rows(), tw.shape()[0], tw.shape()[1]);
            accumulate(nodes, grads, *x, |g| {
                // dx = dy @ w^T
                T::gemm(n, o, i, gy, (o as isize, 1), tw.data(), (1, o as isize), T::one(), g, (i as isize, 1));
            });
            accumulate(nodes, grads, *w, |g| {
                // dw = x^T @ dy
                T::gemm(i, n, o, tx.data(), (1, i as isize), gy, (o as isize, 1), T::one(), g, (o as isize, 1));
            });
            if let Some(b) = b {
                accumulate(nodes, grads, *b, |g| {
                    for row in gy.chunks(o.max(1)) {
                        add_into(g, row.iter().copied());
                    }
                });
            }
        }
        Op::ConcatCols(parts) => {
            let n = node.value.rows();
            let width = node.value.row_len();
            let mut offset = 0;
            for &p in parts {
                let pw = nodes[p.0].value.row_len();
                accumulate(nodes, grads, p, |g| {
                    for r in 0..n {
                        add_into(&mut g[r * pw..(r + 1) * pw], gy[r * width + offset..][..pw].iter().copied());
                    }
                });
                offset += pw;
            }
        }
        Op::SliceCols { x, start } => {
            let n = node.value.rows();
            let w = node.value.row_len();
            let xw = nodes[x.0].value.row_len();
            accumulate(nodes, grads, *x, |g| {
                for r in 0..n {
                    add_into(&mut g[r * xw + start..][..w], gy[r * w..(r + 1) * w].iter().copied());
                }
            });
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let len = nodes[p.0].value.len();
                accumulate(nodes, grads, p, |g| add_into(g, gy[offset..offset + len].iter().copied()));
                offset += len;
            }
        }
        Op::SliceRows { x, start } => {
            let w = node.value.row_len();
            accumulate(nodes, grads, *x, |g| {
                add_into(&mut g[start * w..start * w + gy.len()], gy.iter().copied());
            });
        }
        Op::Reshape(x) => accumulate(nodes, grads, *x, |g| add_into(g, gy.iter().copied())),
        Op::SumRows(x) => {
            let w = nodes[x.0].value.row_len();
            accumulate(nodes, grads, *x, |g| {
                for (r, chunk) in g.chunks_mut(w.max(1)).enumerate() {
                    for v in chunk {
                        *v = *v + gy[r];
                    }
                }
            });
        }
        Op::SumAll(x) => {
            let d = gy[0];
            accumulate(nodes, grads, *x, |g| {
                for v in g {
                    *v = *v + d;
                }
            });
        }
        Op::Conv { x, w, b, geom } => conv_backward(nodes, grads, *x, *w, *b, geom, gy),
        Op::ConvT { x, w, b, geom } => conv_t_backward(nodes, grads, *x, *w, *b, geom, gy),
    }
}

fn conv_backward<T: Real>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    x: Var,
    w: Var,
    b: Var,
    geom: &ConvGeom,
    gy: &[T],
) {
    let (tx, tw) = (&nodes[x.0].value, &nodes[w.0].value);
    let n = tx.rows();
    let (p, pl, out_c) = (geom.positions(), geom.patch_len(), tw.shape()[1]);
    let img_len = geom.image_len();
    accumulate(nodes, grads, b, |g| {
        for row in gy.chunks(out_c) {
            add_into(g, row.iter().copied());
        }
    });
    let need_x = nodes[x.0].grad;
    let need_w = nodes[w.0].grad;
    if !need_x && !need_w {
        return;
    }
    let mut cols = vec![T::zero(); CONV_CHUNK.min(n) * p * pl];
    let mut dw = vec![T::zero(); if need_w { pl * out_c } else { 0 }];
    let mut dx = vec![T::zero(); if need_x { tx.len() } else { 0 }];
    for start in (0..n).step_by(CONV_CHUNK) {
        let m = CONV_CHUNK.min(n - start);
        let gchunk = &gy[start * p * out_c..(start + m) * p * out_c];
        if need_w {
            for i in 0..m {
                let img = &tx.data()[(start + i) * img_len..][..img_len];
                geom.im2col(img, &mut cols[i * p * pl..(i + 1) * p * pl]);
            }
            // dw += cols^T @ dy
            T::gemm(pl, m * p, out_c, &cols, (1, pl as isize), gchunk, (out_c as isize, 1), T::one(), &mut dw, (out_c as isize, 1));
        }
        if need_x {
            // dcols = dy @ w^T
            T::gemm(m * p, out_c, pl, gchunk, (out_c as isize, 1), tw.data(), (1, out_c as isize), T::zero(), &mut cols[..m * p * pl], (pl as isize, 1));
            for i in 0..m {
                geom.col2im(&cols[i * p * pl..(i + 1) * p * pl], &mut dx[(start + i) * img_len..(start + i + 1) * img_len]);
            }
        }
    }
    if need_w {
        accumulate(nodes, grads, w, |g| add_into(g, dw));
    }
    if need_x {
        accumulate(nodes, grads, x, |g| add_into(g, dx));
    }
}

fn conv_t_backward<T: Real>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    x: Var,
    w: Var,
    b: Var,
    geom: &ConvGeom,
    gy: &[T],
) {
    let (tx, tw) = (&nodes[x.0].value, &nodes[w.0].value);
    let n = tx.rows();
    let ic = tw.shape()[0];
    let (p, pl) = (geom.positions(), geom.patch_len());
    let img_len = geom.image_len();
    accumulate(nodes, grads, b, |g| {
        for row in gy.chunks(geom.c) {
            add_into(g, row.iter().copied());
        }
    });
    let need_x = nodes[x.0].grad;
    let need_w = nodes[w.0].grad;
    if !need_x && !need_w {
        return;
    }
    let mut cols = vec![T::zero(); CONV_CHUNK.min(n) * p * pl];
    let mut dw = vec![T::zero(); if need_w { ic * pl } else { 0 }];
    let mut dx = vec![T::zero(); if need_x { tx.len() } else { 0 }];
    for start in (0..n).step_by(CONV_CHUNK) {
        let m = CONV_CHUNK.min(n - start);
        for i in 0..m {
            let img = &gy[(start + i) * img_len..][..img_len];
            geom.im2col(img, &mut cols[i * p * pl..(i + 1) * p * pl]);
        }
        let cols = &cols[..m * p * pl];
        if need_x {
            // dx = dcols @ w^T
            let dst = &mut dx[start * p * ic..(start + m) * p * ic];
            T::gemm(m * p, pl, ic, cols, (pl as isize, 1), tw.data(), (1, pl as isize), T::zero(), dst, (ic as isize, 1));
        }
        if need_w {
            // dw += x^T @ dcols
            let src = &tx.data()[start * p * ic..(start + m) * p * ic];
            T::gemm(ic, m * p, pl, src, (1, ic as isize), cols, (pl as isize, 1), T::one(), &mut dw, (pl as isize, 1));
        }
    }
    if need_w {
        accumulate(nodes, grads, w, |g| add_into(g, dw));
    }
    if need_x {
        accumulate(nodes, grads, x, |g| add_into(g, dx));
    }
}

/// Adjoints produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss w.r.t. `v`; `None` when no path reaches it.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient with zeros substituted for unreached nodes.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<T> {
        self.get(v).map_or_else(|| vec![T::zero(); len], <[T]>::to_vec)
    }
}
