//! Define-by-run reverse-mode differentiation.
//!
//! Every backward rule is itself written in terms of tape operations, so the
//! gradients returned by [`Tape::grad`] are ordinary [`Var`]s that can be
//! differentiated again. This is what the Wasserstein gradient penalty needs:
//! the penalty is a function of an input gradient and must be differentiated
//! with respect to the critic parameters.
//!
//! Piecewise-linear activations are expressed as multiplication by a constant
//! mask, which makes their second derivative zero almost everywhere.

use std::cell::RefCell;
use std::rc::Rc;

use crate::{Matrix, Scalar};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Square(Var),
    Recip(Var),
    SumAll(Var),
    SumRows(Var),
    SumCols(Var),
    BroadcastRow(Var),
    BroadcastCol(Var),
    BroadcastScalar(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    EmbedCols(Var, usize),
    Reshape(Var),
}

struct Node<T> {
    value: Rc<Matrix<T>>,
    op: Op,
    requires_grad: bool,
}

/// An append-only computation graph.
///
/// Create one per optimisation step; dropping it releases all intermediates.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::with_capacity(256)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Matrix<T>, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Shared handle to a node's value.
    pub fn value(&self, v: Var) -> Rc<Matrix<T>> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes.borrow()[v.0].value.shape()
    }

    /// Value of a `1 x 1` node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let value = self.value(v);
        assert_eq!(value.shape(), (1, 1), "scalar_value on non-scalar node");
        value.get(0, 0).to_f64_lossless()
    }

    /// A leaf that gradients are tracked for.
    pub fn variable(&self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf sharing storage with the caller, tracked for gradients.
    pub fn variable_shared(&self, value: Rc<Matrix<T>>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(nodes.len() - 1)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn constant_shared(&self, value: Rc<Matrix<T>>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(nodes.len() - 1)
    }

    fn unary(&self, a: Var, op: Op, f: impl Fn(T) -> T) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    fn binary(&self, a: Var, b: Var, op: Op, f: impl Fn(T, T) -> T) -> Var {
        let value = {
            let va = self.value(a);
            let vb = self.value(b);
            va.zip_map(&vb, f)
        };
        let rg = self.rg(a) || self.rg(b);
        self.push(value, op, rg)
    }

    pub fn matmul_t(&self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let value = Matrix::matmul(&self.value(a), &self.value(b), ta, tb);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul { a, b, ta, tb }, rg)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        self.matmul_t(a, b, false, false)
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Element-wise product.
    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    fn row_broadcast_op(&self, a: Var, row: Var, op: Op, f: impl Fn(T, T) -> T) -> Var {
        let value = {
            let va = self.value(a);
            let vr = self.value(row);
            assert_eq!(vr.shape(), (1, va.cols()), "row operand must be 1 x cols");
            let r = vr.as_slice();
            let mut out = (*va).clone();
            for i in 0..out.rows() {
                for (x, &y) in out.row_mut(i).iter_mut().zip(r) {
                    *x = f(*x, y);
                }
            }
            out
        };
        let rg = self.rg(a) || self.rg(row);
        self.push(value, op, rg)
    }

    /// `a[m, n] + row[1, n]` broadcast over rows.
    pub fn add_row(&self, a: Var, row: Var) -> Var {
        self.row_broadcast_op(a, row, Op::AddRow(a, row), |x, y| x + y)
    }

    /// `a[m, n] * row[1, n]` broadcast over rows.
    pub fn mul_row(&self, a: Var, row: Var) -> Var {
        self.row_broadcast_op(a, row, Op::MulRow(a, row), |x, y| x * y)
    }

    /// `a[m, n] * col[m, 1]` broadcast over columns.
    pub fn mul_col(&self, a: Var, col: Var) -> Var {
        let value = {
            let va = self.value(a);
            let vc = self.value(col);
            assert_eq!(vc.shape(), (va.rows(), 1), "col operand must be rows x 1");
            let mut out = (*va).clone();
            for i in 0..out.rows() {
                let s = vc.get(i, 0);
                for x in out.row_mut(i) {
                    *x = *x * s;
                }
            }
            out
        };
        let rg = self.rg(a) || self.rg(col);
        self.push(value, Op::MulCol(a, col), rg)
    }

    pub fn scale(&self, a: Var, s: f64) -> Var {
        let st = T::of(s);
        self.unary(a, Op::Scale(a, s), move |x| x * st)
    }

    pub fn add_scalar(&self, a: Var, s: f64) -> Var {
        let st = T::of(s);
        self.unary(a, Op::AddScalar(a), move |x| x + st)
    }

    pub fn neg(&self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), |x| x.tanh())
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), |x| x.exp())
    }

    pub fn log(&self, a: Var) -> Var {
        self.unary(a, Op::Log(a), |x| x.ln())
    }

    pub fn sqrt(&self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), |x| x.sqrt())
    }

    pub fn square(&self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn recip(&self, a: Var) -> Var {
        self.unary(a, Op::Recip(a), |x| x.recip())
    }

    /// Sum of every element, as a `1 x 1` node.
    pub fn sum(&self, a: Var) -> Var {
        let s = {
            let va = self.value(a);
            va.as_slice().iter().fold(T::zero(), |acc, &x| acc + x)
        };
        let rg = self.rg(a);
        self.push(Matrix::scalar(s), Op::SumAll(a), rg)
    }

    pub fn mean(&self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Column sums, `[m, n] -> [1, n]`.
    pub fn sum_rows(&self, a: Var) -> Var {
        let value = {
            let va = self.value(a);
            let mut out = Matrix::zeros(1, va.cols());
            for i in 0..va.rows() {
                for (o, &x) in out.as_mut_slice().iter_mut().zip(va.row(i)) {
                    *o = *o + x;
                }
            }
            out
        };
        let rg = self.rg(a);
        self.push(value, Op::SumRows(a), rg)
    }

    /// Row sums, `[m, n] -> [m, 1]`.
    pub fn sum_cols(&self, a: Var) -> Var {
        let value = {
            let va = self.value(a);
            let data = (0..va.rows())
                .map(|i| va.row(i).iter().fold(T::zero(), |acc, &x| acc + x))
                .collect();
            Matrix::from_vec(va.rows(), 1, data).expect("shape")
        };
        let rg = self.rg(a);
        self.push(value, Op::SumCols(a), rg)
    }

    /// `[1, n] -> [m, n]`.
    pub fn broadcast_row(&self, a: Var, m: usize) -> Var {
        let value = {
            let va = self.value(a);
            assert_eq!(va.rows(), 1);
            let mut data = Vec::with_capacity(m * va.cols());
            for _ in 0..m {
                data.extend_from_slice(va.as_slice());
            }
            Matrix::from_vec(m, va.cols(), data).expect("shape")
        };
        let rg = self.rg(a);
        self.push(value, Op::BroadcastRow(a), rg)
    }

    /// `[m, 1] -> [m, n]`.
    pub fn broadcast_col(&self, a: Var, n: usize) -> Var {
        let value = {
            let va = self.value(a);
            assert_eq!(va.cols(), 1);
            Matrix::from_fn(va.rows(), n, |r, _| va.get(r, 0))
        };
        let rg = self.rg(a);
        self.push(value, Op::BroadcastCol(a), rg)
    }

    /// `[1, 1] -> [m, n]`.
    pub fn broadcast_scalar(&self, a: Var, m: usize, n: usize) -> Var {
        let value = {
            let va = self.value(a);
            assert_eq!(va.shape(), (1, 1));
            Matrix::full(m, n, va.get(0, 0))
        };
        let rg = self.rg(a);
        self.push(value, Op::BroadcastScalar(a), rg)
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        let value = {
            let values: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
            let refs: Vec<&Matrix<T>> = values.iter().map(|v| v.as_ref()).collect();
            Matrix::concat_cols(&refs)
        };
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice_cols(start, end);
        let rg = self.rg(a);
        self.push(value, Op::SliceCols(a, start), rg)
    }

    /// Place `a` at column `start` of a zero matrix with `total` columns.
    pub fn embed_cols(&self, a: Var, start: usize, total: usize) -> Var {
        let value = {
            let va = self.value(a);
            assert!(start + va.cols() <= total, "embed out of range");
            let mut out = Matrix::zeros(va.rows(), total);
            for r in 0..va.rows() {
                out.row_mut(r)[start..start + va.cols()].copy_from_slice(va.row(r));
            }
            out
        };
        let rg = self.rg(a);
        self.push(value, Op::EmbedCols(a, start), rg)
    }

    /// Row-major reshape.
    pub fn reshape(&self, a: Var, rows: usize, cols: usize) -> Var {
        let value = (*self.value(a))
            .clone()
            .reshaped(rows, cols)
            .expect("reshape size mismatch");
        let rg = self.rg(a);
        self.push(value, Op::Reshape(a), rg)
    }

    /// Multiply by a constant matrix of the same shape.
    pub fn mul_const(&self, a: Var, c: Matrix<T>) -> Var {
        let c = self.constant(c);
        self.mul(a, c)
    }

    /// `max(x, slope * x)` with the mask held constant.
    pub fn leaky_relu(&self, a: Var, slope: f64) -> Var {
        let s = T::of(slope);
        let mask = self
            .value(a)
            .map(|x| if x > T::zero() { T::one() } else { s });
        self.mul_const(a, mask)
    }

    pub fn relu(&self, a: Var) -> Var {
        self.leaky_relu(a, 0.0)
    }

    /// Row-wise log-sum-exp, `[m, n] -> [m, 1]`.
    pub fn logsumexp_rows(&self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let maxes = {
            let va = self.value(a);
            let data = (0..m)
                .map(|i| {
                    va.row(i)
                        .iter()
                        .fold(T::neg_infinity(), |acc, &x| if x > acc { x } else { acc })
                })
                .collect();
            Matrix::from_vec(m, 1, data).expect("shape")
        };
        let shift = self.constant(maxes);
        let shifted = self.sub(a, self.broadcast_col(shift, n));
        let lse = self.log(self.sum_cols(self.exp(shifted)));
        self.add(lse, shift)
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&self, a: Var) -> Var {
        let n = self.shape(a).1;
        let lse = self.logsumexp_rows(a);
        self.exp(self.sub(a, self.broadcast_col(lse, n)))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax_rows(&self, a: Var) -> Var {
        let n = self.shape(a).1;
        let lse = self.logsumexp_rows(a);
        self.sub(a, self.broadcast_col(lse, n))
    }

    fn zeros_like(&self, v: Var) -> Var {
        let (r, c) = self.shape(v);
        self.constant(Matrix::zeros(r, c))
    }

    /// Gradients of the scalar `output` with respect to `wrt`.
    ///
    /// The returned gradients live on the tape and are differentiable.
    /// Inputs that `output` does not depend on get constant zeros.
    pub fn grad(&self, output: Var, wrt: &[Var]) -> Vec<Var> {
        assert_eq!(self.shape(output), (1, 1), "grad requires a scalar output");
        let n = output.0 + 1;

        // Only propagate into nodes lying on a path from some `wrt` input.
        let mut needed = vec![false; n];
        for w in wrt {
            if w.0 < n {
                needed[w.0] = true;
            }
        }
        let first = wrt.iter().map(|w| w.0).min().unwrap_or(n);
        for id in first..n {
            if needed[id] {
                continue;
            }
            let nodes = self.nodes.borrow();
            if !nodes[id].requires_grad {
                continue;
            }
            needed[id] = parents(&nodes[id].op).iter().any(|p| needed[p.0]);
        }

        let mut grads: Vec<Option<Var>> = vec![None; n];
        grads[output.0] = Some(self.constant(Matrix::scalar(T::one())));

        for id in (0..n).rev() {
            let Some(g) = grads[id] else { continue };
            if !needed[id] {
                continue;
            }
            let op = self.nodes.borrow()[id].op.clone();
            let me = Var(id);
            let acc = |p: Var, gp: Var, grads: &mut Vec<Option<Var>>| {
                if p.0 < n && needed[p.0] {
                    grads[p.0] = Some(match grads[p.0] {
                        Some(prev) => self.add(prev, gp),
                        None => gp,
                    });
                }
            };
            match op {
                Op::Leaf => {}
                Op::MatMul { a, b, ta, tb } => {
                    if needed[a.0] {
                        let ga = if ta {
                            self.matmul_t(b, g, tb, true)
                        } else {
                            self.matmul_t(g, b, false, !tb)
                        };
                        acc(a, ga, &mut grads);
                    }
                    if needed[b.0] {
                        let gb = if tb {
                            self.matmul_t(g, a, true, ta)
                        } else {
                            self.matmul_t(a, g, !ta, false)
                        };
                        acc(b, gb, &mut grads);
                    }
                }
                Op::Add(a, b) => {
                    acc(a, g, &mut grads);
                    acc(b, g, &mut grads);
                }
                Op::Sub(a, b) => {
                    acc(a, g, &mut grads);
                    if needed[b.0] {
                        let gb = self.neg(g);
                        acc(b, gb, &mut grads);
                    }
                }
                Op::Mul(a, b) => {
                    if needed[a.0] {
                        let ga = self.mul(g, b);
                        acc(a, ga, &mut grads);
                    }
                    if needed[b.0] {
                        let gb = self.mul(g, a);
                        acc(b, gb, &mut grads);
                    }
                }
                Op::AddRow(a, row) => {
                    acc(a, g, &mut grads);
                    if needed[row.0] {
                        let gr = self.sum_rows(g);
                        acc(row, gr, &mut grads);
                    }
                }
                Op::MulRow(a, row) => {
                    if needed[a.0] {
                        let ga = self.mul_row(g, row);
                        acc(a, ga, &mut grads);
                    }
                    if needed[row.0] {
                        let gr = self.sum_rows(self.mul(g, a));
                        acc(row, gr, &mut grads);
                    }
                }
                Op::MulCol(a, col) => {
                    if needed[a.0] {
                        let ga = self.mul_col(g, col);
                        acc(a, ga, &mut grads);
                    }
                    if needed[col.0] {
                        let gc = self.sum_cols(self.mul(g, a));
                        acc(col, gc, &mut grads);
                    }
                }
                Op::Scale(a, s) => {
                    let ga = self.scale(g, s);
                    acc(a, ga, &mut grads);
                }
                Op::AddScalar(a) => acc(a, g, &mut grads),
                Op::Tanh(a) => {
                    // 1 - tanh^2, expressed through the output node
                    let d = self.add_scalar(self.neg(self.square(me)), 1.0);
                    let ga = self.mul(g, d);
                    acc(a, ga, &mut grads);
                }
                Op::Exp(a) => {
                    let ga = self.mul(g, me);
                    acc(a, ga, &mut grads);
                }
                Op::Log(a) => {
                    let ga = self.mul(g, self.recip(a));
                    acc(a, ga, &mut grads);
                }
                Op::Sqrt(a) => {
                    let ga = self.scale(self.mul(g, self.recip(me)), 0.5);
                    acc(a, ga, &mut grads);
                }
                Op::Square(a) => {
                    let ga = self.scale(self.mul(g, a), 2.0);
                    acc(a, ga, &mut grads);
                }
                Op::Recip(a) => {
                    let ga = self.neg(self.mul(g, self.square(me)));
                    acc(a, ga, &mut grads);
                }
                Op::SumAll(a) => {
                    let (r, c) = self.shape(a);
                    let ga = self.broadcast_scalar(g, r, c);
                    acc(a, ga, &mut grads);
                }
                Op::SumRows(a) => {
                    let r = self.shape(a).0;
                    let ga = self.broadcast_row(g, r);
                    acc(a, ga, &mut grads);
                }
                Op::SumCols(a) => {
                    let c = self.shape(a).1;
                    let ga = self.broadcast_col(g, c);
                    acc(a, ga, &mut grads);
                }
                Op::BroadcastRow(a) => {
                    let ga = self.sum_rows(g);
                    acc(a, ga, &mut grads);
                }
                Op::BroadcastCol(a) => {
                    let ga = self.sum_cols(g);
                    acc(a, ga, &mut grads);
                }
                Op::BroadcastScalar(a) => {
                    let ga = self.sum(g);
                    acc(a, ga, &mut grads);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.shape(p).1;
                        if needed[p.0] {
                            let gp = self.slice_cols(g, offset, offset + w);
                            acc(p, gp, &mut grads);
                        }
                        offset += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let total = self.shape(a).1;
                    let ga = self.embed_cols(g, start, total);
                    acc(a, ga, &mut grads);
                }
                Op::EmbedCols(a, start) => {
                    let w = self.shape(a).1;
                    let ga = self.slice_cols(g, start, start + w);
                    acc(a, ga, &mut grads);
                }
                Op::Reshape(a) => {
                    let (r, c) = self.shape(a);
                    let ga = self.reshape(g, r, c);
                    acc(a, ga, &mut grads);
                }
            }
        }

        wrt.iter()
            .map(|w| match grads.get(w.0).copied().flatten() {
                Some(g) => g,
                None => self.zeros_like(*w),
            })
            .collect()
    }

    /// Gradient values only; convenience for first-order training steps.
    pub fn grad_values(&self, output: Var, wrt: &[Var]) -> Vec<Matrix<T>> {
        self.grad(output, wrt)
            .into_iter()
            .map(|g| (*self.value(g)).clone())
            .collect()
    }
}

fn parents(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::MatMul { a, b, .. }
        | Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::AddRow(a, b)
        | Op::MulRow(a, b)
        | Op::MulCol(a, b) => vec![*a, *b],
        Op::Scale(a, _)
        | Op::AddScalar(a)
        | Op::Tanh(a)
        | Op::Exp(a)
        | Op::Log(a)
        | Op::Sqrt(a)
        | Op::Square(a)
        | Op::Recip(a)
        | Op::SumAll(a)
        | Op::SumRows(a)
        | Op::SumCols(a)
        | Op::BroadcastRow(a)
        | Op::BroadcastCol(a)
        | Op::BroadcastScalar(a)
        | Op::SliceCols(a, _)
        | Op::EmbedCols(a, _)
        | Op::Reshape(a) => vec![*a],
        Op::ConcatCols(parts) => parts.clone(),
    }
}
