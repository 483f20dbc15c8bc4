//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every operation appends a node holding its forward value and enough
//! bookkeeping to push gradients back to its parents. Nodes are appended in
//! evaluation order, so walking the tape backwards is a valid reverse
//! topological traversal. `backward` never mutates the tape: calling it twice
//! yields identical gradients.

use std::fmt;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A fused operation with a hand-written backward pass.
///
/// `backward` receives the parent values, the forward output and the
/// upstream gradient, and returns one optional gradient per parent (in the
/// order the parents were passed to [`Tape::custom`]).
pub trait CustomOp<T: Scalar>: Send + Sync {
    fn name(&self) -> &'static str;
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
    ) -> Vec<Option<Tensor<T>>>;
}

enum Op<T: Scalar> {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Concat(Var, Var),
    MaxRows { input: Var, argmax: Vec<usize> },
    MeanAll(Var),
    SumAll(Var),
    Custom(Box<dyn CustomOp<T>>, Vec<Var>),
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Recording of one forward evaluation.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.nodes.len()).finish()
    }
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::shape(op, format!("{:?} vs {:?}", a, b))
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf: gradients are accumulated for it.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Constant leaf: no gradient is ever computed for it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    fn matrix_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let s = self.value(v).shape();
        if s.len() != 2 {
            return Err(Error::shape(op, format!("expected a matrix, got {:?}", s)));
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (_, k) = self.matrix_dims("matmul", a)?;
        let (k2, _) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(shape_err("matmul", self.value(a).shape(), self.value(b).shape()));
        }
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, rg, Op::MatMul(a, b)))
    }

    /// `a (m x n) + row (1 x n)` broadcast over rows; covers bias addition.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims("add_row", a)?;
        let (r, n2) = self.matrix_dims("add_row", row)?;
        if r != 1 || n != n2 {
            return Err(shape_err("add_row", self.value(a).shape(), self.value(row).shape()));
        }
        let mut out = self.value(a).clone();
        let bias = self.value(row).data();
        for i in 0..m {
            for (o, b) in out.data_mut()[i * n..(i + 1) * n].iter_mut().zip(bias) {
                *o += *b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(out, rg, Op::AddRow(a, row)))
    }

    fn zip_same(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, rg, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let mut out = self.value(a).clone();
        out.scale_in_place(s);
        let rg = self.rg(a);
        self.push(out, rg, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for v in out.data_mut() {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
        let rg = self.rg(a);
        self.push(out, rg, Op::Relu(a))
    }

    /// Concatenate two matrices with equal row counts along the feature axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, na) = self.matrix_dims("concat", a)?;
        let (m2, nb) = self.matrix_dims("concat", b)?;
        if m != m2 {
            return Err(shape_err("concat", self.value(a).shape(), self.value(b).shape()));
        }
        let mut data = Vec::with_capacity(m * (na + nb));
        for i in 0..m {
            data.extend_from_slice(self.value(a).row(i));
            data.extend_from_slice(self.value(b).row(i));
        }
        let out = Tensor::matrix(m, na + nb, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, rg, Op::Concat(a, b)))
    }

    /// Column-wise maximum over the point (row) axis: `m x n -> 1 x n`.
    /// The first row wins ties; the winning rows are recorded for backward.
    pub fn max_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims("max_rows", a)?;
        if m == 0 {
            return Err(Error::shape("max_rows", "cannot pool over zero rows"));
        }
        let t = self.value(a);
        let mut best = t.row(0).to_vec();
        let mut argmax = vec![0usize; n];
        for i in 1..m {
            for (j, v) in t.row(i).iter().enumerate() {
                if *v > best[j] {
                    best[j] = *v;
                    argmax[j] = i;
                }
            }
        }
        let out = Tensor::matrix(1, n, best)?;
        let rg = self.rg(a);
        Ok(self.push(out, rg, Op::MaxRows { input: a, argmax }))
    }

    /// Rows chosen by the most recent `max_rows` producing `v`.
    pub fn argmax_of(&self, v: Var) -> Option<&[usize]> {
        match &self.nodes[v.0].op {
            Op::MaxRows { argmax, .. } => Some(argmax),
            _ => None,
        }
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.numel();
        let s: T = t.data().iter().copied().sum();
        let out = Tensor::scalar(s / T::lit(n as f64));
        let rg = self.rg(a);
        self.push(out, rg, Op::MeanAll(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), rg, Op::SumAll(a))
    }

    /// Record a fused operation whose forward value was computed by the caller.
    pub fn custom(&mut self, op: Box<dyn CustomOp<T>>, inputs: &[Var], output: Tensor<T>) -> Var {
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push(output, rg, Op::Custom(op, inputs.to_vec()))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(lv.shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.rg(*a) {
                    // dA = G * B^T
                    let buf = slot(grads, *a, ta.shape());
                    T::gemm(
                        m, n, k, T::one(), g.data(), n as isize, 1, tb.data(), 1, n as isize,
                        T::one(), buf.data_mut(), k as isize, 1,
                    );
                }
                if self.rg(*b) {
                    // dB = A^T * G
                    let buf = slot(grads, *b, tb.shape());
                    T::gemm(
                        k, m, n, T::one(), ta.data(), 1, k as isize, g.data(), n as isize, 1,
                        T::one(), buf.data_mut(), n as isize, 1,
                    );
                }
            }
            Op::AddRow(a, row) => {
                if self.rg(*a) {
                    slot(grads, *a, g.shape()).add_assign(g);
                }
                if self.rg(*row) {
                    let n = g.cols();
                    let buf = slot(grads, *row, &[1, n]);
                    for r in 0..g.rows() {
                        for (o, v) in buf.data_mut().iter_mut().zip(g.row(r)) {
                            *o += *v;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.rg(*v) {
                        slot(grads, *v, g.shape()).add_assign(g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    slot(grads, *a, g.shape()).add_assign(g);
                }
                if self.rg(*b) {
                    let buf = slot(grads, *b, g.shape());
                    for (o, v) in buf.data_mut().iter_mut().zip(g.data()) {
                        *o -= *v;
                    }
                }
            }
            Op::Scale(a, s) => {
                if self.rg(*a) {
                    let buf = slot(grads, *a, g.shape());
                    for (o, v) in buf.data_mut().iter_mut().zip(g.data()) {
                        *o += *v * *s;
                    }
                }
            }
            Op::Relu(a) => {
                if self.rg(*a) {
                    let input = self.value(*a);
                    let buf = slot(grads, *a, g.shape());
                    for ((o, v), x) in buf.data_mut().iter_mut().zip(g.data()).zip(input.data()) {
                        if *x > T::zero() {
                            *o += *v;
                        }
                    }
                }
            }
            Op::Concat(a, b) => {
                let na = self.value(*a).cols();
                let nb = self.value(*b).cols();
                let rows = g.rows();
                if self.rg(*a) {
                    let buf = slot(grads, *a, &[rows, na]);
                    for r in 0..rows {
                        for (o, v) in buf.data_mut()[r * na..(r + 1) * na].iter_mut().zip(&g.row(r)[..na]) {
                            *o += *v;
                        }
                    }
                }
                if self.rg(*b) {
                    let buf = slot(grads, *b, &[rows, nb]);
                    for r in 0..rows {
                        for (o, v) in buf.data_mut()[r * nb..(r + 1) * nb].iter_mut().zip(&g.row(r)[na..]) {
                            *o += *v;
                        }
                    }
                }
            }
            Op::MaxRows { input, argmax } => {
                if self.rg(*input) {
                    let shape = self.value(*input).shape().to_vec();
                    let n = shape[1];
                    let buf = slot(grads, *input, &shape);
                    for (j, &i) in argmax.iter().enumerate() {
                        buf.data_mut()[i * n + j] += g.data()[j];
                    }
                }
            }
            Op::MeanAll(a) | Op::SumAll(a) => {
                if self.rg(*a) {
                    let t = self.value(*a);
                    let mut v = g.item();
                    if matches!(node.op, Op::MeanAll(_)) {
                        v = v / T::lit(t.numel() as f64);
                    }
                    let buf = slot(grads, *a, t.shape());
                    for o in buf.data_mut() {
                        *o += v;
                    }
                }
            }
            Op::Custom(op, inputs) => {
                let vals: Vec<&Tensor<T>> = inputs.iter().map(|v| self.value(*v)).collect();
                let local = op.backward(&vals, &node.value, g);
                debug_assert_eq!(local.len(), inputs.len(), "{} gradient arity", op.name());
                for (v, lg) in inputs.iter().zip(local) {
                    if let Some(lg) = lg {
                        if self.rg(*v) {
                            slot(grads, *v, lg.shape()).add_assign(&lg);
                        }
                    }
                }
            }
        }
    }
}

fn slot<'a, T: Scalar>(
    grads: &'a mut [Option<Tensor<T>>],
    v: Var,
    shape: &[usize],
) -> &'a mut Tensor<T> {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
}

/// Result of a reverse sweep.
#[derive(Debug, Clone)]
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `v`, or `None` when `v` did not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, exactly zero when `v` did not take part.
    pub fn get_or_zero(&self, tape: &Tape<T>, v: Var) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn relu_clamps_negatives() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 3], &[-1.0, 0.0, 2.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn max_rows_records_argmax() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2, 2], &[1.0, 5.0, 3.0, 2.0]));
        let y = tape.max_rows(x).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 5.0]);
        assert_eq!(tape.argmax_of(y).unwrap(), &[1, 0]);
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn max_rows_first_index_wins_ties() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[3, 1], &[2.0, 2.0, 1.0]));
        let y = tape.max_rows(x).unwrap();
        assert_eq!(tape.argmax_of(y).unwrap(), &[0]);
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1, 4], &[0.3, -2.0, 7.0, 1.0]));
        let loss = tape.sum(x);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn dead_relu_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1, 1], &[-1.0]));
        let y = tape.relu(x);
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1, 2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn shape_errors_name_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::<f64>::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[4, 3]));
        let msg = tape.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 3]"), "{msg}");
        assert!(tape.concat(a, b).is_err());
        assert!(tape.add(a, b).is_err());
    }

    #[test]
    fn untouched_params_get_exact_zero() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1, 2], &[1.0, 2.0]));
        let unused = tape.param(t(&[1, 2], &[3.0, 4.0]));
        let loss = tape.sum(x);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.get_or_zero(&tape, unused).data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_twice_is_identical() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2, 2], &[1.0, -2.0, 0.5, 3.0]));
        let w = tape.param(t(&[2, 1], &[0.25, -1.5]));
        let h = tape.matmul(x, w).unwrap();
        let r = tape.relu(h);
        let loss = tape.mean(r);
        let g1 = tape.backward(loss).unwrap();
        let g2 = tape.backward(loss).unwrap();
        assert_eq!(g1.get(x), g2.get(x));
        assert_eq!(g1.get(w), g2.get(w));
    }
}
