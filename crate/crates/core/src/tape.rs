//! Define-by-run reverse-mode autodiff tape.
//!
//! Every forward op appends one node; nodes are therefore already in
//! topological order and the backward pass is a single reverse scan that
//! visits each node exactly once. The tape is rebuilt per training step,
//! so unroll lengths can vary freely.
//!
//! Broadcasting is deliberately restricted to scalar-with-tensor and
//! exact-shape; anything else is a shape error naming both shapes.

use std::collections::BTreeMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

// Some payloads (the stop-gradient source, scalar constants) are only used
// by the forward pass but kept for introspection in Debug output.
#[allow(dead_code)]
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    StopGradient(NodeId),
    /// (m,k)x(k,n) -> (m,n), or (m,k)x(k) -> (m).
    Matmul(NodeId, NodeId),
    Dot(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Neg(NodeId),
    Recip(NodeId),
    Square(NodeId),
    Exp(NodeId),
    Softplus(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    AddScalar(NodeId, f64),
    MulScalar(NodeId, f64),
    Sum(NodeId),
    Concat(Vec<NodeId>),
    Select(NodeId, usize),
    LogSoftmax(NodeId),
    /// out[i] = input[indices[i]]; backward is scatter-add.
    Gather(NodeId, Rc<Vec<usize>>),
    /// Tile a vector [f] into a matrix [rows, f].
    RepeatRows(NodeId, usize),
    Reshape(NodeId),
}

struct Node<S> {
    op: Op,
    value: Tensor<S>,
}

pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Vec<S>>>,
    /// When set, any op producing NaN/Inf returns an error immediately.
    check_finite: bool,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            // Tests (debug builds) always check; training opts in via config.
            check_finite: cfg!(debug_assertions),
        }
    }

    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register a leaf (input or parameter). Gradients accumulate into it.
    pub fn leaf(&mut self, value: Tensor<S>) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// Alias of `leaf` used where the value is semantically a constant.
    pub fn constant(&mut self, value: Tensor<S>) -> NodeId {
        self.leaf(value)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.leaf(Tensor::scalar(S::from_f64(v)))
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor<S>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        self.grads.push(None);
        id
    }

    fn push_checked(&mut self, op_name: &'static str, op: Op, value: Tensor<S>) -> Result<NodeId> {
        debug_assert!(
            value.all_finite(),
            "non-finite forward value out of {op_name}"
        );
        if self.check_finite && !value.all_finite() {
            return Err(Error::NonFinite(op_name.to_string()));
        }
        Ok(self.push(op, value))
    }

    // ---- forward ops -------------------------------------------------

    pub fn stop_gradient(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).clone();
        self.push(Op::StopGradient(x), value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: av.shape().to_vec(),
            rhs: bv.shape().to_vec(),
        };
        let value = match (av.shape(), bv.shape()) {
            (&[m, k], &[k2, n]) => {
                if k != k2 {
                    return Err(mismatch());
                }
                let mut out = vec![S::zero(); m * n];
                matmul_raw(av.data(), bv.data(), m, k, n, &mut out);
                Tensor::new(vec![m, n], out)?
            }
            (&[m, k], &[k2]) => {
                if k != k2 {
                    return Err(mismatch());
                }
                let mut out = vec![S::zero(); m];
                matmul_raw(av.data(), bv.data(), m, k, 1, &mut out);
                Tensor::vector(out)
            }
            _ => return Err(mismatch()),
        };
        self.push_checked("matmul", Op::Matmul(a, b), value)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 1 || av.shape() != bv.shape() {
            return Err(Error::ShapeMismatch {
                op: "dot",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut acc = S::zero();
        for (x, y) in av.data().iter().zip(bv.data()) {
            acc = acc + *x * *y;
        }
        self.push_checked("dot", Op::Dot(a, b), Tensor::scalar(acc))
    }

    fn binary(
        &mut self,
        op_name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(S, S) -> S,
        op: Op,
    ) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let value = if av.shape() == bv.shape() {
            let data = av
                .data()
                .iter()
                .zip(bv.data())
                .map(|(&x, &y)| f(x, y))
                .collect();
            Tensor::new(av.shape().to_vec(), data)?
        } else if av.is_scalar() {
            let s = av.data()[0];
            let data = bv.data().iter().map(|&y| f(s, y)).collect();
            Tensor::new(bv.shape().to_vec(), data)?
        } else if bv.is_scalar() {
            let s = bv.data()[0];
            let data = av.data().iter().map(|&x| f(x, s)).collect();
            Tensor::new(av.shape().to_vec(), data)?
        } else {
            return Err(Error::ShapeMismatch {
                op: op_name,
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        };
        self.push_checked(op_name, op, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(
        &mut self,
        op_name: &'static str,
        x: NodeId,
        f: impl Fn(S) -> S,
        op: Op,
    ) -> Result<NodeId> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.push_checked(op_name, op, value)
    }

    pub fn neg(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("neg", x, |v| -v, Op::Neg(x))
    }

    pub fn recip(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("recip", x, |v| S::one() / v, Op::Recip(x))
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("square", x, |v| v * v, Op::Square(x))
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("exp", x, |v| v.exp(), Op::Exp(x))
    }

    pub fn softplus(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("softplus", x, softplus_stable, Op::Softplus(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("sigmoid", x, sigmoid_stable, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("tanh", x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(
            "relu",
            x,
            |v| if v > S::zero() { v } else { S::zero() },
            Op::Relu(x),
        )
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let cs = S::from_f64(c);
        self.unary("add_scalar", x, |v| v + cs, Op::AddScalar(x, c))
    }

    pub fn mul_scalar(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let cs = S::from_f64(c);
        self.unary("mul_scalar", x, |v| v * cs, Op::MulScalar(x, c))
    }

    /// Full reduction to a scalar.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let mut acc = S::zero();
        for &v in self.value(x).data() {
            acc = acc + v;
        }
        self.push_checked("sum", Op::Sum(x), Tensor::scalar(acc))
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::contract("mean of empty tensor"));
        }
        let s = self.sum(x)?;
        self.mul_scalar(s, 1.0 / n as f64)
    }

    /// Concatenate rank-1 tensors into one vector.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::contract("concat of zero tensors"));
        }
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.rank() > 1 {
                return Err(Error::contract(format!(
                    "concat expects vectors, got shape {:?}",
                    v.shape()
                )));
            }
            data.extend_from_slice(v.data());
        }
        self.push_checked(
            "concat",
            Op::Concat(parts.to_vec()),
            Tensor::vector(data),
        )
    }

    /// Scalar element of a vector.
    pub fn select(&mut self, x: NodeId, index: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if index >= xv.len() {
            return Err(Error::IndexOutOfRange {
                index,
                len: xv.len(),
            });
        }
        let v = xv.data()[index];
        self.push_checked("select", Op::Select(x, index), Tensor::scalar(v))
    }

    pub fn log_softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rank() != 1 || xv.is_empty() {
            return Err(Error::contract(format!(
                "log_softmax expects a nonempty vector, got shape {:?}",
                xv.shape()
            )));
        }
        let data = log_softmax_raw(xv.data());
        self.push_checked("log_softmax", Op::LogSoftmax(x), Tensor::vector(data))
    }

    /// out[i] = x.data[indices[i]] over the flattened input.
    pub fn gather(&mut self, x: NodeId, indices: Rc<Vec<usize>>) -> Result<NodeId> {
        let xv = self.value(x);
        let mut data = Vec::with_capacity(indices.len());
        for &i in indices.iter() {
            if i >= xv.len() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: xv.len(),
                });
            }
            data.push(xv.data()[i]);
        }
        self.push_checked("gather", Op::Gather(x, indices), Tensor::vector(data))
    }

    /// Tile a vector [f] into a matrix [rows, f].
    pub fn repeat_rows(&mut self, x: NodeId, rows: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rank() != 1 {
            return Err(Error::contract(format!(
                "repeat_rows expects a vector, got shape {:?}",
                xv.shape()
            )));
        }
        let f = xv.len();
        let mut data = Vec::with_capacity(rows * f);
        for _ in 0..rows {
            data.extend_from_slice(xv.data());
        }
        self.push_checked(
            "repeat_rows",
            Op::RepeatRows(x, rows),
            Tensor::new(vec![rows, f], data)?,
        )
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let xv = self.value(x);
        if shape.iter().product::<usize>() != xv.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: xv.shape().to_vec(),
                rhs: shape,
            });
        }
        let value = Tensor::new(shape, xv.data().to_vec())?;
        Ok(self.push(Op::Reshape(x), value))
    }

    /// -log softmax(logits)[target]. Gradient is softmax(logits) - onehot.
    pub fn softmax_xent(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        let ls = self.log_softmax(logits)?;
        let picked = self.select(ls, target)?;
        self.neg(picked)
    }

    /// Entropy of softmax(logits).
    pub fn entropy(&mut self, logits: NodeId) -> Result<NodeId> {
        let ls = self.log_softmax(logits)?;
        let p = self.exp(ls)?;
        let plogp = self.dot(p, ls)?;
        self.neg(plogp)
    }

    // ---- backward ----------------------------------------------------

    /// Reverse-mode sweep from a scalar loss. Gradients of all reachable
    /// nodes are left on the tape; query them with `grad`.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[loss.0] = Some(vec![S::one()]);

        for i in (0..self.nodes.len()).rev() {
            let g = match self.grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            // Put it back so callers can read gradients of interior nodes.
            self.grads[i] = Some(g.clone());
            let op = self.nodes[i].op.clone();
            self.propagate(i, &op, &g);
        }
        Ok(())
    }

    fn accum(&mut self, id: NodeId, delta: impl Iterator<Item = S>) {
        let n = self.nodes[id.0].value.len();
        let slot = self.grads[id.0].get_or_insert_with(|| vec![S::zero(); n]);
        for (acc, d) in slot.iter_mut().zip(delta) {
            *acc = *acc + d;
        }
    }

    /// Accumulate `delta` into `id`, reducing to a scalar if `id` is scalar
    /// but the incoming gradient is not (the broadcast case).
    fn accum_broadcast(&mut self, id: NodeId, delta: &[S]) {
        if self.nodes[id.0].value.is_scalar() && delta.len() > 1 {
            let mut acc = S::zero();
            for &d in delta {
                acc = acc + d;
            }
            self.accum(id, std::iter::once(acc));
        } else {
            self.accum(id, delta.iter().copied());
        }
    }

    fn propagate(&mut self, out_idx: usize, op: &Op, g: &[S]) {
        match op {
            Op::Leaf | Op::StopGradient(_) => {}
            Op::Matmul(a, b) => {
                let av = self.nodes[a.0].value.clone();
                let bv = self.nodes[b.0].value.clone();
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = if bv.rank() == 2 { bv.shape()[1] } else { 1 };
                // dA = G . B^T
                let mut da = vec![S::zero(); m * k];
                for i in 0..m {
                    for j in 0..n {
                        let gij = g[i * n + j];
                        for p in 0..k {
                            da[i * k + p] = da[i * k + p] + gij * bv.data()[p * n + j];
                        }
                    }
                }
                self.accum(*a, da.into_iter());
                // dB = A^T . G
                let mut db = vec![S::zero(); k * n];
                for i in 0..m {
                    for p in 0..k {
                        let aip = av.data()[i * k + p];
                        for j in 0..n {
                            db[p * n + j] = db[p * n + j] + aip * g[i * n + j];
                        }
                    }
                }
                self.accum(*b, db.into_iter());
            }
            Op::Dot(a, b) => {
                let gs = g[0];
                let bv: Vec<S> = self.nodes[b.0].value.data().to_vec();
                let av: Vec<S> = self.nodes[a.0].value.data().to_vec();
                self.accum(*a, bv.into_iter().map(|v| v * gs));
                self.accum(*b, av.into_iter().map(|v| v * gs));
            }
            Op::Add(a, b) => {
                self.accum_broadcast(*a, g);
                self.accum_broadcast(*b, g);
            }
            Op::Sub(a, b) => {
                self.accum_broadcast(*a, g);
                let neg: Vec<S> = g.iter().map(|&v| -v).collect();
                self.accum_broadcast(*b, &neg);
            }
            Op::Mul(a, b) => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let da: Vec<S> = mul_grad(g, bv.data());
                let db: Vec<S> = mul_grad(g, av.data());
                self.accum_broadcast(*a, &da);
                self.accum_broadcast(*b, &db);
            }
            Op::Neg(x) => self.accum(*x, g.iter().map(|&v| -v)),
            Op::Recip(x) => {
                let yv: Vec<S> = self.nodes[out_idx].value.data().to_vec();
                self.accum(
                    *x,
                    g.iter().zip(yv).map(|(&gv, y)| -gv * y * y),
                );
            }
            Op::Square(x) => {
                let xv: Vec<S> = self.nodes[x.0].value.data().to_vec();
                let two = S::from_f64(2.0);
                self.accum(*x, g.iter().zip(xv).map(|(&gv, v)| two * gv * v));
            }
            Op::Exp(x) => {
                let yv: Vec<S> = self.nodes[out_idx].value.data().to_vec();
                self.accum(*x, g.iter().zip(yv).map(|(&gv, y)| gv * y));
            }
            Op::Softplus(x) => {
                let xv: Vec<S> = self.nodes[x.0].value.data().to_vec();
                self.accum(
                    *x,
                    g.iter().zip(xv).map(|(&gv, v)| gv * sigmoid_stable(v)),
                );
            }
            Op::Sigmoid(x) => {
                let yv: Vec<S> = self.nodes[out_idx].value.data().to_vec();
                self.accum(
                    *x,
                    g.iter().zip(yv).map(|(&gv, y)| gv * y * (S::one() - y)),
                );
            }
            Op::Tanh(x) => {
                let yv: Vec<S> = self.nodes[out_idx].value.data().to_vec();
                self.accum(
                    *x,
                    g.iter().zip(yv).map(|(&gv, y)| gv * (S::one() - y * y)),
                );
            }
            Op::Relu(x) => {
                let xv: Vec<S> = self.nodes[x.0].value.data().to_vec();
                self.accum(
                    *x,
                    g.iter().zip(xv).map(
                        |(&gv, v)| {
                            if v > S::zero() {
                                gv
                            } else {
                                S::zero()
                            }
                        },
                    ),
                );
            }
            Op::AddScalar(x, _) => self.accum(*x, g.iter().copied()),
            Op::MulScalar(x, c) => {
                let cs = S::from_f64(*c);
                self.accum(*x, g.iter().map(|&v| v * cs));
            }
            Op::Sum(x) => {
                let n = self.nodes[x.0].value.len();
                let gs = g[0];
                self.accum(*x, std::iter::repeat(gs).take(n));
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.nodes[p.0].value.len();
                    let slice: Vec<S> = g[offset..offset + n].to_vec();
                    self.accum(p, slice.into_iter());
                    offset += n;
                }
            }
            Op::Select(x, index) => {
                let n = self.nodes[x.0].value.len();
                let gs = g[0];
                let idx = *index;
                self.accum(
                    *x,
                    (0..n).map(|i| if i == idx { gs } else { S::zero() }),
                );
            }
            Op::LogSoftmax(x) => {
                // dx = g - softmax(x) * sum(g)
                let yv: Vec<S> = self.nodes[out_idx].value.data().to_vec();
                let mut gsum = S::zero();
                for &v in g {
                    gsum = gsum + v;
                }
                self.accum(
                    *x,
                    g.iter().zip(yv).map(move |(&gv, ly)| gv - ly.exp() * gsum),
                );
            }
            Op::Gather(x, indices) => {
                let n = self.nodes[x.0].value.len();
                let mut dx = vec![S::zero(); n];
                for (&gi, &i) in g.iter().zip(indices.iter()) {
                    dx[i] = dx[i] + gi;
                }
                self.accum(*x, dx.into_iter());
            }
            Op::RepeatRows(x, rows) => {
                let f = self.nodes[x.0].value.len();
                let mut dx = vec![S::zero(); f];
                for r in 0..*rows {
                    for j in 0..f {
                        dx[j] = dx[j] + g[r * f + j];
                    }
                }
                self.accum(*x, dx.into_iter());
            }
            Op::Reshape(x) => self.accum(*x, g.iter().copied()),
        }
    }

    /// True when the node is a graph source (no parents): a registered leaf
    /// or a constant. Gradients accumulate into leaves but never flow past
    /// them.
    pub fn is_leaf(&self, id: NodeId) -> bool {
        matches!(self.nodes[id.0].op, Op::Leaf)
    }

    /// Gradient of a node, if any reached it during the last backward.
    pub fn grad(&self, id: NodeId) -> Option<Tensor<S>> {
        self.grads[id.0].as_ref().map(|g| {
            Tensor::new(self.nodes[id.0].value.shape().to_vec(), g.clone())
                .expect("gradient shape tracks value shape")
        })
    }

    /// Gradient of a node; zeros when unreachable from the loss.
    pub fn grad_or_zeros(&self, id: NodeId) -> Tensor<S> {
        self.grad(id)
            .unwrap_or_else(|| Tensor::zeros(self.nodes[id.0].value.shape().to_vec()))
    }

    /// Collect gradients for named leaves after `backward`. Unreachable
    /// parameters map to zero tensors.
    pub fn gradient_map(&self, bindings: &BTreeMap<String, NodeId>) -> BTreeMap<String, Tensor<S>> {
        bindings
            .iter()
            .map(|(name, &id)| (name.clone(), self.grad_or_zeros(id)))
            .collect()
    }
}

fn matmul_raw<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, out: &mut [S]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    }
}

fn mul_grad<S: Scalar>(g: &[S], other: &[S]) -> Vec<S> {
    if other.len() == 1 {
        let o = other[0];
        g.iter().map(|&gv| gv * o).collect()
    } else if g.len() == other.len() {
        g.iter().zip(other).map(|(&gv, &ov)| gv * ov).collect()
    } else {
        // g matches the broadcast output; other is the full-size side and g
        // cannot be shorter than it under the allowed broadcasting rules.
        unreachable!("mul gradient shape invariant violated")
    }
}

fn sigmoid_stable<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

fn softplus_stable<S: Scalar>(x: S) -> S {
    // ln(1 + e^x) = max(x, 0) + ln(1 + e^{-|x|})
    let zero = S::zero();
    let m = if x > zero { x } else { zero };
    m + (-x.abs()).exp().ln_1p()
}

fn log_softmax_raw<S: Scalar>(x: &[S]) -> Vec<S> {
    let mut mx = x[0];
    for &v in x {
        if v > mx {
            mx = v;
        }
    }
    let mut sum = S::zero();
    for &v in x {
        sum = sum + (v - mx).exp();
    }
    let lse = mx + sum.ln();
    x.iter().map(|&v| v - lse).collect()
}
