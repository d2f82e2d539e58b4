//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node to the [`Graph`]; a node's inputs always
//! have smaller ids, so creation order is a topological order and
//! [`Graph::backward`] walks the tape once in reverse. Trainable leaves are
//! registered with [`Graph::param`] and receive gradients; constants and data
//! go through [`Graph::constant`].
//!
//! ReLU uses the subgradient 0 at exactly 0. The graph records the smallest
//! |input| seen by any ReLU so gradient checks can steer clear of the kink.

mod backward;
mod check;
mod lstm;

pub use check::{compare_gradients, finite_diff_grad, GradEntry, GradReport};

use std::fmt;

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::{self, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Operation tag, used for error messages and fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale,
    Relu,
    Sigmoid,
    Tanh,
    MatMul,
    Reshape,
    Sum,
    Conv1dCausal,
    Conv1dAnticausal,
    Depthwise,
    Pointwise,
    BiasAdd,
    ChannelScale,
    AvgPoolTime,
    Concat,
    Slice,
    ReverseTime,
    Dropout,
    Dense,
    LstmScan,
    CrossEntropy,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::MatMul => "matmul",
            OpKind::Reshape => "reshape",
            OpKind::Sum => "sum",
            OpKind::Conv1dCausal => "conv1d_causal",
            OpKind::Conv1dAnticausal => "conv1d_anticausal",
            OpKind::Depthwise => "depthwise_conv1d",
            OpKind::Pointwise => "pointwise_conv1d",
            OpKind::BiasAdd => "bias_add",
            OpKind::ChannelScale => "channel_scale",
            OpKind::AvgPoolTime => "avg_pool_time",
            OpKind::Concat => "concat_channels",
            OpKind::Slice => "slice_channels",
            OpKind::ReverseTime => "reverse_time",
            OpKind::Dropout => "dropout",
            OpKind::Dense => "dense",
            OpKind::LstmScan => "lstm_scan",
            OpKind::CrossEntropy => "cross_entropy",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    MatMul(Var, Var),
    Reshape(Var),
    Sum(Var),
    Conv1d { x: Var, w: Var, b: Var, dilation: usize, anticausal: bool },
    Depthwise { x: Var, k: Var, dilation: usize },
    Pointwise { x: Var, k: Var },
    BiasAdd { x: Var, b: Var },
    ChannelScale { x: Var, s: Var },
    AvgPoolTime(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    ReverseTime(Var),
    Dropout { x: Var, mask: Vec<f64> },
    Dense { x: Var, w: Var, b: Var },
    LstmScan(Box<lstm::LstmScan>),
    CrossEntropy { logits: Var, label: usize, probs: Vec<f64> },
}

impl Op {
    pub(crate) fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Relu(_) => OpKind::Relu,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Tanh(_) => OpKind::Tanh,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Reshape(_) => OpKind::Reshape,
            Op::Sum(_) => OpKind::Sum,
            Op::Conv1d { anticausal: false, .. } => OpKind::Conv1dCausal,
            Op::Conv1d { anticausal: true, .. } => OpKind::Conv1dAnticausal,
            Op::Depthwise { .. } => OpKind::Depthwise,
            Op::Pointwise { .. } => OpKind::Pointwise,
            Op::BiasAdd { .. } => OpKind::BiasAdd,
            Op::ChannelScale { .. } => OpKind::ChannelScale,
            Op::AvgPoolTime(_) => OpKind::AvgPoolTime,
            Op::Concat(_) => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::ReverseTime(_) => OpKind::ReverseTime,
            Op::Dropout { .. } => OpKind::Dropout,
            Op::Dense { .. } => OpKind::Dense,
            Op::LstmScan(_) => OpKind::LstmScan,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
        }
    }

    pub(crate) fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Reshape(a)
            | Op::Sum(a)
            | Op::AvgPoolTime(a)
            | Op::ReverseTime(a) => vec![*a],
            Op::Conv1d { x, w, b, .. } | Op::Dense { x, w, b } => vec![*x, *w, *b],
            Op::Depthwise { x, k, .. } | Op::Pointwise { x, k } => vec![*x, *k],
            Op::BiasAdd { x, b } => vec![*x, *b],
            Op::ChannelScale { x, s } => vec![*x, *s],
            Op::Concat(parts) => parts.clone(),
            Op::Dropout { x, .. } | Op::Slice { x, .. } => vec![*x],
            Op::LstmScan(scan) => vec![scan.x, scan.w_ih, scan.w_hh, scan.b],
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) value: Tensor,
    scope: usize,
}

/// Gradients of a scalar loss with respect to every trainable leaf, in
/// registration order. Leaves the loss does not reach get zeros.
#[derive(Clone, Debug)]
pub struct Gradients {
    entries: Vec<(Var, Tensor)>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.entries.iter().find(|(v, _)| *v == var).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = &(Var, Tensor)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Gradient tensors in parameter registration order.
    pub fn into_tensors(self) -> Vec<Tensor> {
        self.entries.into_iter().map(|(_, t)| t).collect()
    }
}

pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<Var>,
    scopes: Vec<String>,
    current_scope: usize,
    min_relu_margin: f64,
    fault: Option<OpKind>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            scopes: vec![String::new()],
            current_scope: 0,
            min_relu_margin: f64::INFINITY,
            fault: None,
        }
    }

    /// Testing hook: corrupts the backward rule of every `kind` node (the
    /// propagated gradient is scaled by 1.5). Used to prove that gradient
    /// checks catch a wrong derivative.
    pub fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    /// Labels subsequently created nodes; the label shows up in
    /// non-finite-value errors.
    pub fn set_scope(&mut self, scope: &str) {
        self.current_scope = match self.scopes.iter().position(|s| s == scope) {
            Some(i) => i,
            None => {
                self.scopes.push(scope.to_string());
                self.scopes.len() - 1
            }
        };
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Trainable leaves in registration order.
    pub fn params(&self) -> &[Var] {
        &self.params
    }

    /// Smallest |input| seen by any ReLU so far (infinity if none).
    pub fn min_relu_margin(&self) -> f64 {
        self.min_relu_margin
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        let v = self.push_unchecked(Op::Leaf, value);
        self.params.push(v);
        v
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_unchecked(Op::Leaf, value)
    }

    fn push_unchecked(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node {
            op,
            value,
            scope: self.current_scope,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                op: op.kind().name(),
                scope: self.scopes[self.current_scope].clone(),
            });
        }
        Ok(self.push_unchecked(op, value))
    }

    pub(crate) fn scope_of(&self, v: Var) -> &str {
        &self.scopes[self.nodes[v.0].scope]
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).add(self.value(b))?;
        self.push(Op::Add(a, b), value)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).sub(self.value(b))?;
        self.push(Op::Sub(a, b), value)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).mul(self.value(b))?;
        self.push(Op::Mul(a, b), value)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let value = self.value(a).scale(factor);
        self.push(Op::Scale(a, factor), value)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let margin = x.data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        let value = x.relu();
        self.min_relu_margin = self.min_relu_margin.min(margin);
        self.push(Op::Relu(a), value)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).sigmoid();
        self.push(Op::Sigmoid(a), value)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).tanh();
        self.push(Op::Tanh(a), value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = tensor::matmul(self.value(a), self.value(b))?;
        self.push(Op::MatMul(a, b), value)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        self.push(Op::Reshape(a), value)
    }

    /// Sum of all elements, as a scalar (shape `[]`).
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum(a), value)
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, dilation: usize, anticausal: bool) -> Result<Var> {
        let value = tensor::conv1d_forward(self.value(x), self.value(w), self.value(b), dilation, anticausal)?;
        self.push(Op::Conv1d { x, w, b, dilation, anticausal }, value)
    }

    pub fn depthwise(&mut self, x: Var, k: Var, dilation: usize) -> Result<Var> {
        let value = tensor::depthwise_conv1d(self.value(x), self.value(k), dilation)?;
        self.push(Op::Depthwise { x, k, dilation }, value)
    }

    pub fn pointwise(&mut self, x: Var, k: Var) -> Result<Var> {
        let value = tensor::pointwise_conv1d(self.value(x), self.value(k))?;
        self.push(Op::Pointwise { x, k }, value)
    }

    /// Adds a per-channel bias `[C]` to a `[C, T]` sequence.
    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var> {
        let value = self.channel_broadcast("bias_add", x, b, |v, s| v + s)?;
        self.push(Op::BiasAdd { x, b }, value)
    }

    /// Multiplies channel `c` of a `[C, T]` sequence by `s[c]`.
    pub fn channel_scale(&mut self, x: Var, s: Var) -> Result<Var> {
        let value = self.channel_broadcast("channel_scale", x, s, |v, s| v * s)?;
        self.push(Op::ChannelScale { x, s }, value)
    }

    fn channel_broadcast(&self, op: &'static str, x: Var, s: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let xv = self.value(x);
        let sv = self.value(s);
        let (c, t) = tensor::dims2(op, xv)?;
        if sv.shape() != [c] {
            return Err(Error::shape(op, xv.shape(), sv.shape()));
        }
        let mut data = xv.data().to_vec();
        if t > 0 {
            for (row, &sc) in data.chunks_exact_mut(t).zip(sv.data()) {
                row.iter_mut().for_each(|v| *v = f(*v, sc));
            }
        }
        Tensor::new(vec![c, t], data)
    }

    pub fn avg_pool_time(&mut self, x: Var) -> Result<Var> {
        let value = tensor::avg_pool_time(self.value(x))?;
        self.push(Op::AvgPoolTime(x), value)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = tensor::concat_channels(&values)?;
        self.push(Op::Concat(parts.to_vec()), value)
    }

    /// Channels `start..start + len` along the leading axis.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() == 0 || start + len > xv.dim(0) {
            return Err(Error::invalid(
                "slice_channels",
                format!("range {start}..{} outside shape {:?}", start + len, xv.shape()),
            ));
        }
        let inner: usize = xv.shape()[1..].iter().product();
        let mut shape = xv.shape().to_vec();
        shape[0] = len;
        let value = Tensor::new(shape, xv.data()[start * inner..(start + len) * inner].to_vec())?;
        self.push(Op::Slice { x, start }, value)
    }

    pub fn reverse_time(&mut self, x: Var) -> Result<Var> {
        let value = tensor::reverse_time(self.value(x))?;
        self.push(Op::ReverseTime(x), value)
    }

    /// Inverted dropout. With `rng == None` (evaluation) this is the identity.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: Option<&mut RngState>) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid("dropout", format!("rate must be in [0, 1), got {rate}")));
        }
        let n = self.value(x).numel();
        let mask = match rng {
            Some(rng) if rate > 0.0 => {
                let keep = 1.0 / (1.0 - rate);
                (0..n).map(|_| if rng.uniform() < rate { 0.0 } else { keep }).collect()
            }
            _ => vec![1.0; n],
        };
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.push(Op::Dropout { x, mask }, value)
    }

    /// Affine map of a vector: `w[C_out, C_in] * x[C_in] + b[C_out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        match (xv.shape(), wv.shape(), bv.shape()) {
            ([ci], [co, wi], [bo]) if ci == wi && co == bo => {}
            _ => return Err(Error::shape("dense", wv.shape(), xv.shape())),
        }
        let (co, ci) = (wv.dim(0), wv.dim(1));
        let mut out = bv.data().to_vec();
        for (o, y) in out.iter_mut().enumerate() {
            *y += wv.data()[o * ci..(o + 1) * ci].iter().zip(xv.data()).map(|(a, b)| a * b).sum::<f64>();
        }
        let value = Tensor::new(vec![co], out)?;
        self.push(Op::Dense { x, w, b }, value)
    }

    /// Full LSTM pass over a `[C, T]` sequence with zero initial state,
    /// returning the hidden states `[H, T]`. Gate rows of `w_ih [4H, C]`,
    /// `w_hh [4H, H]` and `b [4H]` are ordered input, forget, candidate,
    /// output. With `reverse` the scan runs from `t = T-1` down to 0 and the
    /// output at `t` is the state after consuming `x[t..]`.
    pub fn lstm_scan(&mut self, x: Var, w_ih: Var, w_hh: Var, b: Var, reverse: bool) -> Result<Var> {
        let (scan, value) = lstm::LstmScan::forward(
            x,
            w_ih,
            w_hh,
            b,
            reverse,
            self.value(x),
            self.value(w_ih),
            self.value(w_hh),
            self.value(b),
        )?;
        self.push(Op::LstmScan(Box::new(scan)), value)
    }

    /// Softmax cross-entropy of a single logit vector against `label`,
    /// computed through the max-shifted log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rank() != 1 {
            return Err(Error::invalid("cross_entropy", format!("expected [K] logits, got {:?}", lv.shape())));
        }
        if label >= lv.numel() {
            return Err(Error::invalid(
                "cross_entropy",
                format!("label {label} out of range for {} classes", lv.numel()),
            ));
        }
        let d = lv.data();
        let max = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + d.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - d[label];
        let probs = tensor::softmax_slice(d);
        self.push(Op::CrossEntropy { logits, label, probs }, Tensor::scalar(loss))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        backward::run(self, loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grad_of_sum_is_ones() {
        let mut g = Graph::new();
        let th = g.param(Tensor::vector(&[0.3, -1.0, 2.0]));
        let l = g.sum(th).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(th).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut g = Graph::new();
        let th = g.param(Tensor::vector(&[1.0, 2.0]));
        let sq = g.mul(th, th).unwrap();
        let l = g.sum(sq).unwrap();
        assert_eq!(g.backward(l).unwrap().get(th).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn unreachable_param_gets_zeros() {
        let mut g = Graph::new();
        let th = g.param(Tensor::vector(&[1.0, 2.0]));
        let other = g.param(Tensor::vector(&[5.0]));
        let l = g.sum(other).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(th).unwrap().data(), &[0.0, 0.0]);
        assert_eq!(grads.len(), 2);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let th = g.param(Tensor::vector(&[1.0, 2.0]));
        assert!(g.backward(th).is_err());
    }

    #[test]
    fn concat_routes_slices_back() {
        let mut g = Graph::new();
        let a = g.param(Tensor::vector(&[1.0, 2.0]));
        let b = g.param(Tensor::vector(&[3.0, 4.0, 5.0]));
        let c = g.concat(&[a, b]).unwrap();
        let w = g.constant(Tensor::vector(&[0.0, 0.0, 1.0, 2.0, 3.0]));
        let p = g.mul(c, w).unwrap();
        let l = g.sum(p).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[0.0, 0.0]);
        assert_eq!(grads.get(b).unwrap().data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn eval_dropout_backward_is_identity() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(&[1.0, -2.0, 3.0]));
        let d = g.dropout(x, 0.2, None).unwrap();
        assert_eq!(g.value(d), g.value(x));
        let l = g.sum(d).unwrap();
        assert_eq!(g.backward(l).unwrap().get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(&[0.0, 1.0, -1.0]));
        let r = g.relu(x).unwrap();
        let l = g.sum(r).unwrap();
        assert_eq!(g.backward(l).unwrap().get(x).unwrap().data(), &[0.0, 1.0, 0.0]);
        assert_eq!(g.min_relu_margin(), 0.0);
    }

    #[test]
    fn non_finite_forward_names_op_and_scope() {
        let mut g = Graph::new();
        g.set_scope("stream_b.se");
        let x = g.constant(Tensor::vector(&[1e308]));
        let err = g.scale(x, 10.0).unwrap_err().to_string();
        assert!(err.contains("scale") && err.contains("stream_b.se"), "{err}");
    }

    #[test]
    fn overflow_in_backward_names_op() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(&[1e-200]));
        let a = g.scale(x, 1e200).unwrap();
        let b = g.scale(a, 1e200).unwrap();
        let l = g.sum(b).unwrap();
        let err = g.backward(l).unwrap_err().to_string();
        assert!(err.contains("scale"), "{err}");
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let mut g = Graph::new();
        let z = g.param(Tensor::zeros(&[52]));
        let l = g.cross_entropy(z, 3).unwrap();
        assert!((g.value(l).data()[0] - 52f64.ln()).abs() < 1e-12);
        assert!(g.cross_entropy(z, 52).is_err());
    }
}
