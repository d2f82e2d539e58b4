//! Dense row-major `f64` tensors and the handful of sequence primitives the
//! network is built from.
//!
//! Sequences are stored channel-major: a `[C, T]` tensor keeps each channel's
//! time series contiguous, so pooling and per-channel statistics are linear
//! scans.

mod conv;

pub use conv::{
    conv1d_anticausal, conv1d_causal, depthwise_conv1d, pointwise_conv1d, Conv1dKernel,
};
pub(crate) use conv::{conv1d_backward, conv1d_forward, depthwise_backward};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Elementwise operation selector for [`elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Relu,
    Sigmoid,
    Tanh,
}

impl ElementwiseOp {
    pub fn is_binary(self) -> bool {
        matches!(self, ElementwiseOp::Add | ElementwiseOp::Sub | ElementwiseOp::Mul)
    }

    pub fn name(self) -> &'static str {
        match self {
            ElementwiseOp::Add => "add",
            ElementwiseOp::Sub => "sub",
            ElementwiseOp::Mul => "mul",
            ElementwiseOp::Relu => "relu",
            ElementwiseOp::Sigmoid => "sigmoid",
            ElementwiseOp::Tanh => "tanh",
        }
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::invalid(
                "tensor",
                format!(
                    "shape {shape:?} needs {expected} elements, got {}",
                    data.len()
                ),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// One-dimensional tensor from a slice.
    pub fn vector(values: &[f64]) -> Self {
        Self {
            shape: vec![values.len()],
            data: values.to_vec(),
        }
    }

    /// Two-dimensional tensor from nested rows. Panics on ragged input.
    pub fn matrix(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged matrix rows");
        Self {
            shape: vec![rows.len(), cols],
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Extent of axis `axis`. Panics when the axis does not exist.
    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Element `[i, j]` of a rank-2 tensor.
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    /// Sub-tensor at position `index` along the leading axis.
    pub fn index_axis0(&self, index: usize) -> Self {
        let inner: usize = self.shape[1..].iter().product();
        Self {
            shape: self.shape[1..].to_vec(),
            data: self.data[index * inner..(index + 1) * inner].to_vec(),
        }
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[Tensor]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return Err(Error::invalid("stack", "no tensors to stack"));
        };
        let mut data = Vec::with_capacity(first.numel() * parts.len());
        for p in parts {
            if p.shape != first.shape {
                return Err(Error::shape("stack", &first.shape, &p.shape));
            }
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Self { shape, data })
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        elementwise(ElementwiseOp::Add, self, Some(other))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        elementwise(ElementwiseOp::Sub, self, Some(other))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Self> {
        elementwise(ElementwiseOp::Mul, self, Some(other))
    }

    pub fn relu(&self) -> Self {
        self.map(relu)
    }

    pub fn sigmoid(&self) -> Self {
        self.map(sigmoid)
    }

    pub fn tanh(&self) -> Self {
        self.map(f64::tanh)
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Applies an elementwise operation.
///
/// Binary operations require equal shapes, with one exception: if either
/// operand holds exactly one element it is broadcast against the other
/// operand (scalar-vs-tensor). No other broadcasting is performed.
pub fn elementwise(op: ElementwiseOp, a: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    if !op.is_binary() {
        if b.is_some() {
            return Err(Error::invalid(op.name(), "unary op given a second operand"));
        }
        let f: fn(f64) -> f64 = match op {
            ElementwiseOp::Relu => relu,
            ElementwiseOp::Sigmoid => sigmoid,
            ElementwiseOp::Tanh => f64::tanh,
            _ => unreachable!(),
        };
        return Ok(a.map(f));
    }
    let b = b.ok_or_else(|| Error::invalid(op.name(), "binary op needs two operands"))?;
    let f: fn(f64, f64) -> f64 = match op {
        ElementwiseOp::Add => |x, y| x + y,
        ElementwiseOp::Sub => |x, y| x - y,
        ElementwiseOp::Mul => |x, y| x * y,
        _ => unreachable!(),
    };
    if a.shape == b.shape {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor {
            shape: a.shape.clone(),
            data,
        });
    }
    if b.numel() == 1 {
        let y = b.data[0];
        return Ok(a.map(|x| f(x, y)));
    }
    if a.numel() == 1 {
        let x = a.data[0];
        return Ok(b.map(|y| f(x, y)));
    }
    Err(Error::shape(op.name(), &a.shape, &b.shape))
}

/// Matrix product of `[m, k]` and `[k, n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::shape("matmul", &a.shape, &b.shape));
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; m * n];
    matmul_into(&a.data, &b.data, &mut out, m, k, n);
    Ok(Tensor {
        shape: vec![m, n],
        data: out,
    })
}

/// `out[m, n] += a[m, k] * b[k, n]`, all row-major.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let s = a[i * k + p];
            if s == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += s * bv;
            }
        }
    }
}

/// `out[m, n] += a[m, k] * b[n, k]^T`.
pub(crate) fn matmul_bt_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let br = &b[j * k..(j + 1) * k];
            out[i * n + j] += ar.iter().zip(br).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[k, n] += a[m, k]^T * b[m, n]`.
pub(crate) fn matmul_at_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let s = a[i * k + p];
            if s == 0.0 {
                continue;
            }
            for (o, &bv) in out[p * n..(p + 1) * n].iter_mut().zip(brow) {
                *o += s * bv;
            }
        }
    }
}

/// Mean over the time axis: `[C, T] -> [C]`.
pub fn avg_pool_time(x: &Tensor) -> Result<Tensor> {
    let (c, t) = dims2("avg_pool_time", x)?;
    if t == 0 {
        return Err(Error::invalid("avg_pool_time", "cannot pool an empty time axis"));
    }
    let inv = 1.0 / t as f64;
    let data = x.data.chunks_exact(t).map(|row| row.iter().sum::<f64>() * inv).collect();
    Ok(Tensor {
        shape: vec![c],
        data,
    })
}

/// Concatenates along the channel (leading) axis. Parts must all be rank 1,
/// or all rank 2 with a shared time extent.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let Some(first) = parts.first() else {
        return Err(Error::invalid("concat_channels", "nothing to concatenate"));
    };
    let tail = &first.shape[1..];
    let mut channels = 0;
    for p in parts {
        if p.rank() != first.rank() || p.rank() == 0 || &p.shape[1..] != tail {
            return Err(Error::shape("concat_channels", &first.shape, &p.shape));
        }
        channels += p.shape[0];
    }
    let mut shape = vec![channels];
    shape.extend_from_slice(tail);
    let data = parts.iter().flat_map(|p| p.data.iter().copied()).collect();
    Ok(Tensor { shape, data })
}

/// Inverse of [`concat_channels`]: splits the leading axis into the given sizes.
pub fn split_channels(x: &Tensor, sizes: &[usize]) -> Result<Vec<Tensor>> {
    if x.rank() == 0 || sizes.iter().sum::<usize>() != x.shape[0] {
        return Err(Error::invalid(
            "split_channels",
            format!("sizes {sizes:?} do not cover shape {:?}", x.shape),
        ));
    }
    let inner: usize = x.shape[1..].iter().product();
    let mut offset = 0;
    Ok(sizes
        .iter()
        .map(|&s| {
            let mut shape = vec![s];
            shape.extend_from_slice(&x.shape[1..]);
            let data = x.data[offset * inner..(offset + s) * inner].to_vec();
            offset += s;
            Tensor { shape, data }
        })
        .collect())
}

/// Numerically stable softmax of a rank-1 tensor (max-shifted).
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if logits.rank() != 1 || logits.numel() == 0 {
        return Err(Error::invalid("softmax", format!("expected [K>=1], got {:?}", logits.shape)));
    }
    Ok(Tensor::vector(&softmax_slice(&logits.data)))
}

pub(crate) fn softmax_slice(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Reverses the time axis of a `[C, T]` tensor.
pub fn reverse_time(x: &Tensor) -> Result<Tensor> {
    let (_, t) = dims2("reverse_time", x)?;
    let mut data = x.data.clone();
    if t > 0 {
        for row in data.chunks_exact_mut(t) {
            row.reverse();
        }
    }
    Ok(Tensor {
        shape: x.shape.clone(),
        data,
    })
}

pub(crate) fn dims2(op: &'static str, x: &Tensor) -> Result<(usize, usize)> {
    match x.shape.as_slice() {
        &[c, t] => Ok((c, t)),
        other => Err(Error::invalid(op, format!("expected a [C, T] tensor, got {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_sigmoid_add() {
        let x = Tensor::vector(&[-1.0, 0.0, 2.0]);
        assert_eq!(x.relu().data(), &[0.0, 0.0, 2.0]);
        assert_eq!(Tensor::vector(&[0.0]).sigmoid().data(), &[0.5]);
        let s = Tensor::vector(&[1.0, 2.0]).add(&Tensor::vector(&[3.0, 4.0])).unwrap();
        assert_eq!(s.data(), &[4.0, 6.0]);
    }

    #[test]
    fn scalar_broadcast_both_sides() {
        let x = Tensor::vector(&[1.0, 2.0]);
        let two = Tensor::scalar(2.0);
        assert_eq!(x.mul(&two).unwrap().data(), &[2.0, 4.0]);
        assert_eq!(two.sub(&x).unwrap().data(), &[1.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let err = Tensor::zeros(&[2, 3]).add(&Tensor::zeros(&[3, 2])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
    }

    #[test]
    fn unary_rejects_second_operand() {
        let x = Tensor::vector(&[1.0]);
        assert!(elementwise(ElementwiseOp::Relu, &x, Some(&x)).is_err());
        assert!(elementwise(ElementwiseOp::Add, &x, None).is_err());
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
    }

    #[test]
    fn matmul_cases() {
        let a = Tensor::matrix(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matmul(&Tensor::eye(2), &a).unwrap(), a);
        let r = matmul(&Tensor::matrix(&[&[1.0, 2.0]]), &Tensor::matrix(&[&[3.0], &[4.0]])).unwrap();
        assert_eq!(r.data(), &[11.0]);
        let any = Tensor::new(vec![3, 5], (0..15).map(f64::from).collect()).unwrap();
        assert_eq!(matmul(&Tensor::zeros(&[2, 3]), &any).unwrap(), Tensor::zeros(&[2, 5]));
        assert!(matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).is_err());
    }

    #[test]
    fn transposed_products_agree_with_matmul() {
        let a = Tensor::new(vec![2, 3], vec![1.0, -2.0, 0.5, 3.0, 1.5, -1.0]).unwrap();
        let b = Tensor::new(vec![3, 2], vec![0.2, 1.0, -0.7, 2.0, 1.1, 0.3]).unwrap();
        let ab = matmul(&a, &b).unwrap();
        // b^T stored as [2, 3]
        let bt: Vec<f64> = (0..2).flat_map(|j| (0..3).map(move |i| (i, j))).map(|(i, j)| b.at2(i, j)).collect();
        let mut out = vec![0.0; 4];
        matmul_bt_into(a.data(), &bt, &mut out, 2, 3, 2);
        assert_eq!(out, ab.data());
        // a^T stored as [3, 2]
        let at: Vec<f64> = (0..3).flat_map(|i| (0..2).map(move |j| (i, j))).map(|(i, j)| a.at2(j, i)).collect();
        let mut out = vec![0.0; 4];
        matmul_at_into(&at, b.data(), &mut out, 3, 2, 2);
        for (x, y) in out.iter().zip(ab.data()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn avg_pool_cases() {
        assert_eq!(avg_pool_time(&Tensor::full(&[1, 4], 3.5)).unwrap().data(), &[3.5]);
        let x = Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(avg_pool_time(&x).unwrap().data(), &[2.0]);
        assert!(avg_pool_time(&Tensor::zeros(&[2, 0])).is_err());
    }

    #[test]
    fn avg_pool_is_linear() {
        let a = Tensor::new(vec![2, 3], vec![1.0, 5.0, -2.0, 0.5, 0.25, 4.0]).unwrap();
        let b = Tensor::new(vec![2, 3], vec![3.0, -1.0, 2.0, 8.0, 1.0, 0.0]).unwrap();
        let lhs = avg_pool_time(&a.add(&b).unwrap()).unwrap();
        let rhs = avg_pool_time(&a).unwrap().add(&avg_pool_time(&b).unwrap()).unwrap();
        for (x, y) in lhs.data().iter().zip(rhs.data()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn concat_and_split() {
        let a = Tensor::vector(&[1.0, 2.0]);
        let b = Tensor::vector(&[3.0, 4.0, 5.0]);
        let c = Tensor::vector(&[6.0; 4]);
        let all = concat_channels(&[&a, &b, &c]).unwrap();
        assert_eq!(all.shape(), &[9]);
        let parts = split_channels(&all, &[2, 3, 4]).unwrap();
        assert_eq!(parts, vec![a.clone(), b, c]);
        assert_eq!(concat_channels(&[&a]).unwrap(), a);
        let m1 = Tensor::zeros(&[2, 5]);
        let m2 = Tensor::zeros(&[1, 4]);
        assert!(concat_channels(&[&m1, &m2]).is_err());
    }

    #[test]
    fn softmax_cases() {
        let s = softmax(&Tensor::vector(&[0.0, 0.0])).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax(&Tensor::vector(&[0.0, 3f64.ln()])).unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-15 && (s.data()[1] - 0.75).abs() < 1e-15);
        let big = softmax(&Tensor::vector(&[1000.0, 1000.0, 999.0])).unwrap();
        assert!(big.is_finite());
        assert!((big.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reverse_time_cases() {
        let x = Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(reverse_time(&x).unwrap().data(), &[3.0, 2.0, 1.0]);
        assert_eq!(reverse_time(&reverse_time(&x).unwrap()).unwrap(), x);
        let c = Tensor::full(&[2, 4], 1.5);
        assert_eq!(reverse_time(&c).unwrap(), c);
    }

    #[test]
    fn new_rejects_inconsistent_length() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }
}
