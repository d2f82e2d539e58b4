use serde::{Deserialize, Serialize};

use super::{dims2, matmul, Tensor};
use crate::error::{Error, Result};

/// Dilated 1-D convolution kernel.
///
/// `weight` is `[out_channels, in_channels, K]`, `bias` is `[out_channels]`.
/// The type parameter lets the same structure carry plain tensors or graph
/// handles (see [`crate::autodiff::Var`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv1dKernel<P = Tensor> {
    pub weight: P,
    pub bias: P,
    pub dilation: usize,
}

impl Conv1dKernel<Tensor> {
    pub fn new(weight: Tensor, bias: Tensor, dilation: usize) -> Result<Self> {
        if dilation == 0 {
            return Err(Error::invalid("conv1d", "dilation must be >= 1"));
        }
        match (weight.shape(), bias.shape()) {
            ([o, _, k], [ob]) if o == ob && *k >= 1 => {}
            _ => return Err(Error::shape("conv1d", weight.shape(), bias.shape())),
        }
        Ok(Self {
            weight,
            bias,
            dilation,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn kernel_size(&self) -> usize {
        self.weight.dim(2)
    }
}

impl<P> Conv1dKernel<P> {
    pub fn map<Q>(&self, prefix: &str, f: &mut dyn FnMut(&str, &P) -> Q) -> Conv1dKernel<Q> {
        Conv1dKernel {
            weight: f(&format!("{prefix}.weight"), &self.weight),
            bias: f(&format!("{prefix}.bias"), &self.bias),
            dilation: self.dilation,
        }
    }
}

/// Causal dilated convolution with `(K-1)*d` zeros of left padding:
/// `y[o,t] = b[o] + sum_{c,k} w[o,c,k] * x[c, t - d*k]`.
pub fn conv1d_causal(x: &Tensor, k: &Conv1dKernel) -> Result<Tensor> {
    conv1d_forward(x, &k.weight, &k.bias, k.dilation, false)
}

/// Anti-causal mirror of [`conv1d_causal`]: `y[o,t] = b[o] + sum w[o,c,k] * x[c, t + d*k]`.
pub fn conv1d_anticausal(x: &Tensor, k: &Conv1dKernel) -> Result<Tensor> {
    conv1d_forward(x, &k.weight, &k.bias, k.dilation, true)
}

fn check_conv(x: &Tensor, w: &Tensor, b: &Tensor, dilation: usize) -> Result<(usize, usize, usize, usize)> {
    let (c_in, t) = dims2("conv1d", x)?;
    let &[c_out, wc, k] = w.shape() else {
        return Err(Error::invalid("conv1d", format!("weight must be [O, I, K], got {:?}", w.shape())));
    };
    if wc != c_in {
        return Err(Error::shape("conv1d", x.shape(), w.shape()));
    }
    if b.shape() != [c_out] {
        return Err(Error::shape("conv1d", w.shape(), b.shape()));
    }
    if dilation == 0 || k == 0 {
        return Err(Error::invalid("conv1d", "kernel size and dilation must be >= 1"));
    }
    if t == 0 {
        return Err(Error::invalid("conv1d", "empty time axis"));
    }
    Ok((c_in, c_out, k, t))
}

pub(crate) fn conv1d_forward(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    dilation: usize,
    anticausal: bool,
) -> Result<Tensor> {
    let (c_in, c_out, k, t) = check_conv(x, w, b, dilation)?;
    let xd = x.data();
    let wd = w.data();
    let mut out = vec![0.0; c_out * t];
    for o in 0..c_out {
        let row = &mut out[o * t..(o + 1) * t];
        row.fill(b.data()[o]);
        for c in 0..c_in {
            let xrow = &xd[c * t..(c + 1) * t];
            for kk in 0..k {
                let shift = dilation * kk;
                if shift >= t {
                    break;
                }
                let wv = wd[(o * c_in + c) * k + kk];
                if anticausal {
                    for (y, &xv) in row[..t - shift].iter_mut().zip(&xrow[shift..]) {
                        *y += wv * xv;
                    }
                } else {
                    for (y, &xv) in row[shift..].iter_mut().zip(&xrow[..t - shift]) {
                        *y += wv * xv;
                    }
                }
            }
        }
    }
    Tensor::new(vec![c_out, t], out)
}

/// Gradients of a dilated conv with respect to input, weight and bias.
pub(crate) fn conv1d_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    dilation: usize,
    anticausal: bool,
) -> (Tensor, Tensor, Tensor) {
    let (c_in, t) = (x.dim(0), x.dim(1));
    let (c_out, k) = (w.dim(0), w.dim(2));
    let xd = x.data();
    let wd = w.data();
    let gd = dy.data();
    let mut dx = vec![0.0; c_in * t];
    let mut dw = vec![0.0; c_out * c_in * k];
    let mut db = vec![0.0; c_out];
    for o in 0..c_out {
        let grow = &gd[o * t..(o + 1) * t];
        db[o] = grow.iter().sum();
        for c in 0..c_in {
            let xrow = &xd[c * t..(c + 1) * t];
            let dxrow = &mut dx[c * t..(c + 1) * t];
            for kk in 0..k {
                let shift = dilation * kk;
                if shift >= t {
                    break;
                }
                let idx = (o * c_in + c) * k + kk;
                let wv = wd[idx];
                let (g, xs, dxs) = if anticausal {
                    (&grow[..t - shift], &xrow[shift..], &mut dxrow[shift..])
                } else {
                    (&grow[shift..], &xrow[..t - shift], &mut dxrow[..t - shift])
                };
                let mut acc = 0.0;
                for ((&gv, &xv), dxv) in g.iter().zip(xs).zip(dxs.iter_mut()) {
                    acc += gv * xv;
                    *dxv += wv * gv;
                }
                dw[idx] += acc;
            }
        }
    }
    (
        Tensor::new(vec![c_in, t], dx).expect("shape"),
        Tensor::new(vec![c_out, c_in, k], dw).expect("shape"),
        Tensor::new(vec![c_out], db).expect("shape"),
    )
}

/// Per-channel causal convolution: channel `c` of the output only sees
/// channel `c` of the input. `kernels` is `[C, K]`.
pub fn depthwise_conv1d(x: &Tensor, kernels: &Tensor, dilation: usize) -> Result<Tensor> {
    let (c, t) = dims2("depthwise_conv1d", x)?;
    let &[kc, k] = kernels.shape() else {
        return Err(Error::invalid("depthwise_conv1d", format!("kernels must be [C, K], got {:?}", kernels.shape())));
    };
    if kc != c {
        return Err(Error::shape("depthwise_conv1d", x.shape(), kernels.shape()));
    }
    if dilation == 0 || k == 0 {
        return Err(Error::invalid("depthwise_conv1d", "kernel size and dilation must be >= 1"));
    }
    let xd = x.data();
    let kd = kernels.data();
    let mut out = vec![0.0; c * t];
    for ch in 0..c {
        let row = &mut out[ch * t..(ch + 1) * t];
        let xrow = &xd[ch * t..(ch + 1) * t];
        for kk in 0..k {
            let shift = dilation * kk;
            if shift >= t {
                break;
            }
            let wv = kd[ch * k + kk];
            for (y, &xv) in row[shift..].iter_mut().zip(&xrow[..t - shift]) {
                *y += wv * xv;
            }
        }
    }
    Tensor::new(vec![c, t], out)
}

pub(crate) fn depthwise_backward(x: &Tensor, kernels: &Tensor, dy: &Tensor, dilation: usize) -> (Tensor, Tensor) {
    let (c, t) = (x.dim(0), x.dim(1));
    let k = kernels.dim(1);
    let (xd, kd, gd) = (x.data(), kernels.data(), dy.data());
    let mut dx = vec![0.0; c * t];
    let mut dk = vec![0.0; c * k];
    for ch in 0..c {
        let xrow = &xd[ch * t..(ch + 1) * t];
        let grow = &gd[ch * t..(ch + 1) * t];
        let dxrow = &mut dx[ch * t..(ch + 1) * t];
        for kk in 0..k {
            let shift = dilation * kk;
            if shift >= t {
                break;
            }
            let wv = kd[ch * k + kk];
            let mut acc = 0.0;
            for ((&gv, &xv), dxv) in grow[shift..].iter().zip(&xrow[..t - shift]).zip(dxrow[..t - shift].iter_mut()) {
                acc += gv * xv;
                *dxv += wv * gv;
            }
            dk[ch * k + kk] = acc;
        }
    }
    (
        Tensor::new(vec![c, t], dx).expect("shape"),
        Tensor::new(vec![c, k], dk).expect("shape"),
    )
}

/// 1×1 channel mixing: `out[o,t] = sum_c k[o,c] * x[c,t]`.
pub fn pointwise_conv1d(x: &Tensor, k: &Tensor) -> Result<Tensor> {
    let (c_in, _) = dims2("pointwise_conv1d", x)?;
    if k.rank() != 2 || k.dim(1) != c_in {
        return Err(Error::shape("pointwise_conv1d", x.shape(), k.shape()));
    }
    matmul(k, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::reverse_time;

    fn single(w: &[f64], d: usize) -> Conv1dKernel {
        Conv1dKernel::new(
            Tensor::new(vec![1, 1, w.len()], w.to_vec()).unwrap(),
            Tensor::zeros(&[1]),
            d,
        )
        .unwrap()
    }

    fn seq(v: &[f64]) -> Tensor {
        Tensor::new(vec![1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn identity_kernel() {
        let x = seq(&[5.0, 6.0, 7.0]);
        assert_eq!(conv1d_causal(&x, &single(&[1.0], 1)).unwrap(), x);
        assert_eq!(conv1d_anticausal(&x, &single(&[1.0], 1)).unwrap(), x);
    }

    #[test]
    fn dilated_causal_hand_values() {
        // y(t) = x(t) + x(t-2)
        let y = conv1d_causal(&seq(&[1.0, 2.0, 3.0, 4.0]), &single(&[1.0, 1.0], 2)).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 4.0, 6.0]);
    }

    #[test]
    fn anticausal_hand_values() {
        let y = conv1d_anticausal(&seq(&[1.0, 2.0, 3.0]), &single(&[1.0, 1.0], 1)).unwrap();
        assert_eq!(y.data(), &[3.0, 5.0, 3.0]);
    }

    #[test]
    fn causal_perturbation_leaves_past_untouched() {
        let k = single(&[0.3, -1.2, 0.7], 1);
        let x = seq(&[0.1, 0.4, -0.2, 0.9, 0.5, -0.3]);
        let mut x2 = x.clone();
        x2.data_mut()[3] += 10.0;
        let (a, b) = (conv1d_causal(&x, &k).unwrap(), conv1d_causal(&x2, &k).unwrap());
        assert_eq!(a.data()[..3], b.data()[..3]);
        assert_ne!(a.data()[3], b.data()[3]);
    }

    #[test]
    fn anticausal_is_reversed_causal() {
        let k = Conv1dKernel::new(
            Tensor::new(vec![2, 2, 3], vec![0.5, -0.25, 1.5, 0.1, 2.0, -1.0, 0.3, 0.7, -0.9, 1.1, 0.2, 0.4]).unwrap(),
            Tensor::vector(&[0.05, -0.1]),
            2,
        )
        .unwrap();
        let x = Tensor::new(vec![2, 7], (0..14).map(|i| ((i * 37 % 11) as f64) * 0.3 - 1.0).collect()).unwrap();
        let direct = conv1d_anticausal(&x, &k).unwrap();
        let via = reverse_time(&conv1d_causal(&reverse_time(&x).unwrap(), &k).unwrap()).unwrap();
        assert_eq!(direct, via);
    }

    #[test]
    fn channel_mismatch_is_error() {
        let k = single(&[1.0], 1);
        assert!(conv1d_causal(&Tensor::zeros(&[2, 4]), &k).is_err());
        assert!(Conv1dKernel::new(Tensor::zeros(&[1, 1, 1]), Tensor::zeros(&[1]), 0).is_err());
    }

    #[test]
    fn depthwise_identity_and_isolation() {
        let x = Tensor::new(vec![2, 4], vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.5, 2.0, 1.0]).unwrap();
        assert_eq!(depthwise_conv1d(&x, &Tensor::ones_like_kernels(2, 1), 1).unwrap(), x);
        let kernels = Tensor::new(vec![2, 2], vec![0.5, 1.0, -2.0, 0.25]).unwrap();
        let mut x0 = x.clone();
        x0.data_mut()[4..].fill(0.0);
        let y = depthwise_conv1d(&x0, &kernels, 1).unwrap();
        assert!(y.data()[4..].iter().all(|&v| v == 0.0));
        assert!(depthwise_conv1d(&x, &Tensor::zeros(&[3, 2]), 1).is_err());
    }

    #[test]
    fn depthwise_single_channel_matches_full_conv() {
        let x = seq(&[0.2, -0.4, 1.0, 0.3, 0.8]);
        let kern = [0.6, -0.3, 0.9];
        let dw = depthwise_conv1d(&x, &Tensor::new(vec![1, 3], kern.to_vec()).unwrap(), 2).unwrap();
        let full = conv1d_causal(&x, &single(&kern, 2)).unwrap();
        for (a, b) in dw.data().iter().zip(full.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn pointwise_cases() {
        let x = Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(pointwise_conv1d(&x, &Tensor::eye(3)).unwrap(), x);
        let s = pointwise_conv1d(&x, &Tensor::full(&[1, 3], 1.0)).unwrap();
        assert_eq!(s.data(), &[9.0, 12.0]);
        assert!(pointwise_conv1d(&x, &Tensor::zeros(&[2, 2])).is_err());
    }

    impl Tensor {
        fn ones_like_kernels(c: usize, k: usize) -> Tensor {
            let mut t = Tensor::zeros(&[c, k]);
            for ch in 0..c {
                t.data_mut()[ch * k] = 1.0;
            }
            t
        }
    }
}
