use serde::{Deserialize, Serialize};

use super::{binder, fan_in_uniform};
use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Depthwise-separable convolution: per-channel causal kernels `[C, K]`
/// followed by a 1×1 mixing matrix `[C_out, C]`, a bias and ReLU.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparableParams<P = Tensor> {
    pub depthwise: P,
    pub pointwise: P,
    pub bias: P,
    pub dilation: usize,
}

impl SeparableParams<Tensor> {
    pub fn init(in_channels: usize, out_channels: usize, kernel: usize, rng: &mut RngState) -> Self {
        Self {
            depthwise: fan_in_uniform(&[in_channels, kernel], kernel, 2.0, rng),
            pointwise: fan_in_uniform(&[out_channels, in_channels], in_channels, 2.0, rng),
            bias: Tensor::zeros(&[out_channels]),
            dilation: 1,
        }
    }

    /// Weight count (biases excluded): `C·K + C_out·C`.
    pub fn weight_count(&self) -> usize {
        self.depthwise.numel() + self.pointwise.numel()
    }

    pub fn bind(&self, g: &mut Graph) -> SeparableParams<Var> {
        self.map("", &mut binder(g))
    }
}

impl<P> SeparableParams<P> {
    pub fn map<Q>(&self, prefix: &str, f: &mut dyn FnMut(&str, &P) -> Q) -> SeparableParams<Q> {
        SeparableParams {
            depthwise: f(&format!("{prefix}.depthwise"), &self.depthwise),
            pointwise: f(&format!("{prefix}.pointwise"), &self.pointwise),
            bias: f(&format!("{prefix}.bias"), &self.bias),
            dilation: self.dilation,
        }
    }
}

/// `relu(pointwise(depthwise(x)) + bias)`.
pub fn separable_stack(g: &mut Graph, x: Var, p: &SeparableParams<Var>) -> Result<Var> {
    let d = g.depthwise(x, p.depthwise, p.dilation)?;
    let y = g.pointwise(d, p.pointwise)?;
    let y = g.bias_add(y, p.bias)?;
    g.relu(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::evaluate;

    fn run(x: &Tensor, p: &SeparableParams) -> Tensor {
        evaluate(|g| {
            let xv = g.constant(x.clone());
            let pv = p.bind(g);
            separable_stack(g, xv, &pv)
        })
        .unwrap()
    }

    #[test]
    fn identity_kernels_give_relu() {
        let x = Tensor::new(vec![2, 4], vec![1.0, -2.0, 3.0, -0.5, 0.25, 4.0, -1.0, 2.0]).unwrap();
        let mut depthwise = Tensor::zeros(&[2, 3]);
        depthwise.data_mut()[0] = 1.0;
        depthwise.data_mut()[3] = 1.0;
        let p = SeparableParams { depthwise, pointwise: Tensor::eye(2), bias: Tensor::zeros(&[2]), dilation: 1 };
        assert_eq!(run(&x, &p), x.relu());
    }

    #[test]
    fn matches_nested_loop_formula() {
        let mut rng = RngState::new(11);
        let (c, co, k, t) = (3, 4, 3, 8);
        let mut p = SeparableParams::init(c, co, k, &mut rng);
        p.bias = Tensor::new(vec![co], (0..co).map(|_| rng.normal() * 0.1).collect()).unwrap();
        let x = Tensor::new(vec![c, t], (0..c * t).map(|_| rng.normal()).collect()).unwrap();
        let y = run(&x, &p);
        for o in 0..co {
            for ti in 0..t {
                let mut acc = p.bias.data()[o];
                for ch in 0..c {
                    let mut dw = 0.0;
                    for kk in 0..k {
                        if ti >= kk {
                            dw += p.depthwise.at2(ch, kk) * x.at2(ch, ti - kk);
                        }
                    }
                    acc += p.pointwise.at2(o, ch) * dw;
                }
                assert!((y.at2(o, ti) - acc.max(0.0)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn fewer_weights_than_full_conv() {
        let mut rng = RngState::new(12);
        let p = SeparableParams::init(32, 32, 3, &mut rng);
        assert_eq!(p.weight_count(), 32 * 3 + 32 * 32);
        assert!(p.weight_count() < 32 * 32 * 3);
    }
}
