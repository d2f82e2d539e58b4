use serde::{Deserialize, Serialize};

use super::{binder, fan_in_uniform};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Nonlinearity applied to the excitation output.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeGate {
    #[default]
    Sigmoid,
    Relu,
}

/// Squeeze-and-excitation bottleneck. `reduce` is `[C, C/r]` and `expand`
/// is `[C/r, C]`, applied to the channel descriptor as a row vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeBlockParams<P = Tensor> {
    pub reduce: P,
    pub expand: P,
    pub ratio: usize,
    pub gate: SeGate,
}

/// Same bottleneck applied to a fused feature vector, always sigmoid-gated.
pub type ChannelAttentionParams<P = Tensor> = SeBlockParams<P>;

impl SeBlockParams<Tensor> {
    pub fn init(channels: usize, ratio: usize, gate: SeGate, rng: &mut RngState) -> Result<Self> {
        if ratio == 0 || !channels.is_multiple_of(ratio) || channels < ratio {
            return Err(Error::Config(vec![format!(
                "channel count {channels} is not divisible by reduction ratio {ratio}"
            )]));
        }
        let hidden = channels / ratio;
        Ok(Self {
            reduce: fan_in_uniform(&[channels, hidden], channels, 2.0, rng),
            expand: fan_in_uniform(&[hidden, channels], hidden, 1.0, rng),
            ratio,
            gate,
        })
    }

    pub fn channels(&self) -> usize {
        self.reduce.dim(0)
    }

    pub fn bind(&self, g: &mut Graph) -> SeBlockParams<Var> {
        self.map("", &mut binder(g))
    }
}

impl<P> SeBlockParams<P> {
    pub fn map<Q>(&self, prefix: &str, f: &mut dyn FnMut(&str, &P) -> Q) -> SeBlockParams<Q> {
        SeBlockParams {
            reduce: f(&format!("{prefix}.reduce"), &self.reduce),
            expand: f(&format!("{prefix}.expand"), &self.expand),
            ratio: self.ratio,
            gate: self.gate,
        }
    }
}

/// `gate(relu(z · reduce) · expand)` for a channel descriptor `z` of shape `[C]`.
fn excitation(g: &mut Graph, z: Var, p: &SeBlockParams<Var>, gate: SeGate) -> Result<Var> {
    let c = g.shape(z)[0];
    let row = g.reshape(z, &[1, c])?;
    let hidden = g.matmul(row, p.reduce)?;
    let hidden = g.relu(hidden)?;
    let s = g.matmul(hidden, p.expand)?;
    let s = match gate {
        SeGate::Sigmoid => g.sigmoid(s)?,
        SeGate::Relu => g.relu(s)?,
    };
    g.reshape(s, &[c])
}

/// Recalibrates a `[C, T]` feature map: channel `c` is multiplied by the
/// excitation weight computed from its time average.
pub fn se_block(g: &mut Graph, x: Var, p: &SeBlockParams<Var>) -> Result<Var> {
    let z = g.avg_pool_time(x)?;
    let s = excitation(g, z, p, p.gate)?;
    g.channel_scale(x, s)
}

/// Gates a fused feature vector `[C]` with a sigmoid excitation of itself.
pub fn channel_attention(g: &mut Graph, f: Var, p: &ChannelAttentionParams<Var>) -> Result<Var> {
    let s = excitation(g, f, p, SeGate::Sigmoid)?;
    g.mul(f, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::evaluate;

    fn zero_params(c: usize, r: usize, gate: SeGate) -> SeBlockParams {
        SeBlockParams { reduce: Tensor::zeros(&[c, c / r]), expand: Tensor::zeros(&[c / r, c]), ratio: r, gate }
    }

    fn run_se(x: &Tensor, p: &SeBlockParams) -> Tensor {
        evaluate(|g| {
            let xv = g.constant(x.clone());
            let pv = p.bind(g);
            se_block(g, xv, &pv)
        })
        .unwrap()
    }

    #[test]
    fn squeeze_of_constant_channels() {
        let x = Tensor::new(vec![2, 3], vec![2.0, 2.0, 2.0, -1.0, -1.0, -1.0]).unwrap();
        let z = evaluate(|g| {
            let xv = g.constant(x.clone());
            g.avg_pool_time(xv)
        })
        .unwrap();
        assert_eq!(z.data(), &[2.0, -1.0]);
    }

    #[test]
    fn zero_weights_halve_input() {
        let x = Tensor::new(vec![4, 3], (0..12).map(|i| i as f64 - 5.5).collect()).unwrap();
        assert_eq!(run_se(&x, &zero_params(4, 2, SeGate::Sigmoid)), x.scale(0.5));
    }

    #[test]
    fn sigmoid_gate_contracts_every_element() {
        let mut rng = RngState::new(21);
        let p = SeBlockParams::init(8, 4, SeGate::Sigmoid, &mut rng).unwrap();
        let x = Tensor::new(vec![8, 10], (0..80).map(|_| rng.normal() * 3.0).collect()).unwrap();
        let y = run_se(&x, &p);
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!(a.abs() <= b.abs());
        }
    }

    #[test]
    fn relu_gate_is_available() {
        let x = Tensor::full(&[4, 2], 1.0);
        // zero weights under a relu gate zero the whole map
        assert_eq!(run_se(&x, &zero_params(4, 2, SeGate::Relu)), Tensor::zeros(&[4, 2]));
    }

    #[test]
    fn divisibility_checked_at_build() {
        let mut rng = RngState::new(0);
        let err = SeBlockParams::init(6, 4, SeGate::Sigmoid, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn attention_cases() {
        let f = Tensor::vector(&[1.0, -2.0, 4.0, 0.5]);
        let run = |f: &Tensor, p: &SeBlockParams| {
            evaluate(|g| {
                let fv = g.constant(f.clone());
                let pv = p.bind(g);
                channel_attention(g, fv, &pv)
            })
            .unwrap()
        };
        assert_eq!(run(&f, &zero_params(4, 2, SeGate::Sigmoid)), f.scale(0.5));
        let mut rng = RngState::new(3);
        let p = SeBlockParams::init(4, 2, SeGate::Sigmoid, &mut rng).unwrap();
        let y = run(&f, &p);
        assert!(y.data().iter().zip(f.data()).all(|(a, b)| a.abs() <= b.abs()));
        assert_eq!(run(&Tensor::zeros(&[4]), &p), Tensor::zeros(&[4]));
    }
}
