use serde::{Deserialize, Serialize};

use super::{binder, fan_in_uniform};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::{Conv1dKernel, Tensor};

/// Residual block: `relu(proj(x) + conv2(relu(conv1(x))))`, both convs
/// dilated and causal with the same dilation. `projection` is a 1×1 conv
/// present iff the channel count changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TcnBlockParams<P = Tensor> {
    pub conv1: Conv1dKernel<P>,
    pub conv2: Conv1dKernel<P>,
    pub projection: Option<Conv1dKernel<P>>,
}

impl TcnBlockParams<Tensor> {
    pub fn init(in_channels: usize, out_channels: usize, kernel: usize, dilation: usize, rng: &mut RngState) -> Self {
        let conv = |cin: usize, k: usize, d: usize, rng: &mut RngState| Conv1dKernel {
            weight: fan_in_uniform(&[out_channels, cin, k], cin * k, 2.0, rng),
            bias: Tensor::zeros(&[out_channels]),
            dilation: d,
        };
        let conv1 = conv(in_channels, kernel, dilation, rng);
        let conv2 = conv(out_channels, kernel, dilation, rng);
        let projection = (in_channels != out_channels).then(|| conv(in_channels, 1, 1, rng));
        Self { conv1, conv2, projection }
    }

    pub fn validate(&self) -> Result<()> {
        let (cin, cout) = (self.conv1.in_channels(), self.conv1.out_channels());
        if self.projection.is_some() != (cin != cout) {
            return Err(Error::invalid("tcn_block", "projection must be present iff in_channels != out_channels"));
        }
        if self.conv2.in_channels() != cout || self.conv2.out_channels() != cout {
            return Err(Error::shape("tcn_block", self.conv1.weight.shape(), self.conv2.weight.shape()));
        }
        if self.conv1.dilation != self.conv2.dilation {
            return Err(Error::invalid("tcn_block", "both convolutions must share one dilation"));
        }
        Ok(())
    }

    pub fn bind(&self, g: &mut Graph) -> TcnBlockParams<Var> {
        self.map("", &mut binder(g))
    }
}

impl<P> TcnBlockParams<P> {
    pub fn map<Q>(&self, prefix: &str, f: &mut dyn FnMut(&str, &P) -> Q) -> TcnBlockParams<Q> {
        TcnBlockParams {
            conv1: self.conv1.map(&format!("{prefix}.conv1"), f),
            conv2: self.conv2.map(&format!("{prefix}.conv2"), f),
            projection: self.projection.as_ref().map(|p| p.map(&format!("{prefix}.projection"), f)),
        }
    }
}

fn conv(g: &mut Graph, x: Var, k: &Conv1dKernel<Var>, anticausal: bool) -> Result<Var> {
    g.conv1d(x, k.weight, k.bias, k.dilation, anticausal)
}

fn block(g: &mut Graph, x: Var, p: &TcnBlockParams<Var>, anticausal: bool) -> Result<Var> {
    let h = conv(g, x, &p.conv1, anticausal)?;
    let h = g.relu(h)?;
    let f = conv(g, h, &p.conv2, anticausal)?;
    let residual = match &p.projection {
        Some(proj) => conv(g, x, proj, anticausal)?,
        None => x,
    };
    let z = g.add(residual, f)?;
    g.relu(z)
}

/// One causal residual block over a `[C_in, T]` sequence.
pub fn tcn_block(g: &mut Graph, x: Var, p: &TcnBlockParams<Var>) -> Result<Var> {
    block(g, x, p, false)
}

fn stack(g: &mut Graph, x: Var, blocks: &[TcnBlockParams<Var>], anticausal: bool) -> Result<Var> {
    if blocks.is_empty() {
        return Err(Error::invalid("tcn_stack", "at least one block is required"));
    }
    if g.shape(x).get(1).copied().unwrap_or(0) == 0 {
        return Err(Error::invalid("tcn_stack", "empty time axis"));
    }
    blocks.iter().try_fold(x, |h, b| block(g, h, b, anticausal))
}

/// Sequential composition of causal residual blocks.
pub fn tcn_stack(g: &mut Graph, x: Var, blocks: &[TcnBlockParams<Var>]) -> Result<Var> {
    stack(g, x, blocks, false)
}

/// Number of input samples that can influence one output of a stack of
/// blocks with the given kernel size and dilations.
pub fn receptive_field(kernel: usize, dilations: &[usize]) -> usize {
    1 + dilations.iter().map(|d| 2 * (kernel - 1) * d).sum::<usize>()
}

/// Two independently parameterized stacks, one reading the sequence forward
/// and one reading it backward; outputs concatenated as `[forward | backward]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiTcnParams<P = Tensor> {
    pub forward: Vec<TcnBlockParams<P>>,
    pub backward: Vec<TcnBlockParams<P>>,
}

impl BiTcnParams<Tensor> {
    pub fn init(in_channels: usize, filters: usize, kernel: usize, dilations: &[usize], rng: &mut RngState) -> Self {
        let make = |rng: &mut RngState| {
            let mut cin = in_channels;
            dilations
                .iter()
                .map(|&d| {
                    let b = TcnBlockParams::init(cin, filters, kernel, d, rng);
                    cin = filters;
                    b
                })
                .collect()
        };
        let forward = make(rng);
        let backward = make(rng);
        Self { forward, backward }
    }

    pub fn bind(&self, g: &mut Graph) -> BiTcnParams<Var> {
        self.map("", &mut binder(g))
    }
}

impl<P> BiTcnParams<P> {
    pub fn map<Q>(&self, prefix: &str, f: &mut dyn FnMut(&str, &P) -> Q) -> BiTcnParams<Q> {
        BiTcnParams {
            forward: self.forward.iter().enumerate().map(|(i, b)| b.map(&format!("{prefix}.forward.{i}"), f)).collect(),
            backward: self.backward.iter().enumerate().map(|(i, b)| b.map(&format!("{prefix}.backward.{i}"), f)).collect(),
        }
    }
}

/// Bidirectional TCN. The backward branch runs its stack with anti-causal
/// convolutions, which equals `reverse ∘ causal stack ∘ reverse` exactly.
pub fn bitcn(g: &mut Graph, x: Var, p: &BiTcnParams<Var>) -> Result<Var> {
    let yf = stack(g, x, &p.forward, false)?;
    let yb = stack(g, x, &p.backward, true)?;
    g.concat(&[yf, yb])
}
