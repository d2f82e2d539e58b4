//! Network building blocks, expressed as graph operations.
//!
//! Each parameter struct is generic over its leaf type: `Foo<Tensor>` holds
//! the weights, `Foo<Var>` holds the graph handles produced by `bind`. The
//! `map` methods visit leaves in a fixed order with stable dotted names, which
//! is how checkpoints, optimizers and gradients line up with each other.

mod attention;
mod dense;
mod lstm;
mod separable;
mod tcn;

pub use attention::{channel_attention, se_block, ChannelAttentionParams, SeBlockParams, SeGate};
pub use dense::{dense, dropout, DenseParams, Mode};
pub use lstm::{bilstm, lstm_cell, lstm_scan, BiCombine, LstmParams};
pub use separable::{separable_stack, SeparableParams};
pub use tcn::{bitcn, receptive_field, tcn_block, tcn_stack, BiTcnParams, TcnBlockParams};

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Uniform init scaled by fan-in. `gain = 2` gives He-uniform (for ReLU
/// layers), `gain = 1` LeCun-uniform (for gated layers).
pub(crate) fn fan_in_uniform(shape: &[usize], fan_in: usize, gain: f64, rng: &mut RngState) -> Tensor {
    let bound = (3.0 * gain / fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_range(-bound, bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// Runs `f` on a scratch graph and returns the value of its output.
pub fn evaluate(f: impl FnOnce(&mut Graph) -> Result<Var>) -> Result<Tensor> {
    let mut g = Graph::new();
    let out = f(&mut g)?;
    Ok(g.value(out).clone())
}

/// Registers every leaf of a parameter tree as a trainable graph param.
pub(crate) fn binder(g: &mut Graph) -> impl FnMut(&str, &Tensor) -> Var + '_ {
    move |_, t| g.param(t.clone())
}
