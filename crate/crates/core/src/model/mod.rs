//! The three-stream classifier.
//!
//! Stream naming is fixed: A = bidirectional TCN, B = conv → separable conv
//! → squeeze-excitation, C = TCN → BiLSTM. Each stream is pooled over time;
//! the pooled vectors are concatenated as `[A | B | C]`, passed through
//! dropout and channel attention, and mapped to class logits by a dense
//! layer. In ablation tables the branches are labelled Branch-1 (BiLSTM) = C,
//! Branch-2 (CNN) = B, Branch-3 (BiTCN) = A.

mod checkpoint;
mod config;
mod flops;

pub use checkpoint::{load, read_checkpoint, save, write_checkpoint, CHECKPOINT_MAGIC};
pub use config::{AblationFlags, ModelConfig, StreamAConfig, StreamBConfig, StreamCConfig};
pub use flops::{count_flops, FlopReport};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::layers::{
    self, BiTcnParams, ChannelAttentionParams, DenseParams, LstmParams, Mode, SeBlockParams, SeparableParams,
    TcnBlockParams,
};
use crate::rng::RngState;
use crate::tensor::{Conv1dKernel, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamBParams<P = Tensor> {
    pub conv: Conv1dKernel<P>,
    pub separable: SeparableParams<P>,
    pub se: SeBlockParams<P>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamCParams<P = Tensor> {
    pub tcn: Vec<TcnBlockParams<P>>,
    pub lstm_forward: LstmParams<P>,
    pub lstm_backward: LstmParams<P>,
}

/// Trainable parameters. Disabled components are `None` and own no weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<P = Tensor> {
    pub stream_a: Option<BiTcnParams<P>>,
    pub stream_b: Option<StreamBParams<P>>,
    pub stream_c: Option<StreamCParams<P>>,
    pub attention: Option<ChannelAttentionParams<P>>,
    pub classifier: DenseParams<P>,
}

impl<P> ModelParams<P> {
    /// Visits every leaf in canonical order with its dotted name.
    pub fn map<Q>(&self, f: &mut dyn FnMut(&str, &P) -> Q) -> ModelParams<Q> {
        ModelParams {
            stream_a: self.stream_a.as_ref().map(|a| a.map("stream_a", f)),
            stream_b: self.stream_b.as_ref().map(|b| StreamBParams {
                conv: b.conv.map("stream_b.conv", f),
                separable: b.separable.map("stream_b.separable", f),
                se: b.se.map("stream_b.se", f),
            }),
            stream_c: self.stream_c.as_ref().map(|c| StreamCParams {
                tcn: c.tcn.iter().enumerate().map(|(i, blk)| blk.map(&format!("stream_c.tcn.{i}"), f)).collect(),
                lstm_forward: c.lstm_forward.map("stream_c.lstm_forward", f),
                lstm_backward: c.lstm_backward.map("stream_c.lstm_backward", f),
            }),
            attention: self.attention.as_ref().map(|a| a.map("attention", f)),
            classifier: self.classifier.map("classifier", f),
        }
    }

    pub fn flags(&self) -> AblationFlags {
        AblationFlags {
            enable_stream_a: self.stream_a.is_some(),
            enable_stream_b: self.stream_b.is_some(),
            enable_stream_c: self.stream_c.is_some(),
            enable_attention: self.attention.is_some(),
        }
    }
}

impl ModelParams<Tensor> {
    pub fn named(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.map(&mut |name, t| out.push((name.to_string(), t.clone())));
        out
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.map(&mut |name, _| out.push(name.to_string()));
        out
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        self.map(&mut |_, t| out.push(t.clone()));
        out
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.map(&mut |_, t| n += t.numel());
        n
    }

    /// Same structure with leaves replaced, in canonical order.
    pub fn with_tensors(&self, tensors: Vec<Tensor>) -> Result<Self> {
        let expected = self.names().len();
        if tensors.len() != expected {
            return Err(Error::invalid(
                "model",
                format!("expected {expected} tensors, got {}", tensors.len()),
            ));
        }
        let mut it = tensors.into_iter();
        let mut bad = None;
        let out = self.map(&mut |name, old| {
            let t = it.next().expect("length checked");
            if t.shape() != old.shape() && bad.is_none() {
                bad = Some(format!("{name}: expected {:?}, got {:?}", old.shape(), t.shape()));
            }
            t
        });
        match bad {
            Some(msg) => Err(Error::invalid("model", msg)),
            None => Ok(out),
        }
    }

    pub fn bind(&self, g: &mut Graph) -> ModelParams<Var> {
        self.map(&mut |_, t| g.param(t.clone()))
    }
}

/// Width of the fused feature vector for a configuration and flag set.
pub fn fused_width(config: &ModelConfig, flags: &AblationFlags) -> usize {
    let mut width = 0;
    if flags.enable_stream_a {
        width += 2 * config.stream_a.filters;
    }
    if flags.enable_stream_b {
        width += config.stream_b.separable_filters;
    }
    if flags.enable_stream_c {
        width += config.stream_c.output_width();
    }
    width
}

/// Initializes parameters. Each component draws from its own fork of `rng`,
/// so an enabled component gets the same initial weights whatever the
/// other flags are.
pub fn build(config: &ModelConfig, flags: &AblationFlags, rng: &RngState) -> Result<ModelParams> {
    config.validate(flags)?;
    let c = config.channels;
    let stream_a = flags.enable_stream_a.then(|| {
        let a = &config.stream_a;
        BiTcnParams::init(c, a.filters, a.kernel, &a.dilations, &mut rng.fork(1))
    });
    let stream_b = if flags.enable_stream_b {
        let b = &config.stream_b;
        let mut r = rng.fork(2);
        let conv = TcnBlockParams::init(c, b.conv_filters, b.kernel, 1, &mut r).conv1;
        let separable = SeparableParams::init(b.conv_filters, b.separable_filters, b.kernel, &mut r);
        let se = SeBlockParams::init(b.separable_filters, b.se_ratio, b.se_gate, &mut r)?;
        Some(StreamBParams { conv, separable, se })
    } else {
        None
    };
    let stream_c = flags.enable_stream_c.then(|| {
        let s = &config.stream_c;
        let mut r = rng.fork(3);
        let mut cin = c;
        let tcn = s
            .dilations
            .iter()
            .map(|&d| {
                let blk = TcnBlockParams::init(cin, s.filters, s.kernel, d, &mut r);
                cin = s.filters;
                blk
            })
            .collect();
        StreamCParams {
            tcn,
            lstm_forward: LstmParams::init(s.filters, s.lstm_hidden, &mut r),
            lstm_backward: LstmParams::init(s.filters, s.lstm_hidden, &mut r),
        }
    });
    let width = fused_width(config, flags);
    let attention = if flags.enable_attention {
        Some(SeBlockParams::init(width, config.attention_ratio, layers::SeGate::Sigmoid, &mut rng.fork(4))?)
    } else {
        None
    };
    let classifier = DenseParams::init(width, config.num_classes, &mut rng.fork(5));
    Ok(ModelParams { stream_a, stream_b, stream_c, attention, classifier })
}

/// Logits `[K]` for one `[C, T]` window on graph `g`.
pub fn forward_sample(
    g: &mut Graph,
    config: &ModelConfig,
    p: &ModelParams<Var>,
    x: Var,
    mode: Mode,
    rng: &mut RngState,
) -> Result<Var> {
    if g.shape(x) != [config.channels, config.window] {
        return Err(Error::shape("forward", g.shape(x), &[config.channels, config.window]));
    }
    let mut pooled = Vec::with_capacity(3);
    if let Some(a) = &p.stream_a {
        g.set_scope("stream_a.bitcn");
        let y = layers::bitcn(g, x, a)?;
        pooled.push(g.avg_pool_time(y)?);
    }
    if let Some(b) = &p.stream_b {
        g.set_scope("stream_b.conv");
        let y = g.conv1d(x, b.conv.weight, b.conv.bias, b.conv.dilation, false)?;
        let y = g.relu(y)?;
        g.set_scope("stream_b.separable");
        let y = layers::separable_stack(g, y, &b.separable)?;
        g.set_scope("stream_b.se");
        let y = layers::se_block(g, y, &b.se)?;
        pooled.push(g.avg_pool_time(y)?);
    }
    if let Some(c) = &p.stream_c {
        g.set_scope("stream_c.tcn");
        let y = layers::tcn_stack(g, x, &c.tcn)?;
        g.set_scope("stream_c.bilstm");
        let y = layers::bilstm(g, y, &c.lstm_forward, &c.lstm_backward, config.stream_c.combine)?;
        pooled.push(g.avg_pool_time(y)?);
    }
    g.set_scope("fusion");
    let fused = g.concat(&pooled)?;
    let fused = layers::dropout(g, fused, config.dropout, mode, rng)?;
    let fused = match &p.attention {
        Some(att) => {
            g.set_scope("attention");
            layers::channel_attention(g, fused, att)?
        }
        None => fused,
    };
    g.set_scope("classifier");
    layers::dense(g, fused, &p.classifier)
}

/// Model configuration plus weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

/// Loss, logits and per-parameter gradients (canonical order) for one window.
#[derive(Clone, Debug)]
pub struct SampleGrad {
    pub loss: f64,
    pub logits: Tensor,
    pub grads: Vec<Tensor>,
}

impl Model {
    pub fn new(config: ModelConfig, flags: &AblationFlags, seed: u64) -> Result<Self> {
        let params = build(&config, flags, &RngState::new(seed))?;
        Ok(Self { config, params })
    }

    pub fn flags(&self) -> AblationFlags {
        self.params.flags()
    }

    /// Logits for a single `[C, T]` window.
    pub fn logits(&self, x: &Tensor, mode: Mode, rng: &mut RngState) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let xv = g.constant(x.clone());
        let out = forward_sample(&mut g, &self.config, &p, xv, mode, rng)?;
        Ok(g.value(out).clone())
    }

    /// Logits `[B, K]` for a batch `[B, C, T]`. In train mode each sample
    /// gets dropout masks from `rng.fork(i)`.
    pub fn forward(&self, batch: &Tensor, mode: Mode, rng: &RngState) -> Result<Tensor> {
        if batch.rank() != 3 {
            return Err(Error::invalid("forward", format!("expected [B, C, T], got {:?}", batch.shape())));
        }
        let rows = (0..batch.dim(0))
            .map(|i| self.logits(&batch.index_axis0(i), mode, &mut rng.fork(i as u64)))
            .collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            return Ok(Tensor::zeros(&[0, self.config.num_classes]));
        }
        Tensor::stack(&rows)
    }

    pub fn sample_grad(&self, x: &Tensor, label: usize, mode: Mode, rng: &mut RngState) -> Result<SampleGrad> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let xv = g.constant(x.clone());
        let logits = forward_sample(&mut g, &self.config, &p, xv, mode, rng)?;
        let loss = g.cross_entropy(logits, label)?;
        let grads = g.backward(loss)?;
        Ok(SampleGrad {
            loss: g.value(loss).data()[0],
            logits: g.value(logits).clone(),
            grads: grads.into_tensors(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        let mut c = ModelConfig::new(3, 16, 4);
        c.stream_a.filters = 4;
        c.stream_b.separable_filters = 8;
        c.stream_c.filters = 4;
        c.stream_c.lstm_hidden = 4;
        c
    }

    fn batch(b: usize, c: usize, t: usize, seed: u64) -> Tensor {
        let mut rng = RngState::new(seed);
        Tensor::new(vec![b, c, t], (0..b * c * t).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn build_is_deterministic() {
        let flags = AblationFlags::default();
        let a = build(&tiny(), &flags, &RngState::new(5)).unwrap();
        let b = build(&tiny(), &flags, &RngState::new(5)).unwrap();
        assert_eq!(a, b);
        let c = build(&tiny(), &flags, &RngState::new(6)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn disabled_stream_has_no_params() {
        let flags = AblationFlags { enable_stream_a: false, ..Default::default() };
        let p = build(&tiny(), &flags, &RngState::new(1)).unwrap();
        assert!(p.names().iter().all(|n| !n.starts_with("stream_a")));
        let full = build(&tiny(), &AblationFlags::default(), &RngState::new(1)).unwrap();
        assert!(full.names().iter().any(|n| n.starts_with("stream_a")));
        // other streams keep their initial weights
        assert_eq!(p.stream_b, full.stream_b);
    }

    #[test]
    fn names_are_unique_and_ordered() {
        let p = build(&tiny(), &AblationFlags::default(), &RngState::new(1)).unwrap();
        let names = p.names();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        assert_eq!(names.first().unwrap(), "stream_a.forward.0.conv1.weight");
        assert_eq!(names.last().unwrap(), "classifier.bias");
        assert_eq!(p.named().len(), names.len());
    }

    #[test]
    fn db5_like_config_builds() {
        let config = ModelConfig::new(16, 500, 52);
        let p = build(&config, &AblationFlags::default(), &RngState::new(0)).unwrap();
        assert!(p.num_params() > 0);
    }

    #[test]
    fn invalid_config_lists_violations() {
        let mut config = tiny();
        config.num_classes = 1;
        config.stream_b.se_ratio = 3;
        let err = build(&config, &AblationFlags::default(), &RngState::new(0)).unwrap_err();
        let Error::Config(v) = err else { panic!("expected config error") };
        assert!(v.len() >= 2, "{v:?}");
    }

    #[test]
    fn logits_shape_and_no_cross_sample_leakage() {
        let m = Model::new(tiny(), &AblationFlags::default(), 3).unwrap();
        let x = batch(2, 3, 16, 4);
        let out = m.forward(&x, Mode::Eval, &RngState::new(0)).unwrap();
        assert_eq!(out.shape(), &[2, 4]);
        assert!(out.is_finite());
        let dup = Tensor::stack(&[x.index_axis0(1), x.index_axis0(1)]).unwrap();
        let out2 = m.forward(&dup, Mode::Eval, &RngState::new(0)).unwrap();
        assert_eq!(out2.index_axis0(0), out2.index_axis0(1));
        assert_eq!(out2.index_axis0(0), out.index_axis0(1));
    }

    #[test]
    fn stream_b_only_still_produces_logits() {
        let flags = AblationFlags { enable_stream_a: false, enable_stream_c: false, ..Default::default() };
        let m = Model::new(tiny(), &flags, 3).unwrap();
        let out = m.forward(&batch(3, 3, 16, 1), Mode::Eval, &RngState::new(0)).unwrap();
        assert_eq!(out.shape(), &[3, 4]);
    }

    #[test]
    fn wrong_window_shape_rejected() {
        let m = Model::new(tiny(), &AblationFlags::default(), 3).unwrap();
        assert!(m.forward(&batch(1, 3, 15, 1), Mode::Eval, &RngState::new(0)).is_err());
    }

    #[test]
    fn eval_forward_is_bitwise_deterministic() {
        let m = Model::new(tiny(), &AblationFlags::default(), 8).unwrap();
        let x = batch(2, 3, 16, 9);
        let a = m.forward(&x, Mode::Eval, &RngState::new(1)).unwrap();
        let b = m.forward(&x, Mode::Eval, &RngState::new(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stream_independence_when_classifier_ignores_a() {
        let flags = AblationFlags { enable_attention: false, ..Default::default() };
        let config = tiny();
        let mut m = Model::new(config.clone(), &flags, 10).unwrap();
        let a_width = 2 * config.stream_a.filters;
        let width = fused_width(&config, &flags);
        let w = m.params.classifier.weight.data_mut();
        for k in 0..config.num_classes {
            for j in 0..width {
                let in_b = j >= a_width && j < a_width + config.stream_b.separable_filters;
                if !in_b {
                    w[k * width + j] = 0.0;
                }
            }
        }
        let x = batch(2, 3, 16, 11);
        let before = m.forward(&x, Mode::Eval, &RngState::new(0)).unwrap();
        let a = m.params.stream_a.as_mut().unwrap();
        a.forward[0].conv1.weight = a.forward[0].conv1.weight.scale(3.0);
        a.backward[0].conv2.bias = Tensor::full(&[4], 0.7);
        let after = m.forward(&x, Mode::Eval, &RngState::new(0)).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn gradients_align_with_names() {
        let m = Model::new(tiny(), &AblationFlags::default(), 3).unwrap();
        let x = batch(1, 3, 16, 2).index_axis0(0);
        let sg = m.sample_grad(&x, 1, Mode::Eval, &mut RngState::new(0)).unwrap();
        let named = m.params.named();
        assert_eq!(sg.grads.len(), named.len());
        for (g, (_, t)) in sg.grads.iter().zip(named) {
            assert_eq!(g.shape(), t.shape());
        }
    }
}
