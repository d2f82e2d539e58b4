//! Finite-difference verification of every graph op, every layer and a
//! small instance of the full model.
//!
//! Each case builds a scalar objective `Σ y ⊙ R` from its output `y` and a
//! fixed pattern `R`, then compares the reverse sweep with central
//! differences for every input tensor. Inputs are redrawn when any ReLU
//! pre-activation lies within [`KINK_MARGIN`] of zero, so the step never
//! straddles a kink.

use serde::{Deserialize, Serialize};

use crate::autodiff::{finite_diff_grad, Graph, OpKind, Var, GradReport};
use crate::error::{Error, Result};
use crate::layers::{self, BiCombine, BiTcnParams, DenseParams, LstmParams, Mode, SeBlockParams, SeGate, SeparableParams, TcnBlockParams};
use crate::model::{self, AblationFlags, ModelConfig};
use crate::rng::RngState;
use crate::tensor::Tensor;

pub const KINK_MARGIN: f64 = 1e-3;
const MAX_ATTEMPTS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    /// Corrupt the backward rule of one op kind (for testing the checker).
    #[serde(skip)]
    pub fault: Option<OpKind>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { seed: 0, step: 1e-5, tolerance: 1e-4, fault: None }
    }
}

type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

struct Case {
    inputs: Vec<(String, Tensor)>,
    build: Build,
}

type MakeCase = fn(&mut RngState) -> Result<Case>;

fn random(shape: &[usize], scale: f64, rng: &mut RngState) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| scale * rng.normal()).collect()).expect("shape")
}

/// `Σ y ⊙ R` with a fixed, shape-dependent pattern `R`.
fn project(g: &mut Graph, y: Var) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let r = Tensor::new(shape, (0..n).map(|i| (1.3 * i as f64 + 0.7).sin()).collect())?;
    let r = g.constant(r);
    let m = g.mul(y, r)?;
    g.sum(m)
}

fn simple(inputs: Vec<(&str, Tensor)>, f: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static) -> Case {
    Case {
        inputs: inputs.into_iter().map(|(n, t)| (n.to_string(), t)).collect(),
        build: Box::new(move |g, v| {
            let y = f(g, v)?;
            project(g, y)
        }),
    }
}

fn leaf_name(name: &str) -> String {
    name.trim_start_matches('.').to_string()
}

fn jitter(t: &Tensor, rng: &mut RngState) -> Tensor {
    t.map(|v| v + 0.3 * rng.normal())
}

/// Runs one case and returns entries named `<case>.<input>`.
fn run_case(name: &str, make: MakeCase, cfg: &GradcheckConfig, rng: &mut RngState) -> Result<GradReport> {
    for _ in 0..MAX_ATTEMPTS {
        let case = make(rng)?;
        let mut g = Graph::new();
        if let Some(kind) = cfg.fault {
            g.inject_fault(kind);
        }
        let vars: Vec<Var> = case.inputs.iter().map(|(_, t)| g.param(t.clone())).collect();
        let loss = (case.build)(&mut g, &vars)?;
        if g.min_relu_margin() < KINK_MARGIN {
            continue;
        }
        let grads = g.backward(loss)?;
        let mut report = GradReport::new(cfg.step, cfg.tolerance);
        for (i, (input, value)) in case.inputs.iter().enumerate() {
            let numeric = finite_diff_grad(
                |probe| {
                    let mut g2 = Graph::new();
                    let vars2: Vec<Var> = case
                        .inputs
                        .iter()
                        .enumerate()
                        .map(|(j, (_, t))| g2.constant(if i == j { probe.clone() } else { t.clone() }))
                        .collect();
                    let l = (case.build)(&mut g2, &vars2)?;
                    Ok(g2.value(l).data()[0])
                },
                value,
                cfg.step,
            )?;
            let analytic = grads.get(vars[i]).expect("every param has a gradient");
            report.push(format!("{name}.{input}"), analytic, &numeric);
        }
        return Ok(report);
    }
    Err(Error::invalid("gradcheck", format!("{name}: could not draw inputs away from ReLU kinks")))
}

fn c(name: &'static str, make: MakeCase) -> (&'static str, MakeCase) {
    (name, make)
}

fn op_cases() -> Vec<(&'static str, MakeCase)> {
    vec![
        c("op.add", |r| Ok(simple(vec![("a", random(&[2, 3], 1.0, r)), ("b", random(&[2, 3], 1.0, r))], |g, v| g.add(v[0], v[1])))),
        c("op.sub", |r| Ok(simple(vec![("a", random(&[2, 3], 1.0, r)), ("b", random(&[2, 3], 1.0, r))], |g, v| g.sub(v[0], v[1])))),
        c("op.mul", |r| Ok(simple(vec![("a", random(&[2, 3], 1.0, r)), ("b", random(&[2, 3], 1.0, r))], |g, v| g.mul(v[0], v[1])))),
        c("op.scale", |r| Ok(simple(vec![("a", random(&[4], 1.0, r))], |g, v| g.scale(v[0], -2.5)))),
        c("op.relu", |r| Ok(simple(vec![("a", random(&[3, 4], 1.0, r))], |g, v| g.relu(v[0])))),
        c("op.sigmoid", |r| Ok(simple(vec![("a", random(&[3, 4], 1.5, r))], |g, v| g.sigmoid(v[0])))),
        c("op.tanh", |r| Ok(simple(vec![("a", random(&[3, 4], 1.5, r))], |g, v| g.tanh(v[0])))),
        c("op.matmul", |r| Ok(simple(vec![("a", random(&[2, 3], 1.0, r)), ("b", random(&[3, 4], 1.0, r))], |g, v| g.matmul(v[0], v[1])))),
        c("op.reshape", |r| Ok(simple(vec![("a", random(&[2, 3], 1.0, r))], |g, v| g.reshape(v[0], &[3, 2])))),
        c("op.conv1d_causal", |r| {
            let inputs = vec![("x", random(&[2, 7], 1.0, r)), ("w", random(&[3, 2, 3], 0.5, r)), ("b", random(&[3], 0.5, r))];
            Ok(simple(inputs, |g, v| g.conv1d(v[0], v[1], v[2], 2, false)))
        }),
        c("op.conv1d_anticausal", |r| {
            let inputs = vec![("x", random(&[2, 7], 1.0, r)), ("w", random(&[3, 2, 3], 0.5, r)), ("b", random(&[3], 0.5, r))];
            Ok(simple(inputs, |g, v| g.conv1d(v[0], v[1], v[2], 2, true)))
        }),
        c("op.depthwise", |r| {
            Ok(simple(vec![("x", random(&[3, 6], 1.0, r)), ("k", random(&[3, 3], 0.5, r))], |g, v| g.depthwise(v[0], v[1], 1)))
        }),
        c("op.pointwise", |r| {
            Ok(simple(vec![("x", random(&[3, 5], 1.0, r)), ("k", random(&[4, 3], 0.5, r))], |g, v| g.pointwise(v[0], v[1])))
        }),
        c("op.bias_add", |r| {
            Ok(simple(vec![("x", random(&[3, 5], 1.0, r)), ("b", random(&[3], 1.0, r))], |g, v| g.bias_add(v[0], v[1])))
        }),
        c("op.channel_scale", |r| {
            Ok(simple(vec![("x", random(&[3, 5], 1.0, r)), ("s", random(&[3], 1.0, r))], |g, v| g.channel_scale(v[0], v[1])))
        }),
        c("op.avg_pool_time", |r| Ok(simple(vec![("x", random(&[3, 5], 1.0, r))], |g, v| g.avg_pool_time(v[0])))),
        c("op.concat", |r| {
            Ok(simple(vec![("a", random(&[2, 4], 1.0, r)), ("b", random(&[3, 4], 1.0, r))], |g, v| g.concat(&[v[0], v[1]])))
        }),
        c("op.slice_channels", |r| Ok(simple(vec![("x", random(&[5, 3], 1.0, r))], |g, v| g.slice_channels(v[0], 1, 3)))),
        c("op.reverse_time", |r| Ok(simple(vec![("x", random(&[2, 5], 1.0, r))], |g, v| g.reverse_time(v[0])))),
        c("op.dropout", |r| {
            Ok(simple(vec![("x", random(&[4, 5], 1.0, r))], |g, v| g.dropout(v[0], 0.3, Some(&mut RngState::new(17)))))
        }),
        c("op.dense", |r| {
            let inputs = vec![("x", random(&[4], 1.0, r)), ("w", random(&[3, 4], 0.5, r)), ("b", random(&[3], 0.5, r))];
            Ok(simple(inputs, |g, v| g.dense(v[0], v[1], v[2])))
        }),
        c("op.lstm_scan", |r| {
            let inputs =
                vec![("x", random(&[2, 5], 1.0, r)), ("w_ih", random(&[12, 2], 0.5, r)), ("w_hh", random(&[12, 3], 0.5, r)), ("b", random(&[12], 0.5, r))];
            Ok(simple(inputs, |g, v| g.lstm_scan(v[0], v[1], v[2], v[3], false)))
        }),
        c("op.lstm_scan_reverse", |r| {
            let inputs =
                vec![("x", random(&[2, 5], 1.0, r)), ("w_ih", random(&[12, 2], 0.5, r)), ("w_hh", random(&[12, 3], 0.5, r)), ("b", random(&[12], 0.5, r))];
            Ok(simple(inputs, |g, v| g.lstm_scan(v[0], v[1], v[2], v[3], true)))
        }),
        c("op.cross_entropy", |r| {
            Ok(Case {
                inputs: vec![("logits".to_string(), random(&[5], 2.0, r))],
                build: Box::new(|g, v| g.cross_entropy(v[0], 2)),
            })
        }),
    ]
}

/// Inputs `x` plus every leaf of a parameter tree, jittered so biases are
/// non-zero.
macro_rules! layer_case {
    ($x:expr, $params:expr, $rng:expr, |$g:ident, $xv:ident, $pv:ident| $body:expr) => {{
        let params = $params;
        let params = params.map("", &mut |_, t| jitter(t, $rng));
        let mut inputs = vec![("x".to_string(), $x)];
        params.map("", &mut |n, t| inputs.push((leaf_name(n), t.clone())));
        Case {
            inputs,
            build: Box::new(move |$g: &mut Graph, v: &[Var]| {
                let mut it = v[1..].iter().copied();
                let $pv = params.map("", &mut |_, _| it.next().expect("leaf count"));
                let $xv = v[0];
                let y = $body?;
                project($g, y)
            }),
        }
    }};
}

fn layer_cases() -> Vec<(&'static str, MakeCase)> {
    vec![
        c("layer.tcn_block", |r| {
            let x = random(&[4, 7], 1.0, r);
            Ok(layer_case!(x, TcnBlockParams::init(4, 4, 3, 2, r), r, |g, x, p| layers::tcn_block(g, x, &p)))
        }),
        c("layer.tcn_block_projection", |r| {
            let x = random(&[3, 6], 1.0, r);
            Ok(layer_case!(x, TcnBlockParams::init(3, 4, 2, 1, r), r, |g, x, p| layers::tcn_block(g, x, &p)))
        }),
        c("layer.bitcn", |r| {
            let x = random(&[2, 6], 1.0, r);
            Ok(layer_case!(x, BiTcnParams::init(2, 3, 2, &[1, 2], r), r, |g, x, p| layers::bitcn(g, x, &p)))
        }),
        c("layer.separable", |r| {
            let x = random(&[3, 6], 1.0, r);
            Ok(layer_case!(x, SeparableParams::init(3, 4, 3, r), r, |g, x, p| layers::separable_stack(g, x, &p)))
        }),
        c("layer.se_block", |r| {
            let x = random(&[4, 5], 1.0, r);
            Ok(layer_case!(x, SeBlockParams::init(4, 2, SeGate::Sigmoid, r)?, r, |g, x, p| layers::se_block(g, x, &p)))
        }),
        c("layer.se_block_relu_gate", |r| {
            let x = random(&[4, 5], 1.0, r);
            Ok(layer_case!(x, SeBlockParams::init(4, 2, SeGate::Relu, r)?, r, |g, x, p| layers::se_block(g, x, &p)))
        }),
        c("layer.channel_attention", |r| {
            let x = random(&[6], 1.0, r);
            Ok(layer_case!(x, SeBlockParams::init(6, 3, SeGate::Sigmoid, r)?, r, |g, x, p| layers::channel_attention(g, x, &p)))
        }),
        c("layer.lstm_cell", |r| {
            let x = random(&[2], 1.0, r);
            let h0 = random(&[3], 0.5, r);
            let c0 = random(&[3], 0.5, r);
            Ok(layer_case!(x, LstmParams::init(2, 3, r), r, |g, x, p| {
                let h = g.constant(h0.clone());
                let c = g.constant(c0.clone());
                layers::lstm_cell(g, x, h, c, &p).and_then(|(h, c)| g.concat(&[h, c]))
            }))
        }),
        c("layer.bilstm_sum", |r| {
            let x = random(&[2, 4], 1.0, r);
            let pair = LstmPair(LstmParams::init(2, 3, r), LstmParams::init(2, 3, r));
            Ok(layer_case!(x, pair, r, |g, x, p| layers::bilstm(g, x, &p.0, &p.1, BiCombine::Sum)))
        }),
        c("layer.bilstm_concat", |r| {
            let x = random(&[2, 4], 1.0, r);
            let pair = LstmPair(LstmParams::init(2, 3, r), LstmParams::init(2, 3, r));
            Ok(layer_case!(x, pair, r, |g, x, p| layers::bilstm(g, x, &p.0, &p.1, BiCombine::Concat)))
        }),
        c("layer.dense", |r| {
            let x = random(&[5], 1.0, r);
            Ok(layer_case!(x, DenseParams::init(5, 3, r), r, |g, x, p| layers::dense(g, x, &p)))
        }),
        c("layer.dropout_train", |r| {
            let x = random(&[3, 4], 1.0, r);
            Ok(simple(vec![("x", x)], |g, v| layers::dropout(g, v[0], 0.2, Mode::Train, &mut RngState::new(5))))
        }),
    ]
}

/// Two LSTM parameter sets traversed as one tree.
struct LstmPair<P>(LstmParams<P>, LstmParams<P>);

impl<P> LstmPair<P> {
    fn map<Q>(&self, prefix: &str, f: &mut dyn FnMut(&str, &P) -> Q) -> LstmPair<Q> {
        LstmPair(self.0.map(&format!("{prefix}.forward"), f), self.1.map(&format!("{prefix}.backward"), f))
    }
}

/// Configuration of the small model used for the full-model check.
pub fn tiny_model_config() -> ModelConfig {
    let mut c = ModelConfig::new(3, 10, 3);
    c.stream_a.filters = 4;
    c.stream_a.dilations = vec![1, 2];
    c.stream_b.separable_filters = 4;
    c.stream_b.se_ratio = 2;
    c.stream_c.filters = 4;
    c.stream_c.lstm_hidden = 4;
    c
}

fn model_case(rng: &mut RngState) -> Result<Case> {
    let config = tiny_model_config();
    let stream = rng.next_u64();
    let params = model::build(&config, &AblationFlags::default(), &rng.fork(stream))?;
    let params = params.map(&mut |_, t| jitter(t, rng));
    let mut inputs = vec![("x".to_string(), random(&[config.channels, config.window], 1.0, rng))];
    params.map(&mut |n, t| inputs.push((n.to_string(), t.clone())));
    Ok(Case {
        inputs,
        build: Box::new(move |g, v| {
            let mut it = v[1..].iter().copied();
            let p = params.map(&mut |_, _| it.next().expect("leaf count"));
            let logits = model::forward_sample(g, &config, &p, v[0], Mode::Eval, &mut RngState::new(0))?;
            g.cross_entropy(logits, 1)
        }),
    })
}

/// Every op and layer case.
pub fn layer_suite(cfg: &GradcheckConfig) -> Result<GradReport> {
    let mut report = GradReport::new(cfg.step, cfg.tolerance);
    let root = RngState::new(cfg.seed);
    for (i, (name, make)) in op_cases().into_iter().chain(layer_cases()).enumerate() {
        report.merge(run_case(name, make, cfg, &mut root.fork(i as u64))?);
    }
    Ok(report)
}

/// The full three-stream model with attention on a `[3, 10]` input.
pub fn model_gradcheck(cfg: &GradcheckConfig) -> Result<GradReport> {
    run_case("model", model_case, cfg, &mut RngState::new(cfg.seed).fork(1_000))
}

/// Layer suite followed by the full-model check.
pub fn run_suite(cfg: &GradcheckConfig) -> Result<GradReport> {
    let mut report = layer_suite(cfg)?;
    report.merge(model_gradcheck(cfg)?);
    Ok(report)
}
