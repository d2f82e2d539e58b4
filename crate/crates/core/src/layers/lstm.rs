use serde::{Deserialize, Serialize};

use super::{binder, fan_in_uniform};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// How the two directions of a bidirectional layer are merged per timestep.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiCombine {
    #[default]
    Sum,
    Concat,
}

/// Standard four-gate LSTM. Rows of the stacked matrices are grouped as
/// input, forget, candidate, output gates: `w_ih [4H, C]`, `w_hh [4H, H]`,
/// `bias [4H]`. Initial hidden and cell states are zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmParams<P = Tensor> {
    pub w_ih: P,
    pub w_hh: P,
    pub bias: P,
}

impl LstmParams<Tensor> {
    pub fn init(input: usize, hidden: usize, rng: &mut RngState) -> Self {
        Self {
            w_ih: fan_in_uniform(&[4 * hidden, input], input, 1.0, rng),
            w_hh: fan_in_uniform(&[4 * hidden, hidden], hidden, 1.0, rng),
            bias: Tensor::zeros(&[4 * hidden]),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_ih: Tensor::zeros(&[4 * hidden, input]),
            w_hh: Tensor::zeros(&[4 * hidden, hidden]),
            bias: Tensor::zeros(&[4 * hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.dim(1)
    }

    pub fn bind(&self, g: &mut Graph) -> LstmParams<Var> {
        self.map("", &mut binder(g))
    }
}

impl<P> LstmParams<P> {
    pub fn map<Q>(&self, prefix: &str, f: &mut dyn FnMut(&str, &P) -> Q) -> LstmParams<Q> {
        LstmParams {
            w_ih: f(&format!("{prefix}.w_ih"), &self.w_ih),
            w_hh: f(&format!("{prefix}.w_hh"), &self.w_hh),
            bias: f(&format!("{prefix}.bias"), &self.bias),
        }
    }
}

/// One LSTM step composed from elementary graph ops. Returns `(h_t, c_t)`.
pub fn lstm_cell(g: &mut Graph, x: Var, h_prev: Var, c_prev: Var, p: &LstmParams<Var>) -> Result<(Var, Var)> {
    let h = g.shape(p.w_hh)[1];
    if g.shape(h_prev) != [h] || g.shape(c_prev) != [h] {
        return Err(Error::shape("lstm_cell", g.shape(h_prev), g.shape(p.w_hh)));
    }
    let no_bias = g.constant(Tensor::zeros(&[4 * h]));
    let ax = g.dense(x, p.w_ih, p.bias)?;
    let ah = g.dense(h_prev, p.w_hh, no_bias)?;
    let a = g.add(ax, ah)?;
    let gate = |g: &mut Graph, k: usize| g.slice_channels(a, k * h, h);
    let i = gate(g, 0)?;
    let i = g.sigmoid(i)?;
    let f = gate(g, 1)?;
    let f = g.sigmoid(f)?;
    let cand = gate(g, 2)?;
    let cand = g.tanh(cand)?;
    let o = gate(g, 3)?;
    let o = g.sigmoid(o)?;
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c)?;
    let h_new = g.mul(o, tc)?;
    Ok((h_new, c))
}

/// Whole-sequence LSTM over `[C, T]` (fused op with hand-written BPTT).
pub fn lstm_scan(g: &mut Graph, x: Var, p: &LstmParams<Var>, reverse: bool) -> Result<Var> {
    g.lstm_scan(x, p.w_ih, p.w_hh, p.bias, reverse)
}

/// Forward scan over `t = 0..T`, backward scan over `t = T-1..0`, merged per
/// timestep.
pub fn bilstm(g: &mut Graph, x: Var, fwd: &LstmParams<Var>, bwd: &LstmParams<Var>, combine: BiCombine) -> Result<Var> {
    let hf = lstm_scan(g, x, fwd, false)?;
    let hb = lstm_scan(g, x, bwd, true)?;
    match combine {
        BiCombine::Sum => {
            if g.shape(hf) != g.shape(hb) {
                return Err(Error::shape("bilstm", g.shape(hf), g.shape(hb)));
            }
            g.add(hf, hb)
        }
        BiCombine::Concat => g.concat(&[hf, hb]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::evaluate;
    use crate::tensor::{reverse_time, sigmoid};

    fn cell(x: &Tensor, h: &Tensor, c: &Tensor, p: &LstmParams) -> (Tensor, Tensor) {
        let mut g = Graph::new();
        let (xv, hv, cv) = (g.constant(x.clone()), g.constant(h.clone()), g.constant(c.clone()));
        let pv = p.bind(&mut g);
        let (h2, c2) = lstm_cell(&mut g, xv, hv, cv, &pv).unwrap();
        (g.value(h2).clone(), g.value(c2).clone())
    }

    fn seq(c: usize, t: usize, seed: u64) -> Tensor {
        let mut rng = RngState::new(seed);
        Tensor::new(vec![c, t], (0..c * t).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn zero_params_hand_values() {
        let p = LstmParams::zeros(2, 3);
        let c_prev = Tensor::vector(&[1.0, -2.0, 0.5]);
        let (h, c) = cell(&Tensor::vector(&[0.3, 0.7]), &Tensor::vector(&[0.1, 0.2, 0.3]), &c_prev, &p);
        assert_eq!(c, c_prev.scale(0.5));
        for (hv, cv) in h.data().iter().zip(c_prev.data()) {
            assert!((hv - 0.5 * (0.5 * cv).tanh()).abs() < 1e-15);
        }
        let (h0, _) = cell(&Tensor::vector(&[0.3, 0.7]), &Tensor::zeros(&[3]), &Tensor::zeros(&[3]), &p);
        assert_eq!(h0, Tensor::zeros(&[3]));
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn hidden_state_bounded() {
        let mut rng = RngState::new(4);
        let mut p = LstmParams::init(3, 4, &mut rng);
        p.w_ih = p.w_ih.scale(20.0);
        let (h, _) = cell(&Tensor::vector(&[5.0, -7.0, 3.0]), &Tensor::full(&[4], 0.9), &Tensor::full(&[4], 50.0), &p);
        assert!(h.data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn fused_scan_matches_composed_cells() {
        let mut rng = RngState::new(5);
        let mut p = LstmParams::init(3, 4, &mut rng);
        p.bias = Tensor::new(vec![16], (0..16).map(|_| rng.normal() * 0.2).collect()).unwrap();
        let x = seq(3, 7, 6);
        for reverse in [false, true] {
            let fused = evaluate(|g| {
                let xv = g.constant(x.clone());
                let pv = p.bind(g);
                lstm_scan(g, xv, &pv, reverse)
            })
            .unwrap();
            let mut h = Tensor::zeros(&[4]);
            let mut c = Tensor::zeros(&[4]);
            for s in 0..7 {
                let t = if reverse { 6 - s } else { s };
                let xt = Tensor::vector(&(0..3).map(|ch| x.at2(ch, t)).collect::<Vec<_>>());
                (h, c) = cell(&xt, &h, &c, &p);
                for j in 0..4 {
                    assert!((fused.at2(j, t) - h.data()[j]).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn backward_scan_is_reversed_forward_scan() {
        let mut rng = RngState::new(7);
        let p = LstmParams::init(2, 3, &mut rng);
        let x = seq(2, 5, 8);
        let backward = evaluate(|g| {
            let xv = g.constant(x.clone());
            let pv = p.bind(g);
            lstm_scan(g, xv, &pv, true)
        })
        .unwrap();
        let forward_on_reversed = evaluate(|g| {
            let xv = g.constant(reverse_time(&x).unwrap());
            let pv = p.bind(g);
            lstm_scan(g, xv, &pv, false)
        })
        .unwrap();
        let oracle = reverse_time(&forward_on_reversed).unwrap();
        for (a, b) in backward.data().iter().zip(oracle.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn combine_modes() {
        let x = seq(2, 4, 9);
        let zero = LstmParams::zeros(2, 3);
        let run = |fwd: &LstmParams, bwd: &LstmParams, combine| {
            evaluate(|g| {
                let xv = g.constant(x.clone());
                let (f, b) = (fwd.bind(g), bwd.bind(g));
                bilstm(g, xv, &f, &b, combine)
            })
        };
        assert_eq!(run(&zero, &zero, BiCombine::Sum).unwrap(), Tensor::zeros(&[3, 4]));
        assert_eq!(run(&zero, &zero, BiCombine::Concat).unwrap().shape(), &[6, 4]);
        let other = LstmParams::zeros(2, 5);
        assert!(run(&zero, &other, BiCombine::Sum).is_err());
        assert_eq!(run(&zero, &other, BiCombine::Concat).unwrap().shape(), &[8, 4]);
    }
}
