use serde::{Deserialize, Serialize};

use super::{binder, fan_in_uniform};
use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::rng::RngState;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseParams<P = Tensor> {
    pub weight: P,
    pub bias: P,
}

impl DenseParams<Tensor> {
    pub fn init(inputs: usize, outputs: usize, rng: &mut RngState) -> Self {
        Self {
            weight: fan_in_uniform(&[outputs, inputs], inputs, 1.0, rng),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn bind(&self, g: &mut Graph) -> DenseParams<Var> {
        self.map("", &mut binder(g))
    }
}

impl<P> DenseParams<P> {
    pub fn map<Q>(&self, prefix: &str, f: &mut dyn FnMut(&str, &P) -> Q) -> DenseParams<Q> {
        DenseParams {
            weight: f(&format!("{prefix}.weight"), &self.weight),
            bias: f(&format!("{prefix}.bias"), &self.bias),
        }
    }
}

pub fn dense(g: &mut Graph, x: Var, p: &DenseParams<Var>) -> Result<Var> {
    g.dense(x, p.weight, p.bias)
}

/// Inverted dropout in training mode, identity in evaluation mode.
pub fn dropout(g: &mut Graph, x: Var, rate: f64, mode: Mode, rng: &mut RngState) -> Result<Var> {
    match mode {
        Mode::Train => g.dropout(x, rate, Some(rng)),
        Mode::Eval => g.dropout(x, rate, None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::evaluate;

    fn run_dense(x: &Tensor, p: &DenseParams) -> Tensor {
        evaluate(|g| {
            let xv = g.constant(x.clone());
            let pv = p.bind(g);
            dense(g, xv, &pv)
        })
        .unwrap()
    }

    #[test]
    fn dense_cases() {
        let x = Tensor::vector(&[2.0, 3.0]);
        let id = DenseParams { weight: Tensor::eye(2), bias: Tensor::zeros(&[2]) };
        assert_eq!(run_dense(&x, &id), x);
        let p = DenseParams { weight: Tensor::matrix(&[&[1.0, 1.0]]), bias: Tensor::vector(&[1.0]) };
        assert_eq!(run_dense(&x, &p).data(), &[6.0]);
        let b = Tensor::vector(&[0.5, -1.5, 2.0]);
        let p = DenseParams { weight: Tensor::zeros(&[3, 2]), bias: b.clone() };
        assert_eq!(run_dense(&x, &p), b);
    }

    fn run_dropout(x: &Tensor, rate: f64, mode: Mode, seed: u64) -> Result<Tensor> {
        let mut rng = RngState::new(seed);
        evaluate(|g| {
            let xv = g.constant(x.clone());
            dropout(g, xv, rate, mode, &mut rng)
        })
    }

    #[test]
    fn dropout_identities() {
        let x = Tensor::new(vec![3, 4], (0..12).map(|i| i as f64 * 0.3 - 1.0).collect()).unwrap();
        assert_eq!(run_dropout(&x, 0.2, Mode::Eval, 1).unwrap(), x);
        assert_eq!(run_dropout(&x, 0.0, Mode::Train, 1).unwrap(), x);
        assert_eq!(run_dropout(&x, 0.0, Mode::Eval, 1).unwrap(), x);
        assert!(run_dropout(&x, 1.0, Mode::Train, 1).is_err());
    }

    #[test]
    fn dropout_statistics() {
        let n = 100_000;
        let x = Tensor::full(&[n], 1.0);
        let y = run_dropout(&x, 0.2, Mode::Train, 1234).unwrap();
        let survivors = y.data().iter().filter(|&&v| v != 0.0).count() as f64 / n as f64;
        assert!((survivors - 0.8).abs() <= 0.01, "{survivors}");
        let mean = y.sum() / n as f64;
        assert!((mean - 1.0).abs() <= 0.02, "{mean}");
        assert!(y.data().iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-15));
    }
}
