//! Central finite differences, the independent oracle for the reverse sweep.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Central-difference gradient of a scalar function of a tensor:
/// `(f(θ + h·e_i) − f(θ − h·e_i)) / 2h` for each coordinate.
pub fn finite_diff_grad(mut f: impl FnMut(&Tensor) -> Result<f64>, theta: &Tensor, h: f64) -> Result<Tensor> {
    let mut probe = theta.clone();
    let mut grad = Tensor::zeros(theta.shape());
    for i in 0..theta.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::invalid(
                "finite_diff_grad",
                format!("objective is not finite around coordinate {i}"),
            ));
        }
        grad.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Analytic-vs-numeric comparison for one named tensor.
#[derive(Clone, Debug, Serialize)]
pub struct GradEntry {
    pub name: String,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub passed: bool,
}

/// Outcome of a gradient check over several named tensors.
#[derive(Clone, Debug, Serialize)]
pub struct GradReport {
    pub entries: Vec<GradEntry>,
    pub step: f64,
    pub tolerance: f64,
}

impl GradReport {
    pub fn new(step: f64, tolerance: f64) -> Self {
        Self {
            entries: Vec::new(),
            step,
            tolerance,
        }
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.max_rel_err))
    }

    pub fn max_abs_err(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.max_abs_err))
    }

    pub fn failing(&self) -> Vec<&str> {
        self.entries.iter().filter(|e| !e.passed).map(|e| e.name.as_str()).collect()
    }

    pub fn push(&mut self, name: impl Into<String>, analytic: &Tensor, numeric: &Tensor) {
        let entry = compare_gradients(name, analytic, numeric, self.tolerance);
        self.entries.push(entry);
    }

    pub fn merge(&mut self, other: GradReport) {
        self.entries.extend(other.entries);
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(
                f,
                "{:<4} {:<40} max_abs_err={:.3e} max_rel_err={:.3e}",
                if e.passed { "ok" } else { "FAIL" },
                e.name,
                e.max_abs_err,
                e.max_rel_err
            )?;
        }
        if self.passed() {
            write!(f, "PASS max_rel_err={:.3e} <= {:.0e}", self.max_rel_err(), self.tolerance)
        } else {
            write!(f, "FAIL failing: {}", self.failing().join(", "))
        }
    }
}

/// Elementwise relative error `|a − n| / max(|a|, |n|, 1e−12)`.
pub fn compare_gradients(name: impl Into<String>, analytic: &Tensor, numeric: &Tensor, tolerance: f64) -> GradEntry {
    let mut max_abs: f64 = 0.0;
    let mut max_rel: f64 = 0.0;
    if analytic.shape() != numeric.shape() {
        max_abs = f64::INFINITY;
        max_rel = f64::INFINITY;
    } else {
        for (&a, &n) in analytic.data().iter().zip(numeric.data()) {
            let abs = (a - n).abs();
            let rel = abs / a.abs().max(n.abs()).max(1e-12);
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(rel);
        }
    }
    GradEntry {
        name: name.into(),
        max_abs_err: max_abs,
        max_rel_err: max_rel,
        passed: max_rel <= tolerance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::relu;

    #[test]
    fn square_at_three() {
        let g = finite_diff_grad(|t| Ok(t.data()[0] * t.data()[0]), &Tensor::vector(&[3.0]), 1e-5).unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn constant_function() {
        let g = finite_diff_grad(|_| Ok(4.2), &Tensor::vector(&[1.0, -2.0, 0.5]), 1e-5).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn relu_away_from_kink() {
        let g = finite_diff_grad(|t| Ok(relu(t.data()[0])), &Tensor::vector(&[1.0]), 1e-5).unwrap();
        assert!((g.data()[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn non_finite_objective_is_error() {
        assert!(finite_diff_grad(|_| Ok(f64::NAN), &Tensor::vector(&[1.0]), 1e-5).is_err());
    }

    #[test]
    fn relative_error_floor() {
        let e = compare_gradients("z", &Tensor::vector(&[0.0]), &Tensor::vector(&[0.0]), 1e-4);
        assert!(e.passed);
        let e = compare_gradients("x", &Tensor::vector(&[1.0]), &Tensor::vector(&[1.001]), 1e-4);
        assert!(!e.passed);
    }
}
