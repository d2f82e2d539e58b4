use serde::{Deserialize, Serialize};

use super::WindowedDataset;
use crate::error::{Error, Result};
use crate::rng::RngState;

pub const DEFAULT_TRAIN_REPS: [u16; 4] = [1, 3, 4, 6];
pub const DEFAULT_TEST_REPS: [u16; 2] = [2, 5];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SplitSpec {
    /// Stratified random split with the given relative weights.
    Ratio { train: f64, val: f64, test: f64 },
    /// Split by repetition id.
    Repetition { train_reps: Vec<u16>, test_reps: Vec<u16> },
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Ratio { train: 6.0, val: 2.0, test: 2.0 }
    }
}

impl SplitSpec {
    pub fn repetition_default() -> Self {
        SplitSpec::Repetition { train_reps: DEFAULT_TRAIN_REPS.to_vec(), test_reps: DEFAULT_TEST_REPS.to_vec() }
    }

    pub(crate) fn violations(&self) -> Vec<String> {
        match self {
            SplitSpec::Ratio { train, val, test } => {
                let w = [*train, *val, *test];
                if w.iter().any(|v| !(0.0..).contains(v)) || w.iter().sum::<f64>() <= 0.0 {
                    vec![format!("split ratios must be non-negative with a positive sum, got {w:?}")]
                } else {
                    Vec::new()
                }
            }
            SplitSpec::Repetition { train_reps, test_reps } => {
                if train_reps.iter().any(|r| test_reps.contains(r)) {
                    vec!["split train_reps and test_reps overlap".to_string()]
                } else {
                    Vec::new()
                }
            }
        }
    }
}

/// Stratified split. Within each class the window order is shuffled, then
/// `round(n·w_test)` windows go to test, `round(n·w_val)` to validation and
/// the rest to training (weights normalized to sum to one). Each output keeps
/// the original window order.
pub fn split_ratio(
    ds: &WindowedDataset,
    weights: [f64; 3],
    rng: &mut RngState,
) -> Result<(WindowedDataset, WindowedDataset, WindowedDataset)> {
    if ds.is_empty() {
        return Err(Error::Data("cannot split an empty dataset".into()));
    }
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(0.0..).contains(w)) || total.is_nan() || total <= 0.0 {
        return Err(Error::invalid("split_ratio", format!("bad weights {weights:?}")));
    }
    let (w_val, w_test) = (weights[1] / total, weights[2] / total);
    let mut by_class = vec![Vec::new(); ds.num_classes];
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut assign = vec![0u8; ds.len()];
    for (class, idx) in by_class.iter_mut().enumerate() {
        let n = idx.len();
        if n == 0 {
            continue;
        }
        if n < 5 {
            log::warn!("class {class} has only {n} windows; split is best-effort");
        }
        rng.shuffle(idx);
        let n_test = ((n as f64 * w_test).round() as usize).min(n);
        let n_val = ((n as f64 * w_val).round() as usize).min(n - n_test);
        for (k, &i) in idx.iter().enumerate() {
            assign[i] = if k < n_test {
                2
            } else if k < n_test + n_val {
                1
            } else {
                0
            };
        }
    }
    let pick = |side: u8| -> Vec<usize> { (0..ds.len()).filter(|&i| assign[i] == side).collect() };
    Ok((ds.subset(&pick(0)), ds.subset(&pick(1)), ds.subset(&pick(2))))
}

/// Membership by repetition id only. Windows whose repetition is in neither
/// set are dropped with a warning.
pub fn split_repetition(
    ds: &WindowedDataset,
    train_reps: &[u16],
    test_reps: &[u16],
) -> Result<(WindowedDataset, WindowedDataset)> {
    if let Some(r) = train_reps.iter().find(|r| test_reps.contains(r)) {
        return Err(Error::invalid("split_repetition", format!("repetition {r} is in both sets")));
    }
    let (mut train, mut test, mut dropped) = (Vec::new(), Vec::new(), 0usize);
    for (i, rep) in ds.repetitions.iter().enumerate() {
        if train_reps.contains(rep) {
            train.push(i);
        } else if test_reps.contains(rep) {
            test.push(i);
        } else {
            dropped += 1;
        }
    }
    if dropped > 0 {
        log::warn!("{dropped} windows have repetition ids outside both sets and were excluded");
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::Data(format!(
            "repetition split leaves {} training and {} test windows",
            train.len(),
            test.len()
        )));
    }
    Ok((ds.subset(&train), ds.subset(&test)))
}
