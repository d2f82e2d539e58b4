//! Recordings, windowed datasets and the preprocessing pipeline.
//!
//! The pipeline order is standardize → slice → split → augment, with noise
//! augmentation applied to the training split only.

mod emgb;
mod split;
mod synth;

pub use emgb::{load_emgb, read_emgb, save_emgb, write_emgb, EMGB_MAGIC};
pub use split::{split_ratio, split_repetition, SplitSpec, DEFAULT_TEST_REPS, DEFAULT_TRAIN_REPS};
pub use synth::{synth_generate, SynthConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// A continuous multi-channel recording with a per-sample label stream
/// (`0` = rest) and per-sample repetition ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub signal: Tensor,
    pub labels: Vec<u16>,
    pub repetitions: Vec<u16>,
    pub subject: u16,
}

impl Recording {
    pub fn new(signal: Tensor, labels: Vec<u16>, repetitions: Vec<u16>, subject: u16) -> Result<Self> {
        if signal.rank() != 2 {
            return Err(Error::Data(format!("recording signal must be [C, N], got {:?}", signal.shape())));
        }
        let n = signal.dim(1);
        if labels.len() != n || repetitions.len() != n {
            return Err(Error::Data(format!(
                "recording has {n} samples but {} labels and {} repetition ids",
                labels.len(),
                repetitions.len()
            )));
        }
        Ok(Self { signal, labels, repetitions, subject })
    }

    pub fn channels(&self) -> usize {
        self.signal.dim(0)
    }

    pub fn len(&self) -> usize {
        self.signal.dim(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fixed-length windows `[N, C, W]` with one class id per window.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedDataset {
    pub windows: Tensor,
    pub labels: Vec<usize>,
    pub subjects: Vec<u16>,
    pub repetitions: Vec<u16>,
    pub num_classes: usize,
}

impl WindowedDataset {
    pub fn new(
        windows: Tensor,
        labels: Vec<usize>,
        subjects: Vec<u16>,
        repetitions: Vec<u16>,
        num_classes: usize,
    ) -> Result<Self> {
        if windows.rank() != 3 {
            return Err(Error::Data(format!("windows must be [N, C, W], got {:?}", windows.shape())));
        }
        let n = windows.dim(0);
        if labels.len() != n || subjects.len() != n || repetitions.len() != n {
            return Err(Error::Data(format!(
                "{n} windows but {} labels, {} subject ids, {} repetition ids",
                labels.len(),
                subjects.len(),
                repetitions.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Data(format!("label {bad} out of range for {num_classes} classes")));
        }
        Ok(Self { windows, labels, subjects, repetitions, num_classes })
    }

    pub fn empty(channels: usize, window: usize, num_classes: usize) -> Self {
        Self {
            windows: Tensor::zeros(&[0, channels, window]),
            labels: Vec::new(),
            subjects: Vec::new(),
            repetitions: Vec::new(),
            num_classes,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.windows.dim(1)
    }

    pub fn window_len(&self) -> usize {
        self.windows.dim(2)
    }

    /// Window `i` as a `[C, W]` tensor.
    pub fn window(&self, i: usize) -> Tensor {
        self.windows.index_axis0(i)
    }

    pub fn window_data(&self, i: usize) -> &[f64] {
        let stride = self.channels() * self.window_len();
        &self.windows.data()[i * stride..(i + 1) * stride]
    }

    /// Windows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let (c, w) = (self.channels(), self.window_len());
        let mut data = Vec::with_capacity(indices.len() * c * w);
        for &i in indices {
            data.extend_from_slice(self.window_data(i));
        }
        Self {
            windows: Tensor::new(vec![indices.len(), c, w], data).expect("consistent shape"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            subjects: indices.iter().map(|&i| self.subjects[i]).collect(),
            repetitions: indices.iter().map(|&i| self.repetitions[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Appends `other`, which must have the same window shape.
    pub fn extend(&mut self, other: &WindowedDataset) -> Result<()> {
        if other.windows.shape()[1..] != self.windows.shape()[1..] {
            return Err(Error::shape("extend", self.windows.shape(), other.windows.shape()));
        }
        let mut data = std::mem::replace(&mut self.windows, Tensor::zeros(&[0])).into_data();
        data.extend_from_slice(other.windows.data());
        let n = self.len() + other.len();
        self.windows = Tensor::new(vec![n, other.channels(), other.window_len()], data)?;
        self.labels.extend_from_slice(&other.labels);
        self.subjects.extend_from_slice(&other.subjects);
        self.repetitions.extend_from_slice(&other.repetitions);
        self.num_classes = self.num_classes.max(other.num_classes);
        Ok(())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub window: usize,
    pub stride: usize,
    pub noise_variance: f64,
    /// Number of noisy copies of each training window to append.
    pub augment_copies: usize,
    pub epsilon: f64,
    /// Keep rest windows as class 0 instead of dropping them.
    pub include_rest: bool,
    pub split: SplitSpec,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            window: 500,
            stride: 500,
            noise_variance: 0.1,
            augment_copies: 1,
            epsilon: 1e-8,
            include_rest: false,
            split: SplitSpec::default(),
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if self.window == 0 {
            v.push("preprocess.window must be at least 1".to_string());
        }
        if self.stride == 0 {
            v.push("preprocess.stride must be at least 1".to_string());
        }
        if !(0.0..).contains(&self.noise_variance) {
            v.push(format!("preprocess.noise_variance must be non-negative, got {}", self.noise_variance));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            v.push(format!("preprocess.epsilon must be positive, got {}", self.epsilon));
        }
        v.extend(self.split.violations());
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

/// Per-channel standardization with `ε = 1e-8`.
pub fn zscore(x: &Tensor) -> Result<Tensor> {
    zscore_eps(x, 1e-8)
}

/// `(x − μ_c) / max(σ_c, ε)` per channel, population standard deviation.
/// Constant channels map to zeros.
pub fn zscore_eps(x: &Tensor, eps: f64) -> Result<Tensor> {
    let (c, t) = crate::tensor::dims2("zscore", x)?;
    if t == 0 {
        return Err(Error::invalid("zscore", "empty time axis"));
    }
    let mut out = vec![0.0; c * t];
    for ch in 0..c {
        let row = &x.data()[ch * t..(ch + 1) * t];
        let dst = &mut out[ch * t..(ch + 1) * t];
        if row.iter().all(|&v| v == row[0]) {
            continue;
        }
        let mean = row.iter().sum::<f64>() / t as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t as f64;
        let scale = var.sqrt().max(eps);
        for (d, v) in dst.iter_mut().zip(row) {
            *d = (v - mean) / scale;
        }
    }
    Tensor::new(vec![c, t], out)
}

/// `x + n` with `n` i.i.d. normal, mean 0 and the given variance.
pub fn add_gaussian_noise(x: &Tensor, variance: f64, rng: &mut RngState) -> Result<Tensor> {
    if !(0.0..).contains(&variance) {
        return Err(Error::invalid("add_gaussian_noise", format!("variance must be non-negative, got {variance}")));
    }
    if variance == 0.0 {
        return Ok(x.clone());
    }
    let sd = variance.sqrt();
    Ok(x.map(|v| v + sd * rng.normal()))
}

/// Training set plus `copies` noisy versions of every window.
pub fn augment(ds: &WindowedDataset, variance: f64, copies: usize, rng: &mut RngState) -> Result<WindowedDataset> {
    let mut out = ds.clone();
    for _ in 0..copies {
        let mut noisy = ds.clone();
        noisy.windows = add_gaussian_noise(&ds.windows, variance, rng)?;
        out.extend(&noisy)?;
    }
    Ok(out)
}

/// Cuts windows from maximal runs of constant (label, repetition). A window
/// never crosses a run boundary; remainders shorter than the window are
/// dropped. Rest windows are dropped unless `include_rest`, in which case
/// gesture `g` keeps class id `g`; otherwise it becomes class `g − 1`.
pub fn slice_windows(rec: &Recording, cfg: &PreprocessConfig) -> Result<WindowedDataset> {
    cfg.validate()?;
    let (c, n, w) = (rec.channels(), rec.len(), cfg.window);
    let max_label = rec.labels.iter().copied().max().unwrap_or(0) as usize;
    let num_classes = if cfg.include_rest { max_label + 1 } else { max_label.max(1) };
    if w > n {
        log::warn!("window length {w} exceeds recording length {n}; no windows produced");
        return Ok(WindowedDataset::empty(c, w, num_classes));
    }
    let mut data = Vec::new();
    let (mut labels, mut subjects, mut reps) = (Vec::new(), Vec::new(), Vec::new());
    let mut start = 0;
    while start < n {
        let key = (rec.labels[start], rec.repetitions[start]);
        let mut end = start + 1;
        while end < n && (rec.labels[end], rec.repetitions[end]) == key {
            end += 1;
        }
        let (label, rep) = key;
        if label != 0 || cfg.include_rest {
            let class = if cfg.include_rest { label as usize } else { label as usize - 1 };
            let mut s = start;
            while s + w <= end {
                for ch in 0..c {
                    data.extend_from_slice(&rec.signal.data()[ch * n + s..ch * n + s + w]);
                }
                labels.push(class);
                subjects.push(rec.subject);
                reps.push(rep);
                s += cfg.stride;
            }
        }
        start = end;
    }
    let windows = Tensor::new(vec![labels.len(), c, w], data)?;
    WindowedDataset::new(windows, labels, subjects, reps, num_classes)
}

/// Train, validation and test sets ready for fitting.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: WindowedDataset,
    pub val: WindowedDataset,
    pub test: WindowedDataset,
}

/// Standardize, slice, split, then augment the training split.
pub fn preprocess(rec: &Recording, cfg: &PreprocessConfig, rng: &mut RngState) -> Result<Splits> {
    let standardized = Recording { signal: zscore_eps(&rec.signal, cfg.epsilon)?, ..rec.clone() };
    let ds = slice_windows(&standardized, cfg)?;
    let (train, val, test) = match &cfg.split {
        SplitSpec::Ratio { train, val, test } => split_ratio(&ds, [*train, *val, *test], rng)?,
        SplitSpec::Repetition { train_reps, test_reps } => {
            let (train, test) = split_repetition(&ds, train_reps, test_reps)?;
            // validation windows come from the training repetitions
            let (train, val, _) = split_ratio(&train, [4.0, 1.0, 0.0], rng)?;
            (train, val, test)
        }
    };
    let train = augment(&train, cfg.noise_variance, cfg.augment_copies, rng)?;
    Ok(Splits { train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recording(labels: Vec<u16>, c: usize) -> Recording {
        let n = labels.len();
        let signal = Tensor::new(vec![c, n], (0..c * n).map(|i| i as f64).collect()).unwrap();
        Recording::new(signal, labels, vec![1; n], 3).unwrap()
    }

    fn cfg(window: usize) -> PreprocessConfig {
        PreprocessConfig { window, stride: window, ..Default::default() }
    }

    #[test]
    fn zscore_hand_values() {
        let y = zscore(&Tensor::matrix(&[&[1.0, 2.0, 3.0]])).unwrap();
        for (a, b) in y.data().iter().zip([-1.2247, 0.0, 1.2247]) {
            assert!((a - b).abs() <= 1e-4);
        }
        let y = zscore(&Tensor::matrix(&[&[0.1, 0.1, 0.1]])).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn zscore_statistics_and_fixed_point() {
        let mut rng = RngState::new(1);
        let x = Tensor::new(vec![3, 1000], (0..3000).map(|_| 5.0 + 3.0 * rng.normal()).collect()).unwrap();
        let y = zscore(&x).unwrap();
        for ch in 0..3 {
            let row = &y.data()[ch * 1000..(ch + 1) * 1000];
            let mean = row.iter().sum::<f64>() / 1000.0;
            let sd = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 1000.0).sqrt();
            assert!(mean.abs() <= 1e-10 && (sd - 1.0).abs() <= 1e-10);
        }
        let z = zscore(&y).unwrap();
        assert!(z.data().iter().zip(y.data()).all(|(a, b)| (a - b).abs() <= 1e-12));
    }

    #[test]
    fn noise_identity_and_purity() {
        let x = Tensor::full(&[2, 5], 1.5);
        let mut rng = RngState::new(2);
        assert_eq!(add_gaussian_noise(&x, 0.0, &mut rng).unwrap(), x);
        let y = add_gaussian_noise(&x, 0.1, &mut rng).unwrap();
        assert_ne!(y, x);
        assert_eq!(x, Tensor::full(&[2, 5], 1.5));
        assert!(add_gaussian_noise(&x, -1.0, &mut rng).is_err());
    }

    #[test]
    fn noise_independent_across_calls() {
        let n = 100_000;
        let x = Tensor::zeros(&[n]);
        let mut rng = RngState::new(3);
        let a = add_gaussian_noise(&x, 0.1, &mut rng).unwrap();
        let b = add_gaussian_noise(&x, 0.1, &mut rng).unwrap();
        let dot: f64 = a.data().iter().zip(b.data()).map(|(p, q)| p * q).sum();
        let corr = dot / (a.data().iter().map(|v| v * v).sum::<f64>() * b.data().iter().map(|v| v * v).sum::<f64>()).sqrt();
        assert!(corr.abs() <= 0.01, "{corr}");
    }

    #[test]
    fn slicing_counts() {
        let ds = slice_windows(&recording(vec![1; 2600], 2), &cfg(500)).unwrap();
        assert_eq!(ds.len(), 5);
        assert_eq!(ds.labels, vec![0; 5]);
        assert_eq!(ds.window(1).at2(0, 0), 500.0);
        assert_eq!(ds.window(1).at2(1, 0), 2600.0 + 500.0);
        let ds = slice_windows(&recording(vec![1; 499], 1), &cfg(500)).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn slicing_respects_label_boundaries_and_rest() {
        let mut labels = vec![1u16; 7];
        labels.extend([2u16; 5]);
        labels.extend([0u16; 8]);
        let ds = slice_windows(&recording(labels.clone(), 1), &cfg(3)).unwrap();
        assert_eq!(ds.labels, vec![0, 0, 1]);
        for i in 0..ds.len() {
            let start = ds.window(i).data()[0] as usize;
            let run = &labels[start..start + 3];
            assert!(run.iter().all(|&l| l == run[0]));
        }
        let with_rest = slice_windows(&recording(labels, 1), &PreprocessConfig { include_rest: true, ..cfg(3) }).unwrap();
        assert_eq!(with_rest.labels, vec![1, 1, 2, 0, 0]);
        assert_eq!(with_rest.num_classes, 3);
    }

    #[test]
    fn overlapping_stride() {
        let c = PreprocessConfig { window: 4, stride: 2, ..Default::default() };
        let ds = slice_windows(&recording(vec![1; 10], 1), &c).unwrap();
        assert_eq!(ds.len(), 4);
    }

    #[test]
    fn augmentation_preserves_labels() {
        let ds = slice_windows(&recording(vec![1; 20], 2), &cfg(5)).unwrap();
        let before = ds.clone();
        let aug = augment(&ds, 0.1, 2, &mut RngState::new(0)).unwrap();
        assert_eq!(ds, before);
        assert_eq!(aug.len(), 3 * ds.len());
        assert_eq!(aug.labels[..4], aug.labels[4..8]);
        assert_eq!(aug.windows.shape()[1..], ds.windows.shape()[1..]);
    }

    #[test]
    fn preprocess_pipeline() {
        let mut labels = Vec::new();
        for g in 1..=2u16 {
            labels.extend(vec![g; 100]);
            labels.extend(vec![0u16; 20]);
        }
        let rec = recording(labels, 2);
        let cfg = PreprocessConfig { window: 10, stride: 10, ..Default::default() };
        let s = preprocess(&rec, &cfg, &mut RngState::new(1)).unwrap();
        assert_eq!(s.val.len() + s.test.len() + s.train.len() / 2, 20);
    }
}
