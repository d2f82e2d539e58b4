//! Training loop, evaluation and the ablation harness.

mod adam;
mod metrics;

pub use adam::{adam_step, AdamState};
pub use metrics::{
    argmax, cross_entropy, format_subject_table, per_subject, probabilities, sample_cross_entropy, ClassMetrics,
    MetricsReport,
};

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::WindowedDataset;
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::model::{count_flops, AblationFlags, Model, ModelConfig};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Named hyperparameter profiles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// lr 0.01, batch 32, 100 epochs
    Db2,
    /// lr 0.0025, batch 32, 100 epochs
    Db4,
    /// lr 0.01, batch 32, 100 epochs
    Db5,
    /// lr 0.001, batch 32, 100 epochs
    Legacy,
    /// lr 0.01, batch 32, 30 epochs
    Synth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Stop after this many epochs without a new best validation result.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.01, batch_size: 32, epochs: 100, seed: 0, patience: None }
    }
}

impl TrainConfig {
    pub fn preset(preset: Preset) -> Self {
        let base = Self::default();
        match preset {
            Preset::Db2 | Preset::Db5 => base,
            Preset::Db4 => Self { learning_rate: 0.0025, ..base },
            Preset::Legacy => Self { learning_rate: 0.001, ..base },
            Preset::Synth => Self { epochs: 30, ..base },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            v.push(format!("train.learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            v.push("train.batch_size must be positive".to_string());
        }
        if self.patience == Some(0) {
            v.push("train.patience must be positive when set".to_string());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

/// One line of the training log. Accuracy is in percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were kept, `None` if no epoch ran.
    pub best_epoch: Option<usize>,
}

impl TrainLog {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub log: TrainLog,
    /// Parameters from the epoch with the best validation accuracy (ties go
    /// to the lower validation loss).
    pub best: Model,
    pub last: Model,
}

/// Checks that windows, channels and class count agree with the model.
pub fn check_compatible(config: &ModelConfig, ds: &WindowedDataset) -> Result<()> {
    let mut issues = Vec::new();
    if ds.channels() != config.channels {
        issues.push(format!("channels: model C={}, data C={}", config.channels, ds.channels()));
    }
    if ds.window_len() != config.window {
        issues.push(format!("window: model W={}, data W={}", config.window, ds.window_len()));
    }
    if ds.num_classes != config.num_classes {
        issues.push(format!("classes: model K={}, data K={}", config.num_classes, ds.num_classes));
    }
    if issues.is_empty() {
        Ok(())
    } else {
        Err(Error::Data(format!("model/data mismatch ({})", issues.join(", "))))
    }
}

/// Eval-mode logits for every window, computed in parallel.
pub fn predict(model: &Model, ds: &WindowedDataset) -> Result<Vec<Tensor>> {
    check_compatible(&model.config, ds)?;
    let mut rng = RngState::new(0);
    if ds.len() < 2 {
        return (0..ds.len()).map(|i| model.logits(&ds.window(i), Mode::Eval, &mut rng)).collect();
    }
    (0..ds.len())
        .into_par_iter()
        .map(|i| model.logits(&ds.window(i), Mode::Eval, &mut RngState::new(0)))
        .collect()
}

pub fn evaluate(model: &Model, ds: &WindowedDataset) -> Result<MetricsReport> {
    if ds.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    let logits = predict(model, ds)?;
    MetricsReport::from_logits(&logits, &ds.labels, ds.num_classes)
}

/// Mini-batch Adam on per-window cross-entropy. Shuffling and dropout draw
/// from separate forks of `cfg.seed`, so a run is reproducible bit for bit.
pub fn fit(model: &Model, train: &WindowedDataset, val: &WindowedDataset, cfg: &TrainConfig) -> Result<FitOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data(format!(
            "training needs non-empty sets, got {} training and {} validation windows",
            train.len(),
            val.len()
        )));
    }
    check_compatible(&model.config, train)?;
    check_compatible(&model.config, val)?;
    let root = RngState::new(cfg.seed);
    let mut shuffle_rng = root.fork(1);
    let mut dropout_rng = root.fork(2);
    let mut current = model.clone();
    let mut params = current.params.tensors();
    let mut adam = AdamState::new(&params, cfg.learning_rate);
    let mut log = TrainLog::default();
    let mut best = model.clone();
    let mut best_key: Option<(f64, f64)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            for &i in batch {
                let sg = current
                    .sample_grad(&train.window(i), train.labels[i], Mode::Train, &mut dropout_rng)
                    .map_err(|e| match e {
                        Error::NonFinite { .. } => Error::Diverged { epoch, batch: b, reason: e.to_string() },
                        other => other,
                    })?;
                if !sg.loss.is_finite() {
                    return Err(Error::Diverged { epoch, batch: b, reason: format!("loss is {}", sg.loss) });
                }
                loss_sum += sg.loss;
                for (acc, g) in grads.iter_mut().zip(&sg.grads) {
                    acc.add_assign(g);
                }
            }
            let inv = 1.0 / batch.len() as f64;
            let grads: Vec<Tensor> = grads.iter().map(|g| g.scale(inv)).collect();
            adam_step(&mut params, &grads, &mut adam)?;
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Diverged { epoch, batch: b, reason: "parameters became non-finite".into() });
            }
            current.params = current.params.with_tensors(params.clone())?;
        }
        let report = evaluate(&current, val)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss: report.loss.unwrap_or(f64::NAN),
            val_accuracy: report.accuracy,
        };
        log::info!(
            "epoch {epoch}: train_loss={:.4} val_loss={:.4} val_accuracy={:.2}%",
            record.train_loss,
            record.val_loss,
            record.val_accuracy
        );
        let key = (record.val_accuracy, -record.val_loss);
        let improved = match best_key {
            None => true,
            Some(prev) => key.0 > prev.0 || (key.0 == prev.0 && key.1 > prev.1),
        };
        log.records.push(record);
        if improved {
            best_key = Some(key);
            best = current.clone();
            log.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience.is_some_and(|p| since_best >= p) {
                log::info!("stopping early after {since_best} epochs without improvement");
                break;
            }
        }
    }
    Ok(FitOutcome { log, best, last: current })
}

/// One trained and evaluated ablation variant.
#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub label: String,
    pub flags: AblationFlags,
    pub num_params: usize,
    pub flops: u64,
    pub test: MetricsReport,
    pub log: TrainLog,
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl fmt::Display for AblationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mark = |b: bool| if b { "yes" } else { "no" };
        writeln!(
            f,
            "{:<18} {:>17} {:>14} {:>16} {:>12} {:>12}",
            "Variant", "Branch-1 (BiLSTM)", "Branch-2 (CNN)", "Branch-3 (BiTCN)", "Ch-Attention", "Accuracy (%)"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<18} {:>17} {:>14} {:>16} {:>12} {:>12.2}",
                r.label,
                mark(r.flags.enable_stream_c),
                mark(r.flags.enable_stream_b),
                mark(r.flags.enable_stream_a),
                mark(r.flags.enable_attention),
                r.test.accuracy
            )?;
        }
        Ok(())
    }
}

/// Trains every flag combination with the same seed and schedule and
/// evaluates its best checkpoint on `test`.
pub fn ablate(
    config: &ModelConfig,
    rows: &[(&str, AblationFlags)],
    train: &WindowedDataset,
    val: &WindowedDataset,
    test: &WindowedDataset,
    cfg: &TrainConfig,
) -> Result<AblationTable> {
    if rows.is_empty() {
        return Err(Error::invalid("ablate", "at least one flag combination is required"));
    }
    let mut out = Vec::with_capacity(rows.len());
    for (label, flags) in rows {
        log::info!("ablation variant: {label}");
        let model = Model::new(config.clone(), flags, cfg.seed)?;
        let fitted = fit(&model, train, val, cfg)?;
        let test_report = evaluate(&fitted.best, test)?;
        out.push(AblationRow {
            label: label.to_string(),
            flags: *flags,
            num_params: model.params.num_params(),
            flops: count_flops(config, flags, config.window).total,
            test: test_report,
            log: fitted.log,
        });
    }
    Ok(AblationTable { rows: out })
}
