//! Classification metrics. Precision, recall and F1 are macro averages in
//! percent. A class takes part in the average when it has support or
//! predictions; a class with predictions but no support scores zero
//! precision, and a class with support but no predictions scores zero recall.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{softmax_slice, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub support: usize,
    pub predicted: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub total: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub loss: Option<f64>,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<ClassMetrics>,
}

impl MetricsReport {
    pub fn from_predictions(labels: &[usize], predictions: &[usize], num_classes: usize) -> Result<Self> {
        if labels.len() != predictions.len() {
            return Err(Error::invalid("metrics", "labels and predictions differ in length"));
        }
        if labels.is_empty() {
            return Err(Error::Data("cannot compute metrics on an empty dataset".into()));
        }
        let mut confusion = vec![vec![0usize; num_classes]; num_classes];
        for (&l, &p) in labels.iter().zip(predictions) {
            if l >= num_classes || p >= num_classes {
                return Err(Error::invalid("metrics", format!("class id out of range for {num_classes} classes")));
            }
            confusion[l][p] += 1;
        }
        Ok(Self::from_confusion(confusion))
    }

    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Self {
        let k = confusion.len();
        let total: usize = confusion.iter().flatten().sum();
        let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
        let pct = |num: usize, den: usize| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
        let per_class: Vec<ClassMetrics> = (0..k)
            .map(|c| {
                let support: usize = confusion[c].iter().sum();
                let predicted: usize = confusion.iter().map(|row| row[c]).sum();
                let tp = confusion[c][c];
                let precision = pct(tp, predicted);
                let recall = pct(tp, support);
                let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
                ClassMetrics { class: c, support, predicted, precision, recall, f1 }
            })
            .collect();
        let counted: Vec<&ClassMetrics> = per_class.iter().filter(|m| m.support > 0 || m.predicted > 0).collect();
        let mean = |f: fn(&ClassMetrics) -> f64| {
            if counted.is_empty() {
                0.0
            } else {
                counted.iter().map(|m| f(m)).sum::<f64>() / counted.len() as f64
            }
        };
        Self {
            total,
            accuracy: pct(correct, total),
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            f1: mean(|m| m.f1),
            loss: None,
            confusion,
            per_class,
        }
    }

    /// Metrics for logits `[N, K]` against labels, including mean
    /// cross-entropy.
    pub fn from_logits(logits: &[Tensor], labels: &[usize], num_classes: usize) -> Result<Self> {
        let predictions: Vec<usize> = logits.iter().map(argmax).collect();
        let mut report = Self::from_predictions(labels, &predictions, num_classes)?;
        let loss: f64 = logits
            .iter()
            .zip(labels)
            .map(|(z, &l)| sample_cross_entropy(z.data(), l))
            .sum::<Result<f64>>()?;
        report.loss = Some(loss / labels.len() as f64);
        Ok(report)
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "n={} accuracy={:.2}% precision={:.2}% recall={:.2}% f1={:.2}%",
            self.total, self.accuracy, self.precision, self.recall, self.f1
        )?;
        if let Some(loss) = self.loss {
            write!(f, " loss={loss:.4}")?;
        }
        Ok(())
    }
}

pub fn argmax(logits: &Tensor) -> usize {
    logits
        .data()
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// `−log softmax(z)[label]` via the max-shifted log-sum-exp.
pub fn sample_cross_entropy(z: &[f64], label: usize) -> Result<f64> {
    if label >= z.len() {
        return Err(Error::invalid("cross_entropy", format!("label {label} out of range for {} classes", z.len())));
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(lse - z[label])
}

/// Mean cross-entropy over a `[B, K]` batch.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    if logits.rank() != 2 || logits.dim(0) != labels.len() {
        return Err(Error::invalid(
            "cross_entropy",
            format!("logits {:?} do not match {} labels", logits.shape(), labels.len()),
        ));
    }
    if labels.is_empty() {
        return Err(Error::invalid("cross_entropy", "empty batch"));
    }
    let k = logits.dim(1);
    let total = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sample_cross_entropy(&logits.data()[i * k..(i + 1) * k], l))
        .sum::<Result<f64>>()?;
    Ok(total / labels.len() as f64)
}

/// Softmax probabilities of one logit vector.
pub fn probabilities(logits: &Tensor) -> Vec<f64> {
    softmax_slice(logits.data())
}

/// One report per subject id, in ascending subject order.
pub fn per_subject(
    logits: &[Tensor],
    labels: &[usize],
    subjects: &[u16],
    num_classes: usize,
) -> Result<Vec<(u16, MetricsReport)>> {
    let mut groups: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
    for (i, &s) in subjects.iter().enumerate() {
        groups.entry(s).or_default().push(i);
    }
    groups
        .into_iter()
        .map(|(s, idx)| {
            let z: Vec<Tensor> = idx.iter().map(|&i| logits[i].clone()).collect();
            let l: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            Ok((s, MetricsReport::from_logits(&z, &l, num_classes)?))
        })
        .collect()
}

/// Subject rows plus an average row, one metric per column.
pub fn format_subject_table(rows: &[(u16, MetricsReport)]) -> String {
    let mut out = String::from("Subject   Accuracy  Precision    Recall  F1-score\n");
    for (s, m) in rows {
        out.push_str(&format!("{s:>7}  {:>9.2}  {:>9.2}  {:>8.2}  {:>8.2}\n", m.accuracy, m.precision, m.recall, m.f1));
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        let avg = |f: fn(&MetricsReport) -> f64| rows.iter().map(|(_, m)| f(m)).sum::<f64>() / n;
        out.push_str(&format!(
            "{:>7}  {:>9.2}  {:>9.2}  {:>8.2}  {:>8.2}\n",
            "Average",
            avg(|m| m.accuracy),
            avg(|m| m.precision),
            avg(|m| m.recall),
            avg(|m| m.f1)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let labels = [0, 1, 2, 1];
        let m = MetricsReport::from_predictions(&labels, &labels, 3).unwrap();
        assert_eq!((m.accuracy, m.f1, m.precision, m.recall), (100.0, 100.0, 100.0, 100.0));
    }

    #[test]
    fn symmetric_two_class_confusion() {
        let m = MetricsReport::from_confusion(vec![vec![3, 1], vec![1, 3]]);
        assert_eq!(m.accuracy, 75.0);
        assert!((m.f1 - 75.0).abs() < 1e-12);
    }

    #[test]
    fn constant_predictor() {
        let m = MetricsReport::from_predictions(&[0, 0, 1, 1], &[0, 0, 0, 0], 2).unwrap();
        assert_eq!(m.accuracy, 50.0);
        assert_eq!(m.recall, 50.0);
        assert_eq!(m.per_class[1].precision, 0.0);
    }

    #[test]
    fn absent_class_rule() {
        // class 2 has neither support nor predictions: excluded
        let m = MetricsReport::from_predictions(&[0, 1], &[0, 1], 3).unwrap();
        assert_eq!(m.precision, 100.0);
        // class 2 absent from the data but predicted: counted with zeros
        let m = MetricsReport::from_predictions(&[0, 1], &[0, 2], 3).unwrap();
        assert_eq!(m.per_class[2].precision, 0.0);
        assert!((m.precision - 100.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn confusion_consistency() {
        let labels = [0, 1, 2, 2, 1, 0, 0];
        let preds = [0, 2, 2, 1, 1, 0, 1];
        let m = MetricsReport::from_predictions(&labels, &preds, 3).unwrap();
        let row_sums: Vec<usize> = m.confusion.iter().map(|r| r.iter().sum()).collect();
        assert_eq!(row_sums, vec![3, 2, 2]);
        let raw = labels.iter().zip(&preds).filter(|(a, b)| a == b).count() as f64 / 7.0 * 100.0;
        assert!((m.accuracy - raw).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_values() {
        let k = 52;
        let uniform = Tensor::zeros(&[2, k]);
        let loss = cross_entropy(&uniform, &[0, 51]).unwrap();
        assert!((loss - 3.9512).abs() <= 1e-4);
        assert!((loss - (k as f64).ln()).abs() < 1e-12);
        let confident = Tensor::matrix(&[&[1000.0, 0.0, 0.0]]);
        assert!(cross_entropy(&confident, &[0]).unwrap() < 1e-300);
        assert!(cross_entropy(&confident, &[3]).is_err());
    }

    #[test]
    fn softmax_normalized() {
        let p = probabilities(&Tensor::vector(&[1000.0, -3.0, 2.0, 7.5]));
        assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn subject_table() {
        let logits = vec![Tensor::vector(&[1.0, 0.0]), Tensor::vector(&[0.0, 1.0]), Tensor::vector(&[1.0, 0.0])];
        let rows = per_subject(&logits, &[0, 1, 1], &[2, 1, 2], 2).unwrap();
        assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(rows[0].1.accuracy, 100.0);
        assert_eq!(rows[1].1.accuracy, 50.0);
        let table = format_subject_table(&rows);
        assert!(table.contains("Average") && table.contains("75.00"));
    }
}
