use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Confusion counts with COVID-positive (label 1) as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        let n = self.total();
        if n == 0 {
            0.0
        } else {
            (self.tp + self.tn) as f64 / n as f64
        }
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Harmonic mean of precision and recall; 0 when both are 0.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn check_labels(n: usize, labels: &[u8]) -> Result<()> {
    if n != labels.len() {
        return Err(Error::Validation(format!("{n} predictions for {} labels", labels.len())));
    }
    if let Some(i) = labels.iter().position(|&l| l > 1) {
        return Err(Error::Validation(format!("label {} at index {i} is not 0 or 1", labels[i])));
    }
    Ok(())
}

pub fn confusion(predicted: &[u8], labels: &[u8]) -> Result<Confusion> {
    check_labels(predicted.len(), labels)?;
    let mut c = Confusion::default();
    for (&p, &l) in predicted.iter().zip(labels) {
        match (p != 0, l == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// `(accuracy, f1, confusion)` of hard predictions.
pub fn classification_metrics(predicted: &[u8], labels: &[u8]) -> Result<(f64, f64, Confusion)> {
    let c = confusion(predicted, labels)?;
    Ok((c.accuracy(), c.f1(), c))
}

fn class_counts(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    check_labels(scores.len(), labels)?;
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::Numerical(format!("score at index {i} is NaN")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Validation(format!(
            "AUC is undefined with {pos} positive and {neg} negative samples"
        )));
    }
    Ok((pos, neg))
}

/// Area under the ROC curve from a descending threshold sweep with
/// trapezoidal integration; tied scores form one ROC step.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    // twice the area in units of one (positive, negative) cell
    let mut area2 = 0u128;
    let mut i = 0;
    while i < idx.len() {
        let (tp0, fp0) = (tp, fp);
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += ((fp - fp0) * (tp + tp0)) as u128;
    }
    Ok(area2 as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Mann-Whitney pair count: `(concordant + ties / 2) / (P * N)`.
pub fn auc_pairwise(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut wins = 0.0f64;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] == 0 {
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
    }
    Ok(wins / (pos as f64 * neg as f64))
}

/// Metrics of one head on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub f1: f64,
    /// `None` when the split holds a single class.
    pub auc: Option<f64>,
    pub confusion: Confusion,
    pub scores: Vec<f64>,
    pub predicted: Vec<u8>,
    pub labels: Vec<u8>,
}

impl EvalResult {
    pub fn new(scores: Vec<f64>, predicted: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != predicted.len() {
            return Err(Error::Validation(format!(
                "{} scores for {} predictions",
                scores.len(),
                predicted.len()
            )));
        }
        let (accuracy, f1, confusion) = classification_metrics(&predicted, &labels)?;
        let auc = match auc(&scores, &labels) {
            Ok(a) => Some(a),
            Err(Error::Validation(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(EvalResult {
            accuracy,
            f1,
            auc,
            confusion,
            scores,
            predicted,
            labels,
        })
    }
}
