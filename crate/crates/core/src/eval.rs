//! Confusion matrix and intersection-over-union.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::labels::{LabelField, UNLABELED};

/// Rows are ground truth, columns predictions. Points predicted UNLABELED
/// are tallied separately per truth class; points with UNLABELED truth are
/// only counted in `ignored`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    /// Row-major `num_classes × num_classes`.
    pub counts: Vec<u64>,
    pub unlabeled_pred: Vec<u64>,
    pub ignored: u64,
}

impl ConfusionMatrix {
    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.unlabeled_pred.iter().sum::<u64>() + self.ignored
    }
}

pub fn confusion(gt: &LabelField, pred: &LabelField, num_classes: usize) -> Result<ConfusionMatrix> {
    if gt.len() != pred.len() {
        return Err(Error::LengthMismatch {
            what: "predicted labels".into(),
            expected: gt.len(),
            actual: pred.len(),
        });
    }
    gt.validate(num_classes)?;
    pred.validate(num_classes)?;
    let mut cm = ConfusionMatrix {
        num_classes,
        counts: vec![0; num_classes * num_classes],
        unlabeled_pred: vec![0; num_classes],
        ignored: 0,
    };
    for (&t, &p) in gt.as_slice().iter().zip(pred.as_slice()) {
        if t == UNLABELED {
            cm.ignored += 1;
        } else if p == UNLABELED {
            cm.unlabeled_pred[t as usize] += 1;
        } else {
            cm.counts[t as usize * num_classes + p as usize] += 1;
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ClassCounts {
    pub fn iou(&self) -> Option<f64> {
        let union = self.tp + self.fp + self.fn_;
        (union > 0).then(|| self.tp as f64 / union as f64)
    }
}

pub fn class_counts(cm: &ConfusionMatrix) -> Vec<ClassCounts> {
    let c = cm.num_classes;
    (0..c)
        .map(|k| {
            let tp = cm.get(k, k);
            let row: u64 = (0..c).map(|j| cm.get(k, j)).sum::<u64>() + cm.unlabeled_pred[k];
            let col: u64 = (0..c).map(|i| cm.get(i, k)).sum();
            ClassCounts {
                tp,
                fp: col - tp,
                fn_: row - tp,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    /// Per-class IoU in percent; `None` for classes absent from truth and
    /// prediction.
    pub per_class_iou: Vec<Option<f64>>,
    /// Mean over present classes, percent.
    pub miou: f64,
    pub ignored: u64,
}

pub fn miou(cm: &ConfusionMatrix) -> Metrics {
    let mut m = miou_from_counts(&class_counts(cm));
    m.ignored = cm.ignored;
    m
}

/// Metrics from per-class TP/FP/FN tallies.
pub fn miou_from_counts(counts: &[ClassCounts]) -> Metrics {
    let per_class_iou: Vec<Option<f64>> = counts.iter().map(|c| c.iou().map(|v| 100.0 * v)).collect();
    let present: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
    let miou = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Metrics {
        per_class_iou,
        miou,
        ignored: 0,
    }
}

/// Fraction of labeled-truth points whose prediction equals the truth,
/// restricted to `mask` when given.
pub fn accuracy(gt: &LabelField, pred: &LabelField, mask: Option<&[bool]>) -> f64 {
    let mut hits = 0usize;
    let mut total = 0usize;
    for i in 0..gt.len() {
        if gt.get(i) == UNLABELED || mask.is_some_and(|m| !m[i]) {
            continue;
        }
        total += 1;
        if gt.get(i) == pred.get(i) {
            hits += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}
