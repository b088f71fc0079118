//! Confusion matrices and intersection-over-union.

use crate::error::{Error, Result};
use crate::grid::{ensure_same_shape, Grid, LabelMap, IGNORE};

/// Square count matrix, rows = truth, columns = prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_classes + pred]
    }

    pub fn add(&mut self, truth: usize, pred: usize, n: u64) {
        self.counts[truth * self.num_classes + pred] += n;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::ShapeMismatch(format!(
                "confusion matrices of {} and {} classes",
                self.num_classes, other.num_classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Tally over pixels whose truth is not ignored. Predictions that are
/// ignore or out of range cannot be placed in a column and are rejected.
pub fn confusion(pred: &LabelMap, truth: &LabelMap) -> Result<ConfusionMatrix> {
    ensure_same_shape("prediction vs truth", pred.shape(), truth.shape())?;
    let c = pred.num_classes().max(truth.num_classes()) as usize;
    let mut cm = ConfusionMatrix::new(c);
    for (i, (&p, &t)) in pred.data().iter().zip(truth.data()).enumerate() {
        if t == IGNORE {
            continue;
        }
        let bad = if (t as usize) >= c { Some(t) } else if p == IGNORE || (p as usize) >= c { Some(p) } else { None };
        if let Some(value) = bad {
            return Err(Error::ClassOutOfRange {
                value,
                num_classes: c as u8,
                row: i / truth.width(),
                col: i % truth.width(),
            });
        }
        cm.add(t as usize, p as usize, 1);
    }
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IouReport {
    /// `None` for classes absent from both truth and prediction.
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

/// Per-class IoU and their mean over classes with a non-empty union.
pub fn miou(cm: &ConfusionMatrix) -> Result<IouReport> {
    let c = cm.num_classes();
    let mut per_class = Vec::with_capacity(c);
    for k in 0..c {
        let tp = cm.get(k, k);
        let row: u64 = (0..c).map(|p| cm.get(k, p)).sum();
        let col: u64 = (0..c).map(|t| cm.get(t, k)).sum();
        let union = row + col - tp;
        per_class.push((union > 0).then(|| tp as f64 / union as f64));
    }
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::EmptyMetric);
    }
    let mean = present.iter().sum::<f64>() / present.len() as f64;
    Ok(IouReport { per_class, mean })
}
