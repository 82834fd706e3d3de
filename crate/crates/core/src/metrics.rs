//! Accuracy, per-class and macro F1 from a confusion matrix.

use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const CLASSES: usize = 5;

/// Rows are true classes, columns predictions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion(pub [[u64; CLASSES]; CLASSES]);

impl Confusion {
    pub fn from_pairs(truth: &[usize], pred: &[usize]) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::Dimension(alloc::format!("{} labels vs {} predictions", truth.len(), pred.len())));
        }
        let mut m = Self::default();
        for (&t, &p) in truth.iter().zip(pred) {
            if t >= CLASSES || p >= CLASSES {
                return Err(Error::LabelOutOfRange { label: t.max(p), classes: CLASSES });
            }
            m.0[t][p] += 1;
        }
        Ok(m)
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn support(&self, c: usize) -> u64 {
        self.0[c].iter().sum()
    }

    pub fn predicted(&self, c: usize) -> u64 {
        self.0.iter().map(|r| r[c]).sum()
    }

    pub fn merge(&mut self, other: &Confusion) {
        for (r, o) in self.0.iter_mut().zip(&other.0) {
            for (a, b) in r.iter_mut().zip(o) {
                *a += b;
            }
        }
    }
}

/// Percentages in `[0, 100]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub precision: [f64; CLASSES],
    pub recall: [f64; CLASSES],
    pub f1: [f64; CLASSES],
    pub confusion: Confusion,
    /// Classes with no ground-truth epochs; they count as F1 = 0.
    pub absent: Vec<usize>,
}

impl MetricsReport {
    pub fn from_confusion(confusion: Confusion) -> Result<Self> {
        let total = confusion.total();
        if total == 0 {
            return Err(Error::EmptyTarget);
        }
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let correct: u64 = (0..CLASSES).map(|c| confusion.0[c][c]).sum();
        let (mut precision, mut recall, mut f1) = ([0.0; CLASSES], [0.0; CLASSES], [0.0; CLASSES]);
        let mut absent = Vec::new();
        for c in 0..CLASSES {
            let tp = confusion.0[c][c];
            let (support, predicted) = (confusion.support(c), confusion.predicted(c));
            if support == 0 {
                absent.push(c);
            }
            precision[c] = 100.0 * ratio(tp, predicted);
            recall[c] = 100.0 * ratio(tp, support);
            f1[c] = 100.0 * ratio(2 * tp, support + predicted);
        }
        if !absent.is_empty() {
            log::warn!("classes {absent:?} absent from the ground truth; scored as F1 = 0");
        }
        Ok(Self {
            accuracy: 100.0 * ratio(correct, total),
            macro_f1: f1.iter().sum::<f64>() / CLASSES as f64,
            precision,
            recall,
            f1,
            confusion,
            absent,
        })
    }

    pub fn from_predictions(truth: &[usize], pred: &[usize]) -> Result<Self> {
        Self::from_confusion(Confusion::from_pairs(truth, pred)?)
    }
}

/// Arithmetic mean; 0 for an empty slice.
pub fn average(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}
