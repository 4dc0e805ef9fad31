use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Per-class rates from integer counts; class 0 = public, 1 = private.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `confusion[true][predicted]`.
    pub confusion: [[u64; 2]; 2],
    pub public: ClassMetrics,
    pub private: ClassMetrics,
    /// Mean of the per-class precisions.
    pub precision: f64,
    pub balanced_accuracy: f64,
    pub accuracy: f64,
    pub total: u64,
    /// Records per true class.
    pub support: [u64; 2],
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn class_metrics(c: &[[u64; 2]; 2], y: usize) -> ClassMetrics {
    let o = 1 - y;
    let (tp, fp, fn_) = (c[y][y], c[o][y], c[y][o]);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    ClassMetrics { tp, fp, fn_, precision, recall, f1 }
}

impl MetricsReport {
    pub fn from_confusion(confusion: [[u64; 2]; 2]) -> Result<Self> {
        let total: u64 = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(invalid("cannot evaluate an empty split"));
        }
        let public = class_metrics(&confusion, 0);
        let private = class_metrics(&confusion, 1);
        Ok(Self {
            precision: (public.precision + private.precision) / 2.0,
            balanced_accuracy: (public.recall + private.recall) / 2.0,
            accuracy: ratio(confusion[0][0] + confusion[1][1], total),
            support: [confusion[0][0] + confusion[0][1], confusion[1][0] + confusion[1][1]],
            total,
            public,
            private,
            confusion,
        })
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(invalid("prediction and label counts differ"));
        }
        let mut c = [[0u64; 2]; 2];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t > 1 || p > 1 {
                return Err(invalid("labels must be 0 or 1"));
            }
            c[t][p] += 1;
        }
        Self::from_confusion(c)
    }

    pub fn class(&self, y: usize) -> &ClassMetrics {
        if y == 0 {
            &self.public
        } else {
            &self.private
        }
    }

    /// Named scalar metrics in fixed order, as fractions.
    pub fn scalars(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("p_private", self.private.precision),
            ("r_private", self.private.recall),
            ("f1_private", self.private.f1),
            ("p_public", self.public.precision),
            ("r_public", self.public.recall),
            ("f1_public", self.public.f1),
            ("precision", self.precision),
            ("ba", self.balanced_accuracy),
            ("acc", self.accuracy),
        ]
    }
}

/// Percentage with two decimals.
pub fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}
