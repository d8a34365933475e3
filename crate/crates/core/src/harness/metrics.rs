use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{AnatomicalLabel, NUM_CLASSES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: AnatomicalLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Ground-truth count.
    pub support: u64,
    /// False when the class occurs neither in the truth nor in the
    /// predictions; such classes are left out of the means.
    pub included: bool,
}

/// Per-class and mean precision, recall and F1 plus the confusion matrix
/// (`confusion[truth][prediction]`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: String,
    pub classes: Vec<ClassMetrics>,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_f1: f64,
    /// Fraction of all segments labeled correctly.
    pub accuracy: f64,
    pub confusion: Vec<Vec<u64>>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Metrics of aligned prediction and truth class indices.
pub fn compute_metrics(predictions: &[usize], truth: &[usize]) -> Result<MetricsReport> {
    if predictions.len() != truth.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    let mut confusion = vec![vec![0u64; NUM_CLASSES]; NUM_CLASSES];
    for (&p, &t) in predictions.iter().zip(truth) {
        if p >= NUM_CLASSES || t >= NUM_CLASSES {
            return Err(Error::InvalidLabel {
                label: p.max(t),
                classes: NUM_CLASSES,
            });
        }
        confusion[t][p] += 1;
    }
    MetricsReport::from_confusion(confusion)
}

impl MetricsReport {
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Result<Self> {
        if confusion.len() != NUM_CLASSES || confusion.iter().any(|r| r.len() != NUM_CLASSES) {
            return Err(Error::dim(
                "confusion matrix",
                &[confusion.len()],
                &[NUM_CLASSES, NUM_CLASSES],
            ));
        }
        let mut classes = Vec::with_capacity(NUM_CLASSES);
        let mut total = 0;
        let mut correct = 0;
        for c in 0..NUM_CLASSES {
            let tp = confusion[c][c];
            let support: u64 = confusion[c].iter().sum();
            let predicted: u64 = confusion.iter().map(|r| r[c]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            total += support;
            correct += tp;
            classes.push(ClassMetrics {
                label: AnatomicalLabel::from_index(c).expect("class index"),
                precision,
                recall,
                f1,
                support,
                included: support > 0 || predicted > 0,
            });
        }
        let included: Vec<&ClassMetrics> = classes.iter().filter(|c| c.included).collect();
        let mean = |f: fn(&ClassMetrics) -> f64| {
            if included.is_empty() {
                0.0
            } else {
                included.iter().map(|c| f(c)).sum::<f64>() / included.len() as f64
            }
        };
        Ok(Self {
            config: String::new(),
            mean_precision: mean(|c| c.precision),
            mean_recall: mean(|c| c.recall),
            mean_f1: mean(|c| c.f1),
            accuracy: ratio(correct, total),
            classes,
            confusion,
        })
    }

    /// Pools several reports by summing their confusion matrices.
    pub fn pooled(reports: &[MetricsReport]) -> Result<Self> {
        let mut confusion = vec![vec![0u64; NUM_CLASSES]; NUM_CLASSES];
        for r in reports {
            for (row, other) in confusion.iter_mut().zip(&r.confusion) {
                for (a, b) in row.iter_mut().zip(other) {
                    *a += b;
                }
            }
        }
        let mut out = Self::from_confusion(confusion)?;
        out.config = reports.first().map(|r| r.config.clone()).unwrap_or_default();
        Ok(out)
    }

    pub fn with_config(mut self, config: impl Into<String>) -> Self {
        self.config = config.into();
        self
    }

    /// Comma-separated table: `class,precision,recall,f1` with a final
    /// `mean` row; values use three decimals.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,precision,recall,f1\n");
        for c in self.classes.iter().filter(|c| c.included) {
            let _ = writeln!(s, "{},{:.3},{:.3},{:.3}", c.label, c.precision, c.recall, c.f1);
        }
        let _ = writeln!(
            s,
            "mean,{:.3},{:.3},{:.3}",
            self.mean_precision, self.mean_recall, self.mean_f1
        );
        s
    }

    /// Aligned text table of the same numbers plus the confusion matrix.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        if !self.config.is_empty() {
            let _ = writeln!(s, "config: {}", self.config);
        }
        let _ = writeln!(s, "{:<8}{:>10}{:>10}{:>10}{:>9}", "class", "precision", "recall", "f1", "support");
        for c in self.classes.iter().filter(|c| c.included) {
            let _ = writeln!(
                s,
                "{:<8}{:>10.3}{:>10.3}{:>10.3}{:>9}",
                c.label.as_str(),
                c.precision,
                c.recall,
                c.f1,
                c.support
            );
        }
        let _ = writeln!(
            s,
            "{:<8}{:>10.3}{:>10.3}{:>10.3}",
            "mean", self.mean_precision, self.mean_recall, self.mean_f1
        );
        let _ = writeln!(s, "accuracy {:.3}", self.accuracy);
        let _ = write!(s, "\n{:<8}", "truth\\pred");
        for l in AnatomicalLabel::ALL {
            let _ = write!(s, "{:>7}", l.as_str());
        }
        s.push('\n');
        for (l, row) in AnatomicalLabel::ALL.iter().zip(&self.confusion) {
            let _ = write!(s, "{:<10}", l.as_str());
            for v in row {
                let _ = write!(s, "{v:>7}");
            }
            s.push('\n');
        }
        s
    }
}
