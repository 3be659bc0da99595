//! Confusion matrices, classification reports and ROC analysis.

mod report;
mod roc;
mod svg;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use report::{loss_plot_svg, render_report, report_json, table_text, RenderOptions, RenderedFiles, REPORT_SCHEMA};
pub use roc::{roc_curve, RocCurve, RocPoint};
pub use svg::{line_plot_svg, Series};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{truth} true labels but {predicted} predictions")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("class id {id} outside {classes} classes")]
    UnknownClass { id: usize, classes: usize },
    #[error("ROC needs both classes; only {0} present")]
    SingleClass(&'static str),
    #[error("score {0} is not finite")]
    NonFiniteScore(f64),
    #[error("no samples")]
    Empty,
    #[error("report output: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_labels(truth: &[usize], predicted: &[usize], classes: &[String]) -> Result<Self, MetricsError> {
        if truth.len() != predicted.len() {
            return Err(MetricsError::LengthMismatch { truth: truth.len(), predicted: predicted.len() });
        }
        let c = classes.len();
        let mut counts = vec![vec![0u64; c]; c];
        for (&t, &p) in truth.iter().zip(predicted) {
            for id in [t, p] {
                if id >= c {
                    return Err(MetricsError::UnknownClass { id, classes: c });
                }
            }
            counts[t][p] += 1;
        }
        Ok(Self { classes: classes.to_vec(), counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    /// One-vs-rest counts for class `k`.
    pub fn one_vs_rest(&self, k: usize) -> BinaryCounts {
        let total = self.total();
        let tp = self.counts[k][k];
        let support: u64 = self.counts[k].iter().sum();
        let predicted: u64 = self.counts.iter().map(|row| row[k]).sum();
        let fn_ = support - tp;
        let fp = predicted - tp;
        BinaryCounts { tp, fp, fn_, tn: total - tp - fp - fn_ }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl BinaryCounts {
    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.tp + self.tn + self.fp + self.fn_).0
    }

    /// `(precision, undefined)`; undefined when nothing was predicted positive.
    pub fn precision(&self) -> (f64, bool) {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> (f64, bool) {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision().0, self.recall().0)
    }
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 { (0.0, true) } else { (num as f64 / den as f64, false) }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Set when precision or recall had a zero denominator and was taken as 0.
    pub zero_division: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Average {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_avg: Average,
    pub weighted_avg: Average,
    pub confusion: ConfusionMatrix,
    /// Counts with `positive_class` as the attack (positive) class.
    pub positive_class: Option<String>,
    pub binary: Option<BinaryCounts>,
    pub roc: Option<RocCurve>,
}

impl EvalReport {
    pub fn class(&self, name: &str) -> Option<&ClassMetrics> {
        self.per_class.iter().find(|c| c.class == name)
    }
}

/// Per-class one-vs-rest metrics plus accuracy, macro and support-weighted
/// averages. `positive` names the class whose TP/FP/FN/TN are reported.
pub fn compute_metrics(truth: &[usize], predicted: &[usize], classes: &[String], positive: Option<usize>) -> Result<EvalReport, MetricsError> {
    let confusion = ConfusionMatrix::from_labels(truth, predicted, classes)?;
    if truth.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(p) = positive {
        if p >= classes.len() {
            return Err(MetricsError::UnknownClass { id: p, classes: classes.len() });
        }
    }
    let total = confusion.total();
    let per_class: Vec<ClassMetrics> = (0..classes.len())
        .map(|k| {
            let b = confusion.one_vs_rest(k);
            let (precision, p_undef) = b.precision();
            let (recall, r_undef) = b.recall();
            ClassMetrics {
                class: classes[k].clone(),
                precision,
                recall,
                f1: f1(precision, recall),
                support: b.tp + b.fn_,
                zero_division: p_undef || r_undef,
            }
        })
        .collect();
    let n = per_class.len() as f64;
    let macro_avg = Average {
        precision: per_class.iter().map(|c| c.precision).sum::<f64>() / n,
        recall: per_class.iter().map(|c| c.recall).sum::<f64>() / n,
        f1: per_class.iter().map(|c| c.f1).sum::<f64>() / n,
        support: total,
    };
    let w = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(|c| f(c) * c.support as f64).sum::<f64>() / total as f64;
    let weighted_avg = Average { precision: w(|c| c.precision), recall: w(|c| c.recall), f1: w(|c| c.f1), support: total };
    Ok(EvalReport {
        accuracy: confusion.trace() as f64 / total as f64,
        per_class,
        macro_avg,
        weighted_avg,
        positive_class: positive.map(|p| classes[p].clone()),
        binary: positive.map(|p| confusion.one_vs_rest(p)),
        confusion,
        roc: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn worked_binary_example() {
        // 90 TP, 10 FN, 4 FP, 396 TN with class 1 as the attack class.
        let mut t = vec![1; 100];
        let mut p = vec![1; 90];
        p.extend(vec![0; 10]);
        t.extend(vec![0; 400]);
        p.extend(vec![1; 4]);
        p.extend(vec![0; 396]);
        let r = compute_metrics(&t, &p, &names(2), Some(1)).unwrap();
        let b = r.binary.unwrap();
        assert_eq!((b.tp, b.fn_, b.fp, b.tn), (90, 10, 4, 396));
        assert!((b.recall().0 - 0.9).abs() < 1e-12);
        assert!((b.precision().0 - 90.0 / 94.0).abs() < 1e-12);
        assert!((b.accuracy() - 0.972).abs() < 1e-12);
        assert!((b.f1() - 0.9278350515463918).abs() < 1e-12);
        assert_eq!(r.accuracy, b.accuracy());
    }

    #[test]
    fn never_predicted_class_is_flagged() {
        let r = compute_metrics(&[0, 1, 2], &[0, 0, 0], &names(3), None).unwrap();
        assert!(r.per_class[1].zero_division);
        assert_eq!(r.per_class[1].precision, 0.0);
        assert!(!r.per_class[0].zero_division);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(compute_metrics(&[0, 1], &[0], &names(2), None), Err(MetricsError::LengthMismatch { .. })));
    }
}
