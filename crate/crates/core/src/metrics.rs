//! Multi-label classification metrics with macro averaging.

use std::fmt::{self, Write as _};

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("threshold {0} must lie strictly between 0 and 1")]
    Threshold(f64),
    #[error("prediction shape {pred:?} differs from truth shape {truth:?}")]
    Shape {
        pred: (usize, usize),
        truth: (usize, usize),
    },
    #[error("label matrices must hold only 0 and 1 (found {0})")]
    NotBinary(f64),
    #[error("{0} label names for {1} label columns")]
    Names(usize, usize),
}

/// `1` where `p >= threshold`.
pub fn binarize(probs: ArrayView2<f64>, threshold: f64) -> Result<Array2<u8>, MetricsError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(MetricsError::Threshold(threshold));
    }
    Ok(probs.mapv(|p| u8::from(p >= threshold)))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

// zero denominators count as 0
fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label: String,
    pub counts: ConfusionCounts,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub labels: Vec<LabelMetrics>,
    #[serde(rename = "macro")]
    pub macro_avg: MacroMetrics,
}

pub fn confusion_counts(
    pred: ArrayView2<u8>,
    truth: ArrayView2<u8>,
) -> Result<Vec<ConfusionCounts>, MetricsError> {
    if pred.dim() != truth.dim() {
        return Err(MetricsError::Shape {
            pred: pred.dim(),
            truth: truth.dim(),
        });
    }
    if let Some(&v) = pred.iter().chain(truth.iter()).find(|&&v| v > 1) {
        return Err(MetricsError::NotBinary(f64::from(v)));
    }
    let mut out = vec![ConfusionCounts::default(); pred.ncols()];
    for (j, c) in out.iter_mut().enumerate() {
        Zip::from(pred.column(j))
            .and(truth.column(j))
            .for_each(|&p, &t| match (p, t) {
                (1, 1) => c.tp += 1,
                (1, _) => c.fp += 1,
                (_, 1) => c.fn_ += 1,
                _ => c.tn += 1,
            });
    }
    Ok(out)
}

/// Per-label metrics and their unweighted means. Labels are named `label_<j>`.
pub fn evaluate(pred: ArrayView2<u8>, truth: ArrayView2<u8>) -> Result<MetricsReport, MetricsError> {
    let names: Vec<String> = (0..pred.ncols()).map(|j| format!("label_{j}")).collect();
    evaluate_named(pred, truth, &names)
}

pub fn evaluate_named(
    pred: ArrayView2<u8>,
    truth: ArrayView2<u8>,
    names: &[String],
) -> Result<MetricsReport, MetricsError> {
    let counts = confusion_counts(pred, truth)?;
    if names.len() != counts.len() {
        return Err(MetricsError::Names(names.len(), counts.len()));
    }
    let labels: Vec<LabelMetrics> = counts
        .into_iter()
        .zip(names)
        .map(|(c, name)| LabelMetrics {
            label: name.clone(),
            counts: c,
            accuracy: c.accuracy(),
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
        })
        .collect();
    let k = labels.len().max(1) as f64;
    let mean = |f: fn(&LabelMetrics) -> f64| labels.iter().map(f).sum::<f64>() / k;
    let macro_avg = MacroMetrics {
        accuracy: mean(|l| l.accuracy),
        precision: mean(|l| l.precision),
        recall: mean(|l| l.recall),
        f1: mean(|l| l.f1),
    };
    Ok(MetricsReport { labels, macro_avg })
}

/// Converts a 0/1 float matrix (as produced by label extraction) to `u8`.
pub fn to_binary(m: ArrayView2<f64>) -> Result<Array2<u8>, MetricsError> {
    if let Some(&v) = m.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(MetricsError::NotBinary(v));
    }
    Ok(m.mapv(|v| u8::from(v == 1.0)))
}

impl MetricsReport {
    /// Aligned text table: one row per metric, one column per label plus the
    /// macro average.
    pub fn to_table(&self) -> String {
        let mut headers: Vec<&str> = vec!["Metric"];
        headers.extend(self.labels.iter().map(|l| l.label.as_str()));
        headers.push("Macro avg");
        let rows: [(&str, Vec<f64>, f64); 4] = [
            (
                "Accuracy",
                self.labels.iter().map(|l| l.accuracy).collect(),
                self.macro_avg.accuracy,
            ),
            (
                "Precision",
                self.labels.iter().map(|l| l.precision).collect(),
                self.macro_avg.precision,
            ),
            (
                "Recall",
                self.labels.iter().map(|l| l.recall).collect(),
                self.macro_avg.recall,
            ),
            ("F1 score", self.labels.iter().map(|l| l.f1).collect(), self.macro_avg.f1),
        ];
        let cells: Vec<Vec<String>> = rows
            .iter()
            .map(|(name, vals, m)| {
                let mut r = vec![name.to_string()];
                r.extend(vals.iter().map(|v| format!("{:.1}%", v * 100.0)));
                r.push(format!("{:.1}%", m * 100.0));
                r
            })
            .collect();
        let widths: Vec<usize> = (0..headers.len())
            .map(|c| {
                cells
                    .iter()
                    .map(|r| r[c].len())
                    .chain(std::iter::once(headers[c].len()))
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        let line = |out: &mut String, row: &[&str]| {
            for (c, cell) in row.iter().enumerate() {
                if c == 0 {
                    let _ = write!(out, "{:<w$}", cell, w = widths[c]);
                } else {
                    let _ = write!(out, "  {:>w$}", cell, w = widths[c]);
                }
            }
            out.push('\n');
        };
        line(&mut out, &headers);
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        line(&mut out, &rule.iter().map(String::as_str).collect::<Vec<_>>());
        for r in &cells {
            line(&mut out, &r.iter().map(String::as_str).collect::<Vec<_>>());
        }
        out
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_table())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn binarize_boundary() {
        let b = binarize(array![[0.5, 0.49, 0.51]].view(), 0.5).unwrap();
        assert_eq!(b, array![[1, 0, 1]]);
        assert!(binarize(array![[0.5]].view(), 1.0).is_err());
        assert!(binarize(array![[0.5]].view(), 0.0).is_err());
    }

    #[test]
    fn hand_fixture() {
        // label 0: TP 3, FP 1, FN 2, TN 2
        let pred = array![[1, 0], [1, 1], [1, 0], [1, 1], [0, 0], [0, 1], [0, 0], [0, 1]];
        let truth = array![[1, 0], [1, 1], [1, 0], [0, 1], [1, 0], [1, 1], [0, 0], [0, 1]];
        let r = evaluate(pred.view(), truth.view()).unwrap();
        let l = &r.labels[0];
        assert_eq!(
            l.counts,
            ConfusionCounts {
                tp: 3,
                fp: 1,
                tn: 2,
                fn_: 2
            }
        );
        assert!((l.precision - 0.75).abs() < 1e-12);
        assert!((l.recall - 0.6).abs() < 1e-12);
        assert!((l.f1 - 0.6667).abs() < 5e-5);
        assert!((l.accuracy - 0.625).abs() < 1e-12);
        assert_eq!(r.labels[1].f1, 1.0);
    }

    #[test]
    fn perfect_predictions() {
        let t = array![[1, 0, 1, 0], [0, 1, 1, 0]];
        let r = evaluate(t.view(), t.view()).unwrap();
        for l in &r.labels {
            assert_eq!(l.accuracy, 1.0);
        }
        // label 3 has no positives at all: precision and recall fall back to 0
        assert_eq!(r.labels[3].recall, 0.0);
    }

    #[test]
    fn no_positive_predictions() {
        let pred = array![[0], [0], [0]];
        let truth = array![[1], [0], [1]];
        let r = evaluate(pred.view(), truth.view()).unwrap();
        assert_eq!((r.labels[0].precision, r.labels[0].recall, r.labels[0].f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn shape_mismatch() {
        let a = array![[0u8, 1]];
        let b = array![[0u8]];
        assert!(matches!(evaluate(a.view(), b.view()), Err(MetricsError::Shape { .. })));
    }

    #[test]
    fn table_layout() {
        let t = array![[1, 0], [0, 1]];
        let r = evaluate(t.view(), t.view()).unwrap();
        let s = r.to_table();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines.len(), 6);
        assert!(lines[0].starts_with("Metric"));
        assert!(lines[2].starts_with("Accuracy"));
        assert!(lines[5].starts_with("F1 score"));
        assert!(lines.iter().all(|l| l.len() == lines[0].len()));
    }

    fn matrix(n: usize, k: usize) -> impl Strategy<Value = Array2<u8>> {
        proptest::collection::vec(0u8..=1, n * k)
            .prop_map(move |v| Array2::from_shape_vec((n, k), v).unwrap())
    }

    proptest! {
        #[test]
        fn f1_harmonic_identity(p in matrix(30, 4), t in matrix(30, 4)) {
            let r = evaluate(p.view(), t.view()).unwrap();
            for l in &r.labels {
                if l.precision + l.recall > 0.0 {
                    prop_assert!((l.f1 * (l.precision + l.recall) - 2.0 * l.precision * l.recall).abs() < 1e-12);
                }
                prop_assert_eq!(l.counts.total(), 30);
            }
        }

        #[test]
        fn binarize_monotone(ps in proptest::collection::vec(0.001f64..0.999, 12), a in 0.01f64..0.99, b in 0.01f64..0.99) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let m = Array2::from_shape_vec((3, 4), ps).unwrap();
            let bl = binarize(m.view(), lo).unwrap();
            let bh = binarize(m.view(), hi).unwrap();
            prop_assert!(bl.iter().zip(bh.iter()).all(|(l, h)| h <= l));
        }

        #[test]
        fn label_permutation_keeps_macro(p in matrix(20, 4), t in matrix(20, 4)) {
            let r = evaluate(p.view(), t.view()).unwrap();
            let order = [2usize, 0, 3, 1];
            let pp = p.select(ndarray::Axis(1), &order);
            let tp = t.select(ndarray::Axis(1), &order);
            let r2 = evaluate(pp.view(), tp.view()).unwrap();
            for (new, &old) in order.iter().enumerate() {
                prop_assert_eq!(r2.labels[new].counts, r.labels[old].counts);
            }
            prop_assert!((r.macro_avg.f1 - r2.macro_avg.f1).abs() < 1e-12);
            prop_assert!((r.macro_avg.recall - r2.macro_avg.recall).abs() < 1e-12);
        }
    }
}
