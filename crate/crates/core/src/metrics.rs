//! Evaluation metrics: classification rates, calibration, RMSE and
//! clustering agreement.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_ECE_BINS: usize = 10;

/// One-vs-rest counts for a single class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    /// `TP / (TP + FP)`, zero when nothing was predicted positive.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// `TP / (TP + FN)`, zero when the class is absent.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Per-class counts from true and predicted labels.
pub fn confusion_counts(y_true: &[usize], y_pred: &[usize], num_classes: usize) -> Vec<ConfusionCounts> {
    let mut out = vec![ConfusionCounts::default(); num_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        for (c, counts) in out.iter_mut().enumerate() {
            match (t == c, p == c) {
                (true, true) => counts.tp += 1,
                (false, true) => counts.fp += 1,
                (true, false) => counts.fn_ += 1,
                (false, false) => counts.tn += 1,
            }
        }
    }
    out
}

/// Row-wise argmax; ties go to the lower class.
pub fn argmax_rows<T: Scalar>(probs: &DMatrix<T>) -> Vec<usize> {
    (0..probs.nrows())
        .map(|i| {
            let row = probs.row(i);
            let mut best = 0;
            for c in 1..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
}

fn check_lengths<T: Scalar>(y_true: &[usize], probs: &DMatrix<T>) -> Result<()> {
    if y_true.is_empty() {
        return Err(Error::EmptyInput);
    }
    if probs.nrows() != y_true.len() {
        return Err(Error::DimensionMismatch { what: "probability rows", expected: y_true.len(), found: probs.nrows() });
    }
    if let Some(&bad) = y_true.iter().find(|&&y| y >= probs.ncols()) {
        return Err(Error::IndexOutOfRange { index: bad, bound: probs.ncols() });
    }
    Ok(())
}

/// Accuracy as the fraction correct. Precision and recall are for class 1
/// when there are two classes and macro-averaged otherwise.
pub fn classification_metrics<T: Scalar>(y_true: &[usize], probs: &DMatrix<T>) -> Result<ClassificationMetrics> {
    check_lengths(y_true, probs)?;
    let pred = argmax_rows(probs);
    let c = probs.ncols();
    let correct = y_true.iter().zip(&pred).filter(|(a, b)| a == b).count();
    let counts = confusion_counts(y_true, &pred, c);
    let (precision, recall) = if c == 2 {
        (counts[1].precision(), counts[1].recall())
    } else {
        let n = c as f64;
        (counts.iter().map(|k| k.precision()).sum::<f64>() / n, counts.iter().map(|k| k.recall()).sum::<f64>() / n)
    };
    Ok(ClassificationMetrics { accuracy: correct as f64 / y_true.len() as f64, precision, recall })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBins {
    /// `num_bins + 1` equally spaced edges from 0 to 1.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub mean_confidence: Vec<f64>,
    pub accuracy: Vec<f64>,
}

/// Equal-width bins of the top-class probability. Bin `b` holds
/// confidences in `[b/B, (b+1)/B)`, with 1 falling in the last bin.
pub fn calibration_bins<T: Scalar>(y_true: &[usize], probs: &DMatrix<T>, num_bins: usize) -> Result<CalibrationBins> {
    check_lengths(y_true, probs)?;
    if num_bins == 0 {
        return Err(Error::InvalidArgument("ECE needs at least one bin".into()));
    }
    let pred = argmax_rows(probs);
    let mut counts = vec![0usize; num_bins];
    let mut conf = vec![0.0; num_bins];
    let mut hits = vec![0.0; num_bins];
    for (i, &p) in pred.iter().enumerate() {
        let c = probs[(i, p)].as_f64();
        let b = ((c * num_bins as f64).floor() as usize).min(num_bins - 1);
        counts[b] += 1;
        conf[b] += c;
        if p == y_true[i] {
            hits[b] += 1.0;
        }
    }
    let mean = |s: &[f64]| -> Vec<f64> { s.iter().zip(&counts).map(|(&x, &n)| if n == 0 { 0.0 } else { x / n as f64 }).collect() };
    Ok(CalibrationBins {
        edges: (0..=num_bins).map(|b| b as f64 / num_bins as f64).collect(),
        mean_confidence: mean(&conf),
        accuracy: mean(&hits),
        counts,
    })
}

/// `Σ_b (n_b / N) |acc_b − conf_b|`.
pub fn ece<T: Scalar>(y_true: &[usize], probs: &DMatrix<T>, num_bins: usize) -> Result<f64> {
    let bins = calibration_bins(y_true, probs, num_bins)?;
    let n = y_true.len() as f64;
    Ok((0..num_bins).map(|b| bins.counts[b] as f64 / n * (bins.accuracy[b] - bins.mean_confidence[b]).abs()).sum())
}

pub fn rmse<T: Scalar>(y_true: &[T], y_pred: &[T]) -> Result<f64> {
    if y_true.is_empty() {
        return Err(Error::EmptyInput);
    }
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch { what: "predictions", expected: y_true.len(), found: y_pred.len() });
    }
    let sse: f64 = y_true.iter().zip(y_pred).map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2)).sum();
    Ok((sse / y_true.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusteringScores {
    pub ami: f64,
    pub homogeneity: f64,
    pub completeness: f64,
}

struct Contingency {
    n: usize,
    table: Vec<Vec<usize>>,
    rows: Vec<usize>,
    cols: Vec<usize>,
}

fn contingency(a: &[usize], b: &[usize]) -> Contingency {
    let index = |labels: &[usize]| {
        let mut map = BTreeMap::new();
        for &l in labels {
            let next = map.len();
            map.entry(l).or_insert(next);
        }
        map
    };
    let (ia, ib) = (index(a), index(b));
    let mut table = vec![vec![0usize; ib.len()]; ia.len()];
    for (x, y) in a.iter().zip(b) {
        table[ia[x]][ib[y]] += 1;
    }
    let rows = table.iter().map(|r| r.iter().sum()).collect();
    let cols = (0..ib.len()).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    Contingency { n: a.len(), table, rows, cols }
}

fn entropy(counts: &[usize], n: usize) -> f64 {
    let n = n as f64;
    counts.iter().filter(|&&c| c > 0).map(|&c| {
        let p = c as f64 / n;
        -p * p.ln()
    }).sum()
}

fn mutual_information(c: &Contingency) -> f64 {
    let n = c.n as f64;
    let mut mi = 0.0;
    for (i, row) in c.table.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let nij = nij as f64;
                mi += nij / n * (n * nij / (c.rows[i] as f64 * c.cols[j] as f64)).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Expected mutual information under random permutations with the
/// observed marginals (hypergeometric cell counts).
fn expected_mutual_information(c: &Contingency) -> f64 {
    let n = c.n;
    let mut log_fact = vec![0.0f64; n + 1];
    for k in 1..=n {
        log_fact[k] = log_fact[k - 1] + (k as f64).ln();
    }
    let nf = n as f64;
    let mut emi = 0.0;
    for &a in &c.rows {
        for &b in &c.cols {
            let lo = (a + b).saturating_sub(n).max(1);
            let hi = a.min(b);
            for nij in lo..=hi {
                let term = nij as f64 / nf * (nf * nij as f64 / (a as f64 * b as f64)).ln();
                let log_p = log_fact[a] + log_fact[b] + log_fact[n - a] + log_fact[n - b]
                    - log_fact[n]
                    - log_fact[nij]
                    - log_fact[a - nij]
                    - log_fact[b - nij]
                    - log_fact[n + nij - a - b];
                emi += term * log_p.exp();
            }
        }
    }
    emi
}

/// AMI (permutation-model expectation, max normalisation), homogeneity and
/// completeness. A score whose reference entropy is zero is 1.
pub fn clustering_scores(labels_true: &[usize], labels_pred: &[usize]) -> Result<ClusteringScores> {
    if labels_true.is_empty() {
        return Err(Error::EmptyInput);
    }
    if labels_true.len() != labels_pred.len() {
        return Err(Error::DimensionMismatch { what: "predicted labels", expected: labels_true.len(), found: labels_pred.len() });
    }
    let c = contingency(labels_true, labels_pred);
    let h_true = entropy(&c.rows, c.n);
    let h_pred = entropy(&c.cols, c.n);
    let mi = mutual_information(&c);
    let homogeneity = if h_true == 0.0 { 1.0 } else { (mi / h_true).clamp(0.0, 1.0) };
    let completeness = if h_pred == 0.0 { 1.0 } else { (mi / h_pred).clamp(0.0, 1.0) };
    let ami = if (c.rows.len() == 1 && c.cols.len() == 1) || (c.rows.len() == c.n && c.cols.len() == c.n) {
        1.0
    } else {
        let emi = expected_mutual_information(&c);
        let denom = h_true.max(h_pred) - emi;
        let denom = if denom < 0.0 { denom.min(-f64::EPSILON) } else { denom.max(f64::EPSILON) };
        (mi - emi) / denom
    };
    Ok(ClusteringScores { ami, homogeneity, completeness })
}

/// Settings under which a metric table was computed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricConventions {
    pub ece_bins: usize,
    pub precision_recall_averaging: String,
    pub ami_expectation: String,
    pub ami_normalisation: String,
}

impl Default for MetricConventions {
    fn default() -> Self {
        Self {
            ece_bins: DEFAULT_ECE_BINS,
            precision_recall_averaging: "macro (positive class 1 when binary)".into(),
            ami_expectation: "permutation model".into(),
            ami_normalisation: "max".into(),
        }
    }
}

/// Flat metric map plus the conventions used.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub values: BTreeMap<String, f64>,
    pub conventions: MetricConventions,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_precision_recall() {
        // TP=3 FP=1 FN=2 TN=4 with class 1 positive
        let t = [1, 1, 1, 0, 1, 1, 0, 0, 0, 0];
        let p = [1, 1, 1, 1, 0, 0, 0, 0, 0, 0];
        let probs = DMatrix::from_fn(10, 2, |i, c| if c == p[i] { 0.9 } else { 0.1 });
        let m = classification_metrics(&t, &probs).unwrap();
        assert!((m.precision - 0.75).abs() < 1e-15);
        assert!((m.recall - 0.6).abs() < 1e-15);
        assert!((m.accuracy - 0.7).abs() < 1e-15);
    }

    #[test]
    fn ece_extremes() {
        let probs = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
        assert_eq!(ece(&[0, 1, 0], &probs, 10).unwrap(), 0.0);
        assert_eq!(ece(&[1, 0, 1], &probs, 10).unwrap(), 1.0);
    }

    #[test]
    fn rmse_example() {
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn clustering_degenerate_conventions() {
        let s = clustering_scores(&[0, 0, 1, 1], &[5, 5, 5, 5]).unwrap();
        assert_eq!(s.homogeneity, 0.0);
        assert_eq!(s.completeness, 1.0);
        let s = clustering_scores(&[0, 0, 1, 2], &[2, 2, 0, 1]).unwrap();
        assert!((s.ami - 1.0).abs() < 1e-12);
        assert!((s.homogeneity - 1.0).abs() < 1e-12);
    }
}
