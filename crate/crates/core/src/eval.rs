//! Classification metrics and drift-detection scoring.

use serde::{Deserialize, Serialize};

use crate::classifier::{ClassifierModel, DECISION_THRESHOLD};
use crate::error::{Error, Result};
use crate::sample::{Label, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn from_predictions(predicted: &[bool], actual: &[bool]) -> Result<Self> {
        if predicted.len() != actual.len() {
            return Err(Error::LengthMismatch(predicted.len(), actual.len()));
        }
        let mut cm = Self::default();
        for (&p, &a) in predicted.iter().zip(actual) {
            match (p, a) {
                (true, true) => cm.tp += 1,
                (true, false) => cm.fp += 1,
                (false, false) => cm.tn += 1,
                (false, true) => cm.fn_ += 1,
            }
        }
        Ok(cm)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn positives(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> usize {
        self.tn + self.fp
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total()).unwrap_or(0.0)
    }

    pub fn sensitivity(&self) -> Option<f64> {
        ratio(self.tp, self.positives())
    }

    pub fn specificity(&self) -> Option<f64> {
        ratio(self.tn, self.negatives())
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    /// `(sens + spec) / 2`, or the one defined recall when a class is absent.
    /// The flag is set in the fallback case.
    pub fn balanced_accuracy(&self) -> (f64, bool) {
        match (self.sensitivity(), self.specificity()) {
            (Some(a), Some(b)) => ((a + b) / 2.0, false),
            (Some(a), None) | (None, Some(a)) => (a, true),
            (None, None) => (0.0, true),
        }
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision().unwrap_or(0.0), self.sensitivity().unwrap_or(0.0));
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// `None` when one class is missing.
    pub auc: Option<f64>,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    /// Set when balanced accuracy fell back to a single recall.
    pub balanced_accuracy_fallback: bool,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub precision: Option<f64>,
    pub f1: f64,
    pub confusion: ConfusionMatrix,
}

pub fn compute_metrics(scores: &[f64], labels: &[Label], threshold: f64) -> Result<MetricsRecord> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(&bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFiniteValue(bad));
    }
    let predicted: Vec<bool> = scores.iter().map(|&s| s >= threshold).collect();
    let actual: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
    let cm = ConfusionMatrix::from_predictions(&predicted, &actual)?;
    let (ba, fallback) = cm.balanced_accuracy();
    Ok(MetricsRecord {
        auc: auc(scores, labels)?,
        accuracy: cm.accuracy(),
        balanced_accuracy: ba,
        balanced_accuracy_fallback: fallback,
        sensitivity: cm.sensitivity(),
        specificity: cm.specificity(),
        precision: cm.precision(),
        f1: cm.f1(),
        confusion: cm,
    })
}

pub fn compute_metrics_default(scores: &[f64], labels: &[Label]) -> Result<MetricsRecord> {
    compute_metrics(scores, labels, DECISION_THRESHOLD)
}

/// Metrics of `model` on `samples`; `None` when any sample is unlabeled.
pub fn evaluate_samples<'a>(
    model: &ClassifierModel,
    samples: impl IntoIterator<Item = &'a Sample>,
) -> Result<Option<MetricsRecord>> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for s in samples {
        let Some(label) = s.label else {
            return Ok(None);
        };
        scores.push(model.predict_sample(s)?);
        labels.push(label);
    }
    compute_metrics_default(&scores, &labels).map(Some)
}

/// Mann–Whitney AUC with midranks for ties; `None` when a class is absent.
pub fn auc(scores: &[f64], labels: &[Label]) -> Result<Option<f64>> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch(scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based: positions i..j share (i+1 + j) / 2
        let midrank = (i + 1 + j) as f64 / 2.0;
        rank_sum_pos += midrank * order[i..j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(Some(u / (n_pos * n_neg) as f64))
}

/// A batch is labeled as drifted when its balanced accuracy is strictly
/// below the benchmark.
pub fn label_drift_batches(benchmark: f64, per_batch: &[MetricsRecord]) -> Vec<bool> {
    per_batch.iter().map(|m| m.balanced_accuracy < benchmark).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub accuracy: f64,
    /// `None` when no batch is labeled as drifted.
    pub sensitivity: Option<f64>,
    /// `None` when every batch is labeled as drifted.
    pub specificity: Option<f64>,
}

/// Compares alerts with drift labels per batch index. With `tolerance > 0`,
/// an alert also covers labeled batches up to `tolerance` indices away in
/// either direction, and a labeled batch counts as detected when any alert
/// covers it.
pub fn score_detection(alerts: &[bool], labels: &[bool], tolerance: usize) -> Result<DetectionMetrics> {
    if alerts.len() != labels.len() {
        return Err(Error::LengthMismatch(alerts.len(), labels.len()));
    }
    if alerts.is_empty() {
        return Err(Error::EmptyInput);
    }
    let near = |v: &[bool], i: usize| {
        let lo = i.saturating_sub(tolerance);
        let hi = (i + tolerance + 1).min(v.len());
        v[lo..hi].iter().any(|&b| b)
    };
    let predicted: Vec<bool> = (0..alerts.len())
        .map(|i| {
            if labels[i] {
                near(alerts, i)
            } else {
                alerts[i] && !near(labels, i)
            }
        })
        .collect();
    let cm = ConfusionMatrix::from_predictions(&predicted, labels)?;
    Ok(DetectionMetrics {
        accuracy: cm.accuracy(),
        sensitivity: cm.sensitivity(),
        specificity: cm.specificity(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_auc(scores: &[f64], labels: &[Label]) -> Option<f64> {
        let mut num = 0.0;
        let mut pairs = 0usize;
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1;
                    if si > sj {
                        num += 1.0;
                    } else if si == sj {
                        num += 0.5;
                    }
                }
            }
        }
        (pairs > 0).then(|| num / pairs as f64)
    }

    #[test]
    fn perfect_separation() {
        let m = compute_metrics(&[0.9, 0.8, 0.1], &[1, 1, 0], 0.5).unwrap();
        assert_eq!(m.auc, Some(1.0));
        assert_eq!(m.balanced_accuracy, 1.0);
        assert_eq!(m.f1, 1.0);
    }

    #[test]
    fn worked_confusion_matrix() {
        let cm = ConfusionMatrix { tp: 2, fn_: 0, tn: 1, fp: 1 };
        assert_eq!(cm.sensitivity(), Some(1.0));
        assert_eq!(cm.specificity(), Some(0.5));
        assert_eq!(cm.balanced_accuracy(), (0.75, false));
        let m = compute_metrics(&[0.7, 0.6, 0.2, 0.55], &[1, 1, 0, 0], 0.5).unwrap();
        assert_eq!(m.confusion, cm);
        assert_eq!(m.balanced_accuracy, 0.75);
        assert_eq!(m.accuracy, 0.75);
        assert!((m.f1 - 0.8).abs() < 1e-15);
    }

    #[test]
    fn single_class_falls_back() {
        let m = compute_metrics(&[0.9, 0.2, 0.7], &[1, 1, 1], 0.5).unwrap();
        assert_eq!(m.auc, None);
        assert!(m.balanced_accuracy_fallback);
        assert!((m.balanced_accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.specificity, None);
    }

    #[test]
    fn metric_errors() {
        assert!(matches!(compute_metrics(&[0.1], &[0, 1], 0.5), Err(Error::LengthMismatch(1, 2))));
        assert!(matches!(compute_metrics(&[], &[], 0.5), Err(Error::EmptyInput)));
    }

    #[test]
    fn threshold_is_inclusive() {
        let m = compute_metrics(&[0.5, 0.49], &[1, 0], 0.5).unwrap();
        assert_eq!(m.confusion.tp, 1);
        assert_eq!(m.confusion.tn, 1);
    }

    #[test]
    fn drift_labels() {
        let rec = |ba| MetricsRecord {
            auc: None,
            accuracy: ba,
            balanced_accuracy: ba,
            balanced_accuracy_fallback: false,
            sensitivity: None,
            specificity: None,
            precision: None,
            f1: 0.0,
            confusion: ConfusionMatrix::default(),
        };
        let batches: Vec<_> = [0.70, 0.60, 0.66].into_iter().map(rec).collect();
        assert_eq!(label_drift_batches(0.66, &batches), vec![false, true, false]);
        let flat: Vec<_> = [0.66; 3].into_iter().map(rec).collect();
        assert_eq!(label_drift_batches(0.66, &flat), vec![false; 3]);
        let imperfect: Vec<_> = [0.99, 0.5, 0.0].into_iter().map(rec).collect();
        assert_eq!(label_drift_batches(1.0, &imperfect), vec![true; 3]);
    }

    #[test]
    fn always_alarm_detector() {
        let labels = [true, false, true, false];
        let d = score_detection(&[true; 4], &labels, 0).unwrap();
        assert_eq!((d.accuracy, d.sensitivity, d.specificity), (0.5, Some(1.0), Some(0.0)));
    }

    #[test]
    fn tolerance_covers_neighbours() {
        let labels = [false, false, true, false];
        let alerts = [false, true, false, false];
        assert_eq!(score_detection(&alerts, &labels, 0).unwrap().accuracy, 0.5);
        let tol = score_detection(&alerts, &labels, 1).unwrap();
        assert_eq!(tol.accuracy, 1.0);
        assert_eq!(tol.sensitivity, Some(1.0));
    }

    proptest! {
        #[test]
        fn auc_matches_pair_counting(
            pts in prop::collection::vec((0u8..20, 0u8..2), 1..=50)
        ) {
            // coarse score grid forces ties
            let scores: Vec<f64> = pts.iter().map(|(s, _)| *s as f64 / 19.0).collect();
            let labels: Vec<Label> = pts.iter().map(|(_, l)| *l).collect();
            let got = auc(&scores, &labels).unwrap();
            let want = brute_auc(&scores, &labels);
            match (got, want) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-12),
                (a, b) => prop_assert_eq!(a, b),
            }
        }

        #[test]
        fn auc_rank_invariant(
            pts in prop::collection::vec((-5.0f64..5.0, 0u8..2), 2..40)
        ) {
            let scores: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let labels: Vec<Label> = pts.iter().map(|p| p.1).collect();
            let mapped: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(auc(&scores, &labels).unwrap(), auc(&mapped, &labels).unwrap());
        }

        #[test]
        fn balanced_accuracy_identity(
            pts in prop::collection::vec((0.0f64..1.0, 0u8..2), 1..60)
        ) {
            let scores: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let labels: Vec<Label> = pts.iter().map(|p| p.1).collect();
            let m = compute_metrics(&scores, &labels, 0.5).unwrap();
            if let (Some(a), Some(b)) = (m.sensitivity, m.specificity) {
                prop_assert_eq!(m.balanced_accuracy, (a + b) / 2.0);
                prop_assert!(!m.balanced_accuracy_fallback);
            }
            prop_assert_eq!(m.confusion.total(), scores.len());
            let acc = (m.confusion.tp + m.confusion.tn) as f64 / scores.len() as f64;
            prop_assert_eq!(m.accuracy, acc);
        }

        #[test]
        fn detection_perfect_iff_equal(
            pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..30)
        ) {
            let alerts: Vec<bool> = pairs.iter().map(|p| p.0).collect();
            let labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
            let d = score_detection(&alerts, &labels, 0).unwrap();
            prop_assert!((0.0..=1.0).contains(&d.accuracy));
            prop_assert_eq!(d.accuracy == 1.0, alerts == labels);
        }
    }
}
