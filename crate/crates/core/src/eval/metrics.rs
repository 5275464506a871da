//! Classifier metrics: accuracy, confusion counts, ROC curve, and AUC.

use crate::data::EnvironmentDataset;
use crate::error::{Error, Result};
use crate::models::ModelParams;
use crate::nn;

/// Evaluation summary for one model on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    /// Area under the ROC curve (trapezoid rule over distinct scores).
    pub auc: f64,
    /// `confusion[actual][predicted]`, classes 0 = free, 1 = blocked.
    pub confusion: [[usize; 2]; 2],
    /// (false positive rate, true positive rate) from (0, 0) to (1, 1).
    pub roc: Vec<(f64, f64)>,
}

/// Blocked-class probabilities for every example, in dataset order.
pub fn predict_scores(model: &ModelParams, ds: &EnvironmentDataset) -> Result<Vec<f64>> {
    if ds.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty dataset".into()));
    }
    let arch = model.arch.architecture();
    let store = model.to_store()?;
    let mut scores = Vec::with_capacity(ds.len());
    let all: Vec<usize> = (0..ds.len()).collect();
    for chunk in all.chunks(64) {
        let (batch, _) = ds.batch(chunk)?;
        let probs = nn::predict_proba(&arch, &store, &batch)?;
        scores.extend(chunk.iter().enumerate().map(|(i, _)| f64::from(probs.data()[i * 2 + 1])));
    }
    Ok(scores)
}

/// Metrics from raw scores and labels. Scores are blocked-class
/// probabilities; the decision rule is `score > 0.5` (a tie predicts free).
pub fn metrics_from_scores(scores: &[f64], labels: &[u8]) -> Result<MetricsReport> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::Config(format!(
            "scores/labels length mismatch or empty: {} vs {}",
            scores.len(),
            labels.len()
        )));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::Data("labels must be 0 or 1".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Data("non-finite score".into()));
    }

    let mut confusion = [[0usize; 2]; 2];
    for (&s, &l) in scores.iter().zip(labels) {
        let pred = usize::from(s > 0.5);
        confusion[l as usize][pred] += 1;
    }
    let correct = confusion[0][0] + confusion[1][1];
    let accuracy = correct as f64 / labels.len() as f64;

    let (roc, auc) = roc_curve(scores, labels);
    Ok(MetricsReport { accuracy, auc, confusion, roc })
}

/// Full evaluation of a model on a dataset.
pub fn evaluate(model: &ModelParams, ds: &EnvironmentDataset) -> Result<MetricsReport> {
    let scores = predict_scores(model, ds)?;
    let labels: Vec<u8> = ds.examples.iter().map(|e| e.label).collect();
    metrics_from_scores(&scores, &labels)
}

/// ROC points over distinct score thresholds plus trapezoid AUC.
///
/// A single-class dataset has no ranking information; it reports the
/// chance diagonal and AUC 0.5.
fn roc_curve(scores: &[f64], labels: &[u8]) -> (Vec<(f64, f64)>, f64) {
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return (vec![(0.0, 0.0), (1.0, 1.0)], 0.5);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut roc = vec![(0.0, 0.0)];
    let mut auc = 0.0f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut prev_fpr, mut prev_tpr) = (0.0f64, 0.0f64);
    let mut i = 0;
    while i < order.len() {
        // Advance over the whole tie group at this score.
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            match labels[order[i]] {
                1 => tp += 1,
                _ => fp += 1,
            }
            i += 1;
        }
        let fpr = fp as f64 / neg as f64;
        let tpr = tp as f64 / pos as f64;
        auc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        roc.push((fpr, tpr));
        (prev_fpr, prev_tpr) = (fpr, tpr);
    }
    (roc, auc)
}

/// Five-number summary plus mean over a sample of values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

impl BoxStats {
    /// Quartiles by linear interpolation of the order statistics
    /// (the convention most stats packages default to).
    pub fn from_samples(samples: &[f64]) -> Result<BoxStats> {
        if samples.is_empty() {
            return Err(Error::Config("no samples to summarize".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Data("non-finite sample".into()));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let quantile = |q: f64| -> f64 {
            let pos = q * (sorted.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as f64;
            sorted[lo] * (1.0 - frac) + sorted[hi] * frac
        };
        Ok(BoxStats {
            min: sorted[0],
            q1: quantile(0.25),
            median: quantile(0.5),
            q3: quantile(0.75),
            max: sorted[sorted.len() - 1],
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_separation_gives_auc_one() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [1, 1, 0, 0];
        let m = metrics_from_scores(&scores, &labels).unwrap();
        assert_eq!(m.auc, 1.0);
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.confusion, [[2, 0], [0, 2]]);
    }

    #[test]
    fn reversed_ranking_gives_auc_zero() {
        let scores = [0.1, 0.2, 0.8, 0.9];
        let labels = [1, 1, 0, 0];
        let m = metrics_from_scores(&scores, &labels).unwrap();
        assert_eq!(m.auc, 0.0);
    }

    #[test]
    fn all_tied_scores_give_auc_half() {
        let scores = [0.5, 0.5, 0.5, 0.5];
        let labels = [1, 0, 1, 0];
        let m = metrics_from_scores(&scores, &labels).unwrap();
        assert!((m.auc - 0.5).abs() < 1e-12);
        // score == 0.5 is not > 0.5, so everything predicts free.
        assert_eq!(m.confusion, [[2, 0], [2, 0]]);
    }

    #[test]
    fn single_class_reports_chance_diagonal() {
        let m = metrics_from_scores(&[0.3, 0.9], &[1, 1]).unwrap();
        assert_eq!(m.auc, 0.5);
        assert_eq!(m.roc, vec![(0.0, 0.0), (1.0, 1.0)]);
    }

    #[test]
    fn box_stats_interpolates_quartiles() {
        let s = BoxStats::from_samples(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.min, 1.0);
        assert_eq!(s.q1, 1.75);
        assert_eq!(s.median, 2.5);
        assert_eq!(s.q3, 3.25);
        assert_eq!(s.max, 4.0);
        assert_eq!(s.mean, 2.5);
    }
}
