//! Ranking and threshold metrics and the composite detectability score.

use serde::{Deserialize, Serialize};

use super::MonitorError;

/// Non-negative weights of F1, AUC and AP in the composite score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompositeWeights {
    pub f1: f64,
    pub auc: f64,
    pub ap: f64,
}

impl Default for CompositeWeights {
    fn default() -> Self {
        CompositeWeights {
            f1: 1.0 / 3.0,
            auc: 1.0 / 3.0,
            ap: 1.0 / 3.0,
        }
    }
}

impl CompositeWeights {
    pub fn validate(&self) -> Result<(), MonitorError> {
        let w = [self.f1, self.auc, self.ap];
        if w.iter().any(|x| !(*x >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(MonitorError::Config(
                "composite weights must be non-negative and sum to 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub f1: f64,
    pub auc: f64,
    pub ap: f64,
    /// Composite score `w_f1·f1 + w_auc·auc + w_ap·ap`.
    pub s: f64,
    pub threshold: f64,
}

fn check(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), MonitorError> {
    if scores.len() != labels.len() {
        return Err(MonitorError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MonitorError::NonFinite);
    }
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MonitorError::Degenerate {
            positives: pos,
            negatives: neg,
        });
    }
    Ok((pos, neg))
}

/// Indices sorted by descending score, ties in index order.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Area under the ROC curve via midranks (ties count one half).
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, MonitorError> {
    let (pos, neg) = check(scores, labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their mean.
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision: `Σ (R_k − R_{k−1}) · P_k` over distinct score thresholds in
/// descending order, with tied scores entering together.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64, MonitorError> {
    let (pos, _) = check(scores, labels)?;
    let idx = descending(scores);
    let (mut tp, mut seen, mut ap, mut prev_recall) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            tp += usize::from(labels[idx[j]]);
            seen += 1;
            j += 1;
        }
        let recall = tp as f64 / pos as f64;
        ap += (recall - prev_recall) * (tp as f64 / seen as f64);
        prev_recall = recall;
        i = j;
    }
    Ok(ap)
}

/// F1 of the rule `score >= threshold`; zero when nothing is predicted positive.
pub fn f1_at(scores: &[f64], labels: &[bool], threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (s, &l) in scores.iter().zip(labels) {
        match (*s >= threshold, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
}

/// Threshold among the observed scores that maximizes F1; ties go to the higher
/// threshold. Returns `(threshold, f1)`.
pub fn best_f1_threshold(scores: &[f64], labels: &[bool]) -> Result<(f64, f64), MonitorError> {
    let (pos, _) = check(scores, labels)?;
    let idx = descending(scores);
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut best = (scores[idx[0]], -1.0);
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            tp += usize::from(labels[idx[j]]);
            seen += 1;
            j += 1;
        }
        let f1 = 2.0 * tp as f64 / (seen + pos) as f64;
        if f1 > best.1 {
            best = (scores[idx[i]], f1);
        }
        i = j;
    }
    Ok(best)
}

pub fn compute_metrics(
    scores: &[f64],
    labels: &[bool],
    threshold: f64,
    weights: &CompositeWeights,
) -> Result<MetricsReport, MonitorError> {
    let auc = auc(scores, labels)?;
    let ap = average_precision(scores, labels)?;
    let f1 = f1_at(scores, labels, threshold);
    let s = weights.f1 * f1 + weights.auc * auc + weights.ap * ap;
    Ok(MetricsReport {
        f1,
        auc,
        ap,
        s,
        threshold,
    })
}
