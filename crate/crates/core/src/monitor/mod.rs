//! Transaction monitor: edge features, a logistic reference classifier and
//! detection metrics combined into the composite score `S`.

mod features;
mod logistic;
mod metrics;

use std::io;

use thiserror::Error;

use crate::model::Transaction;

pub use features::{
    extract_all_features, extract_edge_features, EdgeFeatures, FeatureConfig, FEATURE_DIM,
    FEATURE_NAMES,
};
pub use logistic::{train_monitor, MonitorModel, TrainConfig, Training};
pub use metrics::{
    auc, average_precision, best_f1_threshold, compute_metrics, f1_at, CompositeWeights,
    MetricsReport,
};

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("non-finite score")]
    NonFinite,
    #[error("metrics need both classes ({positives} positive, {negatives} negative)")]
    Degenerate { positives: usize, negatives: usize },
    #[error("training needs both classes ({positives} positive, {negatives} negative)")]
    SingleClass { positives: usize, negatives: usize },
    #[error("empty edge subset")]
    EmptySubset,
    #[error("edge index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("model file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Anything that assigns a suspicion score in `[0, 1]` to every transaction of a log.
pub trait Scorer {
    fn score_log(&self, txs: &[Transaction]) -> Vec<f64>;
    /// Scores at or above this value are flagged.
    fn threshold(&self) -> f64;

    /// Scores of `extra` when appended after `base`. The default rescores the
    /// concatenated log.
    fn score_appended(&self, base: &[Transaction], extra: &[Transaction]) -> Vec<f64> {
        let mut all = base.to_vec();
        all.extend_from_slice(extra);
        self.score_log(&all).split_off(base.len())
    }
}

/// Scores the log and evaluates the edges in `subset` against their labels.
pub fn score_graph<S: Scorer + ?Sized>(
    scorer: &S,
    txs: &[Transaction],
    subset: &[usize],
    weights: &CompositeWeights,
) -> Result<MetricsReport, MonitorError> {
    if subset.is_empty() {
        return Err(MonitorError::EmptySubset);
    }
    if let Some(&i) = subset.iter().find(|&&i| i >= txs.len()) {
        return Err(MonitorError::IndexOutOfRange(i));
    }
    let all = scorer.score_log(txs);
    let scores: Vec<f64> = subset.iter().map(|&i| all[i]).collect();
    let labels: Vec<bool> = subset.iter().map(|&i| txs[i].is_laundering).collect();
    compute_metrics(&scores, &labels, scorer.threshold(), weights)
}
