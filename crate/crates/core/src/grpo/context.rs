//! Fixed evaluation context for the composite score of a cluster.

use super::GrpoError;
use crate::anomaly::{cluster_transactions, IllicitCluster};
use crate::model::{AccountRef, PaymentFormat, Transaction};
use crate::monitor::{compute_metrics, CompositeWeights, MetricsReport, Scorer};

/// Bank identifier of the stand-in accounts that play cluster roles during
/// evaluation; the context may not use it.
pub const EVAL_BANK: &str = "EVAL";

/// A held-out slice of normal transactions with their scores computed once.
/// A cluster is evaluated by laying it on fresh accounts at `anchor`, scoring
/// its edges after the slice, and computing metrics over slice plus cluster.
pub struct EvalContext<'a, S: Scorer + ?Sized> {
    scorer: &'a S,
    base: Vec<Transaction>,
    base_scores: Vec<f64>,
    base_labels: Vec<bool>,
    pub anchor: i64,
    pub format: PaymentFormat,
    pub weights: CompositeWeights,
}

impl<'a, S: Scorer + ?Sized> EvalContext<'a, S> {
    pub fn new(
        scorer: &'a S,
        base: Vec<Transaction>,
        anchor: i64,
        format: PaymentFormat,
        weights: CompositeWeights,
    ) -> Result<Self, GrpoError> {
        let scores = scorer.score_log(&base);
        Self::with_scores(scorer, base, scores, anchor, format, weights)
    }

    /// Like `new`, with the slice scores supplied by the caller, e.g. taken
    /// from a scoring pass over a longer log that includes its history.
    pub fn with_scores(
        scorer: &'a S,
        base: Vec<Transaction>,
        base_scores: Vec<f64>,
        anchor: i64,
        format: PaymentFormat,
        weights: CompositeWeights,
    ) -> Result<Self, GrpoError> {
        weights.validate()?;
        if base_scores.len() != base.len() {
            return Err(GrpoError::Config(format!(
                "{} scores for {} context transactions",
                base_scores.len(),
                base.len()
            )));
        }
        if base
            .iter()
            .any(|t| t.from.bank_id() == EVAL_BANK || t.to.bank_id() == EVAL_BANK)
        {
            return Err(GrpoError::Config(format!(
                "context uses the reserved bank id {EVAL_BANK:?}"
            )));
        }
        if base.iter().all(|t| t.is_laundering) {
            return Err(GrpoError::Config(
                "context needs at least one normal transaction".into(),
            ));
        }
        let base_labels = base.iter().map(|t| t.is_laundering).collect();
        Ok(EvalContext {
            scorer,
            base,
            base_scores,
            base_labels,
            anchor,
            format,
            weights,
        })
    }

    pub fn base(&self) -> &[Transaction] {
        &self.base
    }

    /// The cluster's transactions as laid on the stand-in accounts.
    pub fn materialize(&self, cluster: &IllicitCluster) -> Vec<Transaction> {
        cluster_transactions(
            cluster,
            self.anchor,
            |r| AccountRef::new(EVAL_BANK, &format!("R{}", r.0)).expect("valid account id"),
            self.format,
        )
    }

    pub fn evaluate(&self, cluster: &IllicitCluster) -> Result<MetricsReport, GrpoError> {
        let extra = self.materialize(cluster);
        let mut scores = self.base_scores.clone();
        scores.extend(self.scorer.score_appended(&self.base, &extra));
        let mut labels = self.base_labels.clone();
        labels.extend(extra.iter().map(|t| t.is_laundering));
        Ok(compute_metrics(
            &scores,
            &labels,
            self.scorer.threshold(),
            &self.weights,
        )?)
    }

    /// Composite score `S` of the cluster in this context.
    pub fn score(&self, cluster: &IllicitCluster) -> Result<f64, GrpoError> {
        Ok(self.evaluate(cluster)?.s)
    }
}
