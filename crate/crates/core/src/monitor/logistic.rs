//! Logistic reference monitor over standardized edge features.
//!
//! Model file format, one record per line:
//!
//! ```text
//! monitor v1
//! dim <d>
//! window_secs <i64>
//! burst_secs <i64>
//! threshold <f64>
//! bias <f64>
//! weights <d values>
//! mean <d values>
//! std <d values>
//! ```

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::features::{extract_all_features, EdgeFeatures, FeatureConfig, FEATURE_DIM};
use super::metrics::{best_f1_threshold, compute_metrics, CompositeWeights, MetricsReport};
use super::{MonitorError, Scorer};
use crate::model::Transaction;
use crate::rng::StreamKey;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
    /// Share of each class held out for threshold selection.
    pub validation_fraction: f64,
    /// Negatives beyond this count are subsampled before training.
    pub max_negatives: usize,
    pub features: FeatureConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 400,
            learning_rate: 0.5,
            l2: 1e-4,
            validation_fraction: 0.25,
            max_negatives: 100_000,
            features: FeatureConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), MonitorError> {
        if self.iterations == 0 {
            return Err(MonitorError::Config("iterations must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite())
            || !(self.l2 >= 0.0 && self.l2.is_finite())
        {
            return Err(MonitorError::Config(
                "learning_rate must be positive and l2 non-negative".into(),
            ));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(MonitorError::Config(
                "validation_fraction must lie in (0, 1)".into(),
            ));
        }
        if self.max_negatives == 0 {
            return Err(MonitorError::Config(
                "max_negatives must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// In `(0, 1)`.
    pub threshold: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub features: FeatureConfig,
}

/// A fitted model and its metrics on the held-out validation slice.
#[derive(Debug, Clone)]
pub struct Training {
    pub model: MonitorModel,
    pub validation: MetricsReport,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl MonitorModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    fn logit(&self, f: &[f64]) -> f64 {
        let mut z = self.bias;
        for k in 0..self.weights.len() {
            z += self.weights[k] * (f[k] - self.mean[k]) / self.std[k];
        }
        z
    }

    pub fn score(&self, f: &EdgeFeatures) -> f64 {
        sigmoid(self.logit(f))
    }

    pub fn score_features(&self, fs: &[EdgeFeatures]) -> Vec<f64> {
        fs.iter().map(|f| self.score(f)).collect()
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        writeln!(w, "monitor v1")?;
        writeln!(w, "dim {}", self.dim())?;
        writeln!(w, "window_secs {}", self.features.window_secs)?;
        writeln!(w, "burst_secs {}", self.features.burst_secs)?;
        writeln!(w, "threshold {}", self.threshold)?;
        writeln!(w, "bias {}", self.bias)?;
        writeln!(w, "weights {}", join(&self.weights))?;
        writeln!(w, "mean {}", join(&self.mean))?;
        writeln!(w, "std {}", join(&self.std))?;
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<MonitorModel, MonitorError> {
        const KEYS: [&str; 9] = [
            "monitor",
            "dim",
            "window_secs",
            "burst_secs",
            "threshold",
            "bias",
            "weights",
            "mean",
            "std",
        ];
        let mut fields: Vec<(usize, String)> = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            fields.push((i + 1, line));
        }
        let bad = |line: usize, message: String| MonitorError::Format { line, message };
        if fields.len() != KEYS.len() {
            return Err(bad(
                fields.len() + 1,
                format!("expected {} records", KEYS.len()),
            ));
        }
        let mut vals: Vec<(usize, &str)> = Vec::new();
        for ((line, text), key) in fields.iter().zip(KEYS) {
            let (k, rest) = text.split_once(' ').unwrap_or((text, ""));
            if k != key {
                return Err(bad(*line, format!("expected {key:?}, found {k:?}")));
            }
            vals.push((*line, rest.trim()));
        }
        if vals[0].1 != "v1" {
            return Err(bad(
                vals[0].0,
                format!("unsupported version {:?}", vals[0].1),
            ));
        }
        let int = |(line, s): (usize, &str)| {
            s.parse::<i64>()
                .map_err(|_| bad(line, format!("bad integer {s:?}")))
        };
        let real = |(line, s): (usize, &str)| match s.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(x),
            _ => Err(bad(line, format!("bad number {s:?}"))),
        };
        let dim = int(vals[1])?;
        if dim != FEATURE_DIM as i64 {
            return Err(bad(
                vals[1].0,
                format!("dimension {dim}, expected {FEATURE_DIM}"),
            ));
        }
        let vector = |v: (usize, &str)| -> Result<Vec<f64>, MonitorError> {
            let xs: Vec<f64> =
                v.1.split_whitespace()
                    .map(|s| real((v.0, s)))
                    .collect::<Result<_, _>>()?;
            if xs.len() != FEATURE_DIM {
                return Err(bad(
                    v.0,
                    format!("{} values, expected {FEATURE_DIM}", xs.len()),
                ));
            }
            Ok(xs)
        };
        let threshold = real(vals[4])?;
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(bad(vals[4].0, "threshold must lie in (0, 1)".into()));
        }
        let std = vector(vals[8])?;
        if std.iter().any(|s| *s <= 0.0) {
            return Err(bad(vals[8].0, "std entries must be positive".into()));
        }
        Ok(MonitorModel {
            features: FeatureConfig {
                window_secs: int(vals[2])?,
                burst_secs: int(vals[3])?,
            },
            threshold,
            bias: real(vals[5])?,
            weights: vector(vals[6])?,
            mean: vector(vals[7])?,
            std,
        })
    }
}

impl Scorer for MonitorModel {
    fn score_log(&self, txs: &[Transaction]) -> Vec<f64> {
        self.score_features(&extract_all_features(txs, &self.features))
    }

    fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Features only look at the history of an edge's own endpoints, so when
    /// `extra` shares no account with `base` it can be scored on its own.
    fn score_appended(&self, base: &[Transaction], extra: &[Transaction]) -> Vec<f64> {
        let accounts: std::collections::HashSet<_> =
            extra.iter().flat_map(|t| [&t.from, &t.to]).collect();
        if base
            .iter()
            .any(|t| accounts.contains(&t.from) || accounts.contains(&t.to))
        {
            let mut all = base.to_vec();
            all.extend_from_slice(extra);
            return self.score_log(&all).split_off(base.len());
        }
        self.score_log(extra)
    }
}

/// Midpoint between the best-F1 score and the next lower observed score, kept inside `(0, 1)`.
fn decision_threshold(scores: &[f64], labels: &[bool]) -> Result<f64, MonitorError> {
    let (t, _) = best_f1_threshold(scores, labels)?;
    let below = scores
        .iter()
        .copied()
        .filter(|s| *s < t)
        .fold(f64::NEG_INFINITY, f64::max);
    let t = if below.is_finite() {
        0.5 * (t + below)
    } else {
        t
    };
    Ok(t.clamp(1e-9, 1.0 - 1e-9))
}

/// Fits a class-balanced logistic regression by full-batch gradient descent.
/// The seed controls the stratified train/validation split and negative subsampling.
pub fn train_monitor(
    features: &[EdgeFeatures],
    labels: &[bool],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Training, MonitorError> {
    cfg.validate()?;
    if features.len() != labels.len() {
        return Err(MonitorError::LengthMismatch {
            scores: features.len(),
            labels: labels.len(),
        });
    }
    if features.iter().flatten().any(|x| !x.is_finite()) {
        return Err(MonitorError::NonFinite);
    }
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if pos.len() < 2 || neg.len() < 2 {
        return Err(MonitorError::SingleClass {
            positives: pos.len(),
            negatives: neg.len(),
        });
    }
    let mut rng = StreamKey::root(seed).named("monitor-train").rng();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    neg.truncate(cfg.max_negatives);
    let held = |n: usize| ((n as f64 * cfg.validation_fraction).round() as usize).clamp(1, n - 1);
    let (vp, tp) = pos.split_at(held(pos.len()));
    let (vn, tn) = neg.split_at(held(neg.len()));
    let train: Vec<usize> = tp.iter().chain(tn).copied().collect();
    let val: Vec<usize> = vp.iter().chain(vn).copied().collect();

    let n = train.len() as f64;
    let mut mean = vec![0.0; FEATURE_DIM];
    let mut std = vec![0.0; FEATURE_DIM];
    for &i in &train {
        for k in 0..FEATURE_DIM {
            mean[k] += features[i][k] / n;
        }
    }
    for &i in &train {
        for k in 0..FEATURE_DIM {
            std[k] += (features[i][k] - mean[k]).powi(2) / n;
        }
    }
    for s in &mut std {
        *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
    }
    let x: Vec<EdgeFeatures> = train
        .iter()
        .map(|&i| std::array::from_fn(|k| (features[i][k] - mean[k]) / std[k]))
        .collect();
    let y: Vec<f64> = train
        .iter()
        .map(|&i| f64::from(u8::from(labels[i])))
        .collect();
    let w_pos = n / (2.0 * tp.len() as f64);
    let w_neg = n / (2.0 * tn.len() as f64);

    let mut w = vec![0.0; FEATURE_DIM];
    let mut b = 0.0;
    for _ in 0..cfg.iterations {
        let mut gw = vec![0.0; FEATURE_DIM];
        let mut gb = 0.0;
        for (xi, &yi) in x.iter().zip(&y) {
            let z = b + xi.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let r = (sigmoid(z) - yi) * if yi > 0.5 { w_pos } else { w_neg };
            gb += r;
            for k in 0..FEATURE_DIM {
                gw[k] += r * xi[k];
            }
        }
        b -= cfg.learning_rate * gb / n;
        for k in 0..FEATURE_DIM {
            w[k] -= cfg.learning_rate * (gw[k] / n + cfg.l2 * w[k]);
        }
    }

    let mut model = MonitorModel {
        weights: w,
        bias: b,
        threshold: 0.5,
        mean,
        std,
        features: cfg.features,
    };
    let scores: Vec<f64> = val.iter().map(|&i| model.score(&features[i])).collect();
    let val_labels: Vec<bool> = val.iter().map(|&i| labels[i]).collect();
    model.threshold = decision_threshold(&scores, &val_labels)?;
    let validation = compute_metrics(
        &scores,
        &val_labels,
        model.threshold,
        &CompositeWeights::default(),
    )?;
    Ok(Training { model, validation })
}
