//! Per-transaction features over trailing windows.
//!
//! A transaction `j` precedes `i` when `(timestamp_j, j) < (timestamp_i, i)`;
//! windowed statistics use the preceding transactions with
//! `timestamp_j >= timestamp_i - window_secs`.

use std::collections::HashMap;
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::model::{AccountRef, Transaction};

pub const FEATURE_DIM: usize = 16;

pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "log_amount",
    "hour_sin",
    "hour_cos",
    "fmt_mobile",
    "fmt_card",
    "fmt_transfer",
    "fmt_cash",
    "fmt_cheque",
    "sender_out",
    "sender_in",
    "receiver_out",
    "receiver_in",
    "sender_mean_log_amount",
    "receiver_mean_log_amount",
    "repeated_pair",
    "sender_burst",
];

pub type EdgeFeatures = [f64; FEATURE_DIM];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub window_secs: i64,
    /// Half-width of the burst window around a transaction at its sender.
    pub burst_secs: i64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            window_secs: 7 * 86_400,
            burst_secs: 3_600,
        }
    }
}

fn log_amount(t: &Transaction) -> f64 {
    t.amount_paid.max(0.0).ln_1p()
}

fn static_part(t: &Transaction, f: &mut EdgeFeatures) {
    f[0] = log_amount(t);
    let angle = TAU * t.timestamp.rem_euclid(86_400) as f64 / 86_400.0;
    f[1] = angle.sin();
    f[2] = angle.cos();
    f[3 + t.payment_format.index()] = 1.0;
}

/// Features of one transaction by direct scan of the whole log.
pub fn extract_edge_features(
    txs: &[Transaction],
    index: usize,
    cfg: &FeatureConfig,
) -> EdgeFeatures {
    let t = &txs[index];
    let mut f = [0.0; FEATURE_DIM];
    static_part(t, &mut f);
    let (s, r) = (&t.from, &t.to);
    let (mut s_out_sum, mut r_in_sum) = (0.0, 0.0);
    for (j, u) in txs.iter().enumerate() {
        if u.from == *s && j != index && (u.timestamp - t.timestamp).abs() <= cfg.burst_secs {
            f[15] += 1.0;
        }
        let precedes = (u.timestamp, j) < (t.timestamp, index);
        if !precedes || u.timestamp < t.timestamp - cfg.window_secs {
            continue;
        }
        if u.from == *s {
            f[8] += 1.0;
            s_out_sum += log_amount(u);
        }
        if u.to == *s {
            f[9] += 1.0;
        }
        if u.from == *r {
            f[10] += 1.0;
        }
        if u.to == *r {
            f[11] += 1.0;
            r_in_sum += log_amount(u);
        }
        if u.from == *s && u.to == *r {
            f[14] += 1.0;
        }
    }
    if f[8] > 0.0 {
        f[12] = s_out_sum / f[8];
    }
    if f[11] > 0.0 {
        f[13] = r_in_sum / f[11];
    }
    f
}

#[derive(Default, Clone, Copy)]
struct Tally {
    out_n: u32,
    in_n: u32,
    out_sum: f64,
    in_sum: f64,
}

/// Features of every transaction in one sweep; equal to
/// [`extract_edge_features`] up to floating-point summation order.
pub fn extract_all_features(txs: &[Transaction], cfg: &FeatureConfig) -> Vec<EdgeFeatures> {
    let n = txs.len();
    let mut ids: HashMap<&AccountRef, u32> = HashMap::new();
    let mut ends = Vec::with_capacity(n);
    for t in txs {
        let next = ids.len() as u32;
        let a = *ids.entry(&t.from).or_insert(next);
        let next = ids.len() as u32;
        let b = *ids.entry(&t.to).or_insert(next);
        ends.push((a, b));
    }
    let n_acc = ids.len();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (txs[i].timestamp, i));

    // Sender burst counts from each sender's sorted timestamps.
    let mut by_sender: Vec<Vec<i64>> = vec![Vec::new(); n_acc];
    for &i in &order {
        by_sender[ends[i].0 as usize].push(txs[i].timestamp);
    }

    let mut out = vec![[0.0; FEATURE_DIM]; n];
    let mut tally = vec![Tally::default(); n_acc];
    let mut pairs: HashMap<(u32, u32), u32> = HashMap::new();
    let mut lo = 0;
    for (p, &i) in order.iter().enumerate() {
        let t = &txs[i];
        while lo < p && txs[order[lo]].timestamp < t.timestamp - cfg.window_secs {
            let j = order[lo];
            let (a, b) = ends[j];
            let la = log_amount(&txs[j]);
            let ta = &mut tally[a as usize];
            ta.out_n -= 1;
            ta.out_sum = if ta.out_n == 0 { 0.0 } else { ta.out_sum - la };
            let tb = &mut tally[b as usize];
            tb.in_n -= 1;
            tb.in_sum = if tb.in_n == 0 { 0.0 } else { tb.in_sum - la };
            if let Some(c) = pairs.get_mut(&(a, b)) {
                *c -= 1;
                if *c == 0 {
                    pairs.remove(&(a, b));
                }
            }
            lo += 1;
        }
        let (s, r) = ends[i];
        let f = &mut out[i];
        static_part(t, f);
        let (ts, tr) = (tally[s as usize], tally[r as usize]);
        f[8] = f64::from(ts.out_n);
        f[9] = f64::from(ts.in_n);
        f[10] = f64::from(tr.out_n);
        f[11] = f64::from(tr.in_n);
        if ts.out_n > 0 {
            f[12] = ts.out_sum / f64::from(ts.out_n);
        }
        if tr.in_n > 0 {
            f[13] = tr.in_sum / f64::from(tr.in_n);
        }
        f[14] = f64::from(pairs.get(&(s, r)).copied().unwrap_or(0));
        let times = &by_sender[s as usize];
        let a = times.partition_point(|&x| x < t.timestamp - cfg.burst_secs);
        let b = times.partition_point(|&x| x <= t.timestamp + cfg.burst_secs);
        f[15] = (b - a - 1) as f64;

        let la = log_amount(t);
        tally[s as usize].out_n += 1;
        tally[s as usize].out_sum += la;
        tally[r as usize].in_n += 1;
        tally[r as usize].in_sum += la;
        *pairs.entry((s, r)).or_insert(0) += 1;
    }
    out
}
