//! Train/validation/test splits, summary statistics and feature tables.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::io::{write_transactions, AttributeTable, DataError};
use crate::model::Transaction;
use crate::monitor::{extract_all_features, FeatureConfig, FEATURE_NAMES};
use crate::rng::StreamKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// Contiguous blocks of the time-sorted log.
    #[default]
    Temporal,
    /// Rows shuffled before cutting; each part keeps time order.
    Random,
}

/// Positions `train`, `val`, `test` partition `0..n` at 6:2:2. Validation and
/// test sizes are floored; the remainder goes to training.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// Splits a time-sorted log.
pub fn make_splits(txs: &[Transaction]) -> Result<DatasetSplit, DataError> {
    let n = txs.len();
    if n < 10 {
        return Err(DataError::TooFewRows(n));
    }
    if let Some(i) = txs.windows(2).position(|w| w[1].timestamp < w[0].timestamp) {
        return Err(DataError::Unsorted(i + 1));
    }
    let val = n * 2 / 10;
    let test = n * 2 / 10;
    let train = n - val - test;
    Ok(DatasetSplit {
        train: 0..train,
        val: train..train + val,
        test: train + val..n,
    })
}

/// Row indices of each part. Temporal parts are the ranges themselves; random
/// parts cut a seeded permutation and sort each part.
pub fn split_rows(split: &DatasetSplit, mode: SplitMode, seed: u64) -> [Vec<usize>; 3] {
    let n = split.test.end;
    let mut order: Vec<usize> = (0..n).collect();
    if mode == SplitMode::Random {
        order.shuffle(&mut StreamKey::root(seed).named("split").rng());
    }
    [&split.train, &split.val, &split.test].map(|r| {
        let mut rows = order[r.clone()].to_vec();
        rows.sort_unstable();
        rows
    })
}

/// Writes `train.csv`, `val.csv` and `test.csv` into `dir`.
pub fn write_splits(
    txs: &[Transaction],
    mode: SplitMode,
    seed: u64,
    dir: &Path,
) -> Result<DatasetSplit, DataError> {
    let split = make_splits(txs)?;
    for (name, rows) in ["train", "val", "test"]
        .iter()
        .zip(split_rows(&split, mode, seed))
    {
        let part: Vec<Transaction> = rows.into_iter().map(|i| txs[i].clone()).collect();
        let mut w = BufWriter::new(File::create(dir.join(format!("{name}.csv")))?);
        write_transactions(&part, &mut w)?;
        w.flush()?;
    }
    Ok(split)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    /// Calendar days (UTC) from the first to the last transaction, inclusive.
    pub days: u64,
    /// Distinct `bank:account` keys on either side of a transaction.
    pub accounts: usize,
    pub transactions: usize,
    pub laundering: usize,
    /// Transactions per laundering transaction; `None` without laundering.
    pub one_per_n: Option<f64>,
}

pub fn summarize(txs: &[Transaction]) -> Summary {
    let days = match (
        txs.iter().map(|t| t.timestamp).min(),
        txs.iter().map(|t| t.timestamp).max(),
    ) {
        (Some(a), Some(b)) => (b.div_euclid(86_400) - a.div_euclid(86_400) + 1) as u64,
        _ => 0,
    };
    let accounts: HashSet<_> = txs.iter().flat_map(|t| [&t.from, &t.to]).collect();
    let laundering = txs.iter().filter(|t| t.is_laundering).count();
    Summary {
        days,
        accounts: accounts.len(),
        transactions: txs.len(),
        laundering,
        one_per_n: (laundering > 0).then(|| txs.len() as f64 / laundering as f64),
    }
}

impl Summary {
    pub const HEADER: &'static str = "days,accounts,transactions,laundering,one_per_n";

    pub fn one_per_n_text(&self) -> String {
        self.one_per_n
            .map_or_else(|| "undefined".to_string(), |n| format!("{n:.2}"))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::HEADER)?;
        writeln!(
            w,
            "{},{},{},{},{}",
            self.days,
            self.accounts,
            self.transactions,
            self.laundering,
            self.one_per_n_text()
        )
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "days {}, accounts {}, transactions {}, laundering {}, 1 per {}",
            self.days,
            self.accounts,
            self.transactions,
            self.laundering,
            self.one_per_n_text()
        )
    }
}

/// Number of profile attributes exported for a fraction of `available`.
pub fn profile_attribute_count(available: usize, fraction: f64) -> usize {
    (((fraction * available as f64) - 1e-9).ceil().max(0.0) as usize).min(available)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureExport {
    pub with_profiles: bool,
    pub profile_fraction: f64,
    pub features: FeatureConfig,
}

impl Default for FeatureExport {
    fn default() -> Self {
        FeatureExport {
            with_profiles: true,
            profile_fraction: 1.0,
            features: FeatureConfig::default(),
        }
    }
}

pub fn feature_header(profiles: &AttributeTable, opts: &FeatureExport) -> Vec<String> {
    let mut h = vec!["row".to_string()];
    h.extend(FEATURE_NAMES.iter().map(|s| s.to_string()));
    if opts.with_profiles {
        let k = profile_attribute_count(profiles.names.len(), opts.profile_fraction);
        for side in ["sender", "receiver"] {
            h.extend(profiles.names[..k].iter().map(|n| format!("{side}_{n}")));
        }
    }
    h.push("is_laundering".to_string());
    h
}

/// Writes one row per transaction: its position, the monitor's edge features,
/// optionally sender and receiver profile columns for the first
/// `profile_attribute_count` attributes in table order, and the label.
/// Accounts absent from the table get empty profile cells.
pub fn export_features<W: Write>(
    txs: &[Transaction],
    profiles: &AttributeTable,
    opts: &FeatureExport,
    w: W,
) -> Result<(), DataError> {
    if !(0.0..=1.0).contains(&opts.profile_fraction) {
        return Err(DataError::Fraction(opts.profile_fraction));
    }
    let k = if opts.with_profiles {
        profile_attribute_count(profiles.names.len(), opts.profile_fraction)
    } else {
        0
    };
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    out.write_record(feature_header(profiles, opts))?;
    let blank = vec![String::new(); k];
    let features = extract_all_features(txs, &opts.features);
    let mut row = Vec::with_capacity(FEATURE_NAMES.len() + 2 * k + 2);
    for (i, (t, f)) in txs.iter().zip(&features).enumerate() {
        row.clear();
        row.push(i.to_string());
        row.extend(f.iter().map(|x| x.to_string()));
        for acc in [&t.from, &t.to] {
            let vals = profiles.rows.get(acc).map_or(&blank[..], |v| &v[..k]);
            row.extend(vals.iter().cloned());
        }
        row.push(if t.is_laundering { "1" } else { "0" }.to_string());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}
