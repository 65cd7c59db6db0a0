//! Transaction and profile CSV files.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use thiserror::Error;

use crate::model::{
    AccountRef, CurrencyCode, EntityProfile, PaymentFormat, Profile, ProfileMap, Transaction,
    TransactionLog,
};

pub const TRANSACTION_HEADER: [&str; 11] = [
    "Timestamp",
    "From Bank",
    "From Account",
    "To Bank",
    "To Account",
    "Amount Paid",
    "Payment Currency",
    "Amount Received",
    "Receiving Currency",
    "Payment Format",
    "is_laundering",
];

const TIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("a split needs at least 10 rows, found {0}")]
    TooFewRows(usize),
    #[error("log is not time-sorted at row {0}")]
    Unsorted(usize),
    #[error("profile fraction {0} is outside [0, 1]")]
    Fraction(f64),
}

fn row_err(line: u64, message: impl Into<String>) -> DataError {
    DataError::Row {
        line,
        message: message.into(),
    }
}

pub fn format_timestamp(ts: i64) -> String {
    DateTime::from_timestamp(ts, 0)
        .map_or_else(|| ts.to_string(), |d| d.format(TIME_FORMAT).to_string())
}

pub fn parse_timestamp(s: &str) -> Option<i64> {
    NaiveDateTime::parse_from_str(s, TIME_FORMAT)
        .ok()
        .map(|d| d.and_utc().timestamp())
}

/// Writes the log with the fixed header. Amounts use the shortest decimal
/// form that reads back to the same value.
pub fn write_transactions<W: Write>(txs: &[Transaction], w: W) -> Result<(), DataError> {
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    out.write_record(TRANSACTION_HEADER)?;
    for t in txs {
        out.write_record([
            format_timestamp(t.timestamp).as_str(),
            t.from.bank_id(),
            t.from.account_id(),
            t.to.bank_id(),
            t.to.account_id(),
            &t.amount_paid.to_string(),
            t.payment_currency.as_str(),
            &t.amount_received.to_string(),
            t.receiving_currency.as_str(),
            t.payment_format.as_str(),
            if t.is_laundering { "1" } else { "0" },
        ])?;
    }
    out.flush()?;
    Ok(())
}

fn amount(s: &str, line: u64, col: &str) -> Result<f64, DataError> {
    match s.parse::<f64>() {
        Ok(x) if x.is_finite() && x >= 0.0 => Ok(x),
        _ => Err(row_err(line, format!("{col}: bad amount {s:?}"))),
    }
}

/// Reads a transaction CSV. The header must match exactly and every row must
/// have eleven well-formed fields; errors carry the 1-based file line.
pub fn read_transactions<R: Read>(r: R) -> Result<Vec<Transaction>, DataError> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(r);
    let mut out = Vec::new();
    let mut rec = csv::StringRecord::new();
    let mut first = true;
    while rd.read_record(&mut rec)? {
        let line = rec.position().map_or(0, |p| p.line());
        if first {
            first = false;
            if rec.iter().ne(TRANSACTION_HEADER.iter().copied()) {
                return Err(row_err(
                    line,
                    format!("unexpected header {:?}", rec.iter().collect::<Vec<_>>()),
                ));
            }
            continue;
        }
        if rec.len() != TRANSACTION_HEADER.len() {
            return Err(row_err(
                line,
                format!(
                    "expected {} fields, found {}",
                    TRANSACTION_HEADER.len(),
                    rec.len()
                ),
            ));
        }
        let f = |i: usize| &rec[i];
        let timestamp = parse_timestamp(f(0))
            .ok_or_else(|| row_err(line, format!("bad timestamp {:?}", f(0))))?;
        let from = AccountRef::new(f(1), f(2)).map_err(|e| row_err(line, e.to_string()))?;
        let to = AccountRef::new(f(3), f(4)).map_err(|e| row_err(line, e.to_string()))?;
        let currency = |s: &str| {
            s.parse::<CurrencyCode>()
                .map_err(|e| row_err(line, e.to_string()))
        };
        let is_laundering = match f(10) {
            "0" => false,
            "1" => true,
            other => {
                return Err(row_err(
                    line,
                    format!("is_laundering must be 0 or 1, found {other:?}"),
                ))
            }
        };
        out.push(Transaction {
            timestamp,
            from,
            to,
            amount_paid: amount(f(5), line, "Amount Paid")?,
            payment_currency: currency(f(6))?,
            amount_received: amount(f(7), line, "Amount Received")?,
            receiving_currency: currency(f(8))?,
            payment_format: f(9)
                .parse::<PaymentFormat>()
                .map_err(|e| row_err(line, e.to_string()))?,
            is_laundering,
        });
    }
    if first {
        return Err(row_err(1, "missing header"));
    }
    Ok(out)
}

pub fn export_csv(log: &TransactionLog, path: &Path) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_transactions(&log.transactions, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Reads a transaction file; the returned log carries no profiles.
pub fn import_csv(path: &Path) -> Result<TransactionLog, DataError> {
    let txs = read_transactions(BufReader::new(File::open(path)?))?;
    Ok(TransactionLog::new(txs, ProfileMap::new()))
}

/// Named text attributes per account, in a fixed column order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttributeTable {
    pub names: Vec<String>,
    pub rows: HashMap<AccountRef, Vec<String>>,
}

impl AttributeTable {
    /// Person attributes in canonical order; merchants fill `region` only.
    pub fn from_profiles(profiles: &ProfileMap) -> AttributeTable {
        let names: Vec<String> = EntityProfile::ATTRIBUTES
            .iter()
            .map(|s| s.to_string())
            .collect();
        let rows = profiles
            .iter()
            .map(|(a, p)| (a.clone(), names.iter().map(|n| p.attribute(n)).collect()))
            .collect();
        AttributeTable { names, rows }
    }

    /// Writes `bank,account,<names...>` rows sorted by account.
    pub fn write<W: Write>(&self, w: W) -> Result<(), DataError> {
        let mut out = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        let mut header = vec!["bank".to_string(), "account".to_string()];
        header.extend(self.names.iter().cloned());
        out.write_record(&header)?;
        let mut keys: Vec<&AccountRef> = self.rows.keys().collect();
        keys.sort();
        for k in keys {
            let mut row = vec![k.bank_id().to_string(), k.account_id().to_string()];
            row.extend(self.rows[k].iter().cloned());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Adds the rows of `other`, matching columns by name; columns `other`
    /// lacks are left empty. Existing rows win.
    pub fn absorb(&mut self, other: &AttributeTable) {
        let pos: Vec<Option<usize>> = self
            .names
            .iter()
            .map(|n| other.names.iter().position(|m| m == n))
            .collect();
        for (acc, vals) in &other.rows {
            self.rows.entry(acc.clone()).or_insert_with(|| {
                pos.iter()
                    .map(|p| p.map_or_else(String::new, |i| vals[i].clone()))
                    .collect()
            });
        }
    }

    pub fn read<R: Read>(r: R) -> Result<AttributeTable, DataError> {
        let mut rd = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(r);
        let mut records = rd.records();
        let header = records
            .next()
            .ok_or_else(|| row_err(1, "missing header"))??;
        if header.len() < 2 || &header[0] != "bank" || &header[1] != "account" {
            return Err(row_err(1, "header must start with bank,account"));
        }
        let names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
        let mut rows = HashMap::new();
        for rec in records {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != names.len() + 2 {
                return Err(row_err(
                    line,
                    format!("expected {} fields, found {}", names.len() + 2, rec.len()),
                ));
            }
            let acc =
                AccountRef::new(&rec[0], &rec[1]).map_err(|e| row_err(line, e.to_string()))?;
            if rows
                .insert(acc, rec.iter().skip(2).map(str::to_string).collect())
                .is_some()
            {
                return Err(row_err(line, "duplicate account"));
            }
        }
        Ok(AttributeTable { names, rows })
    }
}

/// Writes `persons.csv` (canonical attributes) and `merchants.csv`
/// (`bank,account,region,business_type,operating_scale`).
pub fn write_profiles(profiles: &ProfileMap, dir: &Path) -> Result<(), DataError> {
    let persons: ProfileMap = profiles
        .iter()
        .filter(|(_, p)| !p.is_merchant())
        .map(|(a, p)| (a.clone(), p.clone()))
        .collect();
    let mut w = BufWriter::new(File::create(dir.join("persons.csv"))?);
    AttributeTable::from_profiles(&persons).write(&mut w)?;
    w.flush()?;
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(File::create(dir.join("merchants.csv"))?));
    out.write_record([
        "bank",
        "account",
        "region",
        "business_type",
        "operating_scale",
    ])?;
    for p in profiles.values() {
        if let Profile::Merchant(m) = p {
            out.write_record([
                m.account.bank_id(),
                m.account.account_id(),
                &m.region,
                &m.business_type,
                &m.operating_scale.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}
