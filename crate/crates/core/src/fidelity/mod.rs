//! Structural and heavy-tail diagnostics of a transaction log.
//!
//! Structural invariants are computed on daily undirected projections and
//! summarized as mean and standard deviation over days. Tail diagnostics fit a
//! continuous power law to four per-account or per-transaction variables under
//! three cut-off modes.

mod graph;
mod tail;

use std::io::Write;
use std::path::Path;

use thiserror::Error;

pub use graph::{
    component_sizes, core_numbers, daily_projection, daily_projections, degree_assortativity,
    graph_invariants, triangles_and_triples, DailyInvariants, DayGraph, SimpleGraph,
};
pub use tail::{
    alpha_mle, compare_lognormal, compute_tail_variables, fit_power_law, ks_distance,
    ks_distance_sorted, pareto_inverse, percentile, LognormalComparison, PowerLawFit, TailSamples,
    TailVariable, XminMode, ALPHA_RANGE, MAX_CANDIDATES, MIN_TAIL,
};

use crate::model::{Horizon, TransactionLog};

#[derive(Debug, Error)]
pub enum FidelityError {
    #[error("too few samples: need {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("all tail samples equal x_min = {0}")]
    DegenerateTail(f64),
    #[error("lognormal fit did not converge: {0}")]
    LognormalFit(String),
    #[error("empty horizon")]
    EmptyHorizon,
    #[error("report i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("report csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> MeanStd {
        if xs.is_empty() {
            return MeanStd {
                mean: f64::NAN,
                std: f64::NAN,
                count: 0,
            };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        MeanStd {
            mean,
            std: var.sqrt(),
            count: xs.len(),
        }
    }
}

/// Day-averaged invariants. Days without any transaction are skipped, and
/// assortativity is averaged over days where it is defined.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantSummary {
    pub gcc_ratio: MeanStd,
    pub n_components: MeanStd,
    pub max_kcore: MeanStd,
    pub max_core_fraction: MeanStd,
    pub assortativity: MeanStd,
    pub transitivity: MeanStd,
}

impl InvariantSummary {
    pub fn of(days: &[DailyInvariants]) -> InvariantSummary {
        let active: Vec<&DailyInvariants> = days.iter().filter(|d| d.n_nodes > 0).collect();
        let col = |f: &dyn Fn(&DailyInvariants) -> f64| {
            MeanStd::of(&active.iter().map(|d| f(d)).collect::<Vec<_>>())
        };
        InvariantSummary {
            gcc_ratio: col(&|d| d.gcc_ratio),
            n_components: col(&|d| d.n_components as f64),
            max_kcore: col(&|d| d.max_kcore as f64),
            max_core_fraction: col(&|d| d.max_core_fraction),
            assortativity: MeanStd::of(
                &active
                    .iter()
                    .filter_map(|d| d.assortativity)
                    .collect::<Vec<_>>(),
            ),
            transitivity: col(&|d| d.transitivity),
        }
    }

    pub fn rows(&self) -> [(&'static str, MeanStd); 6] {
        [
            ("gcc_ratio", self.gcc_ratio),
            ("n_components", self.n_components),
            ("max_kcore", self.max_kcore),
            ("max_core_fraction", self.max_core_fraction),
            ("assortativity", self.assortativity),
            ("transitivity", self.transitivity),
        ]
    }
}

/// One (variable, cut-off mode) tail diagnostic. A failed fit keeps its error.
#[derive(Debug, Clone, PartialEq)]
pub struct TailFitReport {
    pub variable: TailVariable,
    pub mode: XminMode,
    pub fit: Result<PowerLawFit, String>,
    pub comparison: Option<Result<LognormalComparison, String>>,
}

impl TailFitReport {
    pub fn run(samples: &TailSamples, mode: XminMode) -> TailFitReport {
        let fit = fit_power_law(&samples.values, mode).map_err(|e| e.to_string());
        let comparison = fit
            .as_ref()
            .ok()
            .map(|f| compare_lognormal(&samples.values, f.x_min).map_err(|e| e.to_string()));
        TailFitReport {
            variable: samples.variable,
            mode,
            fit,
            comparison,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FidelityReport {
    pub days: Vec<DailyInvariants>,
    pub summary: InvariantSummary,
    pub tails: Vec<TailFitReport>,
}

pub fn invariants_by_day(log: &TransactionLog, horizon: &Horizon) -> Vec<DailyInvariants> {
    (0..i64::from(horizon.days))
        .map(|d| graph_invariants(d, &daily_projection(log, horizon, d).graph))
        .collect()
}

/// Runs every daily invariant and every (variable, mode) tail fit.
pub fn fidelity_report(
    log: &TransactionLog,
    horizon: &Horizon,
) -> Result<FidelityReport, FidelityError> {
    if horizon.days == 0 {
        return Err(FidelityError::EmptyHorizon);
    }
    let days = invariants_by_day(log, horizon);
    let summary = InvariantSummary::of(&days);
    let vars = compute_tail_variables(log);
    let mut tails = Vec::with_capacity(12);
    for samples in &vars {
        for mode in XminMode::REPORT_MODES {
            tails.push(TailFitReport::run(samples, mode));
        }
    }
    Ok(FidelityReport {
        days,
        summary,
        tails,
    })
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

impl FidelityReport {
    /// Number of CSV data rows across the daily and tail tables.
    pub fn row_count(&self) -> usize {
        self.days.len() + self.tails.len()
    }

    pub fn write_daily_csv<W: Write>(&self, w: W) -> Result<(), FidelityError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "day",
            "n_nodes",
            "n_edges",
            "gcc_ratio",
            "n_components",
            "max_kcore",
            "max_core_fraction",
            "assortativity",
            "transitivity",
        ])?;
        for d in &self.days {
            out.write_record([
                d.day.to_string(),
                d.n_nodes.to_string(),
                d.n_edges.to_string(),
                d.gcc_ratio.to_string(),
                d.n_components.to_string(),
                d.max_kcore.to_string(),
                d.max_core_fraction.to_string(),
                opt(d.assortativity),
                d.transitivity.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<(), FidelityError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["metric", "mean", "std", "days"])?;
        for (name, ms) in self.summary.rows() {
            out.write_record([
                name.to_string(),
                ms.mean.to_string(),
                ms.std.to_string(),
                ms.count.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_tails_csv<W: Write>(&self, dataset: &str, w: W) -> Result<(), FidelityError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "dataset",
            "distribution",
            "xmin_mode",
            "tail_pct",
            "x_min",
            "n",
            "n_tail",
            "alpha",
            "alpha_unclamped",
            "boundary",
            "D",
            "R",
            "p",
            "error",
        ])?;
        for t in &self.tails {
            let mut row = vec![dataset.to_string(), t.variable.to_string(), t.mode.label()];
            match &t.fit {
                Ok(f) => {
                    let pct = 100.0 * f.n_tail as f64 / f.n as f64;
                    row.extend([
                        pct.to_string(),
                        f.x_min.to_string(),
                        f.n.to_string(),
                        f.n_tail.to_string(),
                        f.alpha.to_string(),
                        f.alpha_unclamped.to_string(),
                        f.boundary_flag.to_string(),
                        f.ks_d.to_string(),
                    ]);
                    match &t.comparison {
                        Some(Ok(c)) => {
                            row.extend([c.r.to_string(), c.p.to_string(), String::new()])
                        }
                        Some(Err(e)) => row.extend([String::new(), String::new(), e.clone()]),
                        None => row.extend([String::new(), String::new(), String::new()]),
                    }
                }
                Err(e) => {
                    row.extend(std::iter::repeat_n(String::new(), 10));
                    row.push(e.clone());
                }
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Writes `fidelity_daily.csv`, `fidelity_summary.csv` and `fidelity_tails.csv`.
    pub fn write_all(&self, dir: &Path, dataset: &str) -> Result<(), FidelityError> {
        self.write_daily_csv(std::fs::File::create(dir.join("fidelity_daily.csv"))?)?;
        self.write_summary_csv(std::fs::File::create(dir.join("fidelity_summary.csv"))?)?;
        self.write_tails_csv(
            dataset,
            std::fs::File::create(dir.join("fidelity_tails.csv"))?,
        )?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AccountRef, CurrencyCode, PaymentFormat, Transaction};

    fn tx(ts: i64, a: &str, b: &str, amt: f64) -> Transaction {
        Transaction {
            timestamp: ts,
            from: AccountRef::new("1", a).unwrap(),
            to: AccountRef::new("1", b).unwrap(),
            amount_paid: amt,
            payment_currency: CurrencyCode::USD,
            amount_received: amt,
            receiving_currency: CurrencyCode::USD,
            payment_format: PaymentFormat::Transfer,
            is_laundering: false,
        }
    }

    #[test]
    fn one_day_triangle_summary() {
        let log = TransactionLog::new(
            vec![
                tx(1, "A", "B", 5.0),
                tx(2, "B", "C", 6.0),
                tx(3, "C", "A", 7.0),
            ],
            Default::default(),
        );
        let h = Horizon { start: 0, days: 1 };
        let r = fidelity_report(&log, &h).unwrap();
        assert_eq!(r.summary.gcc_ratio.mean, r.days[0].gcc_ratio);
        assert_eq!(r.summary.transitivity.mean, 1.0);
        assert_eq!(r.summary.gcc_ratio.std, 0.0);
        assert_eq!(r.row_count(), 1 + 12);
    }

    #[test]
    fn summary_means_match_hand_average() {
        let day = Horizon::SECONDS_PER_DAY;
        let mut txs = Vec::new();
        // Day d: a star with d+1 leaves plus, on even days, one extra disjoint edge.
        for d in 0..5i64 {
            for leaf in 0..=d {
                txs.push(tx(d * day + leaf, "hub", &format!("L{leaf}"), 10.0));
            }
            if d % 2 == 0 {
                txs.push(tx(d * day + 50, "X", "Y", 3.0));
            }
        }
        let log = TransactionLog::new(txs, Default::default());
        let h = Horizon { start: 0, days: 5 };
        let r = fidelity_report(&log, &h).unwrap();
        let gcc: Vec<f64> = (0..5)
            .map(|d| {
                let star = (d + 2) as f64;
                if d % 2 == 0 {
                    star / (star + 2.0)
                } else {
                    1.0
                }
            })
            .collect();
        let mean = gcc.iter().sum::<f64>() / 5.0;
        assert!((r.summary.gcc_ratio.mean - mean).abs() < 1e-12);
        let comps: f64 = (0..5)
            .map(|d| if d % 2 == 0 { 2.0 } else { 1.0 })
            .sum::<f64>()
            / 5.0;
        assert!((r.summary.n_components.mean - comps).abs() < 1e-12);
    }

    #[test]
    fn csv_tables_have_expected_rows() {
        let log = TransactionLog::new(vec![tx(1, "A", "B", 5.0)], Default::default());
        let r = fidelity_report(&log, &Horizon { start: 0, days: 3 }).unwrap();
        let mut buf = Vec::new();
        r.write_daily_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 3);
        let mut buf = Vec::new();
        r.write_tails_csv("test", &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 12);
        assert!(text.lines().nth(1).unwrap().contains("too few samples"));
    }
}
