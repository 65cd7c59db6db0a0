//! Continuous power-law tail fitting, KS distance, and the power-law versus
//! truncated-lognormal likelihood-ratio comparison.

use std::collections::HashMap;
use std::f64::consts::{PI, SQRT_2};
use std::fmt;

use statrs::function::erf::erfc;

use super::FidelityError;
use crate::model::TransactionLog;

/// Smallest number of samples at or above `x_min` accepted by a fit.
pub const MIN_TAIL: usize = 10;
/// Upper bound on the number of candidate cut-offs scanned in auto mode.
pub const MAX_CANDIDATES: usize = 500;
/// Range the reported exponent is clamped to.
pub const ALPHA_RANGE: (f64, f64) = (1.0, 3.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TailVariable {
    DegreeUnique,
    DegreeTxCount,
    Strength,
    Amount,
}

impl TailVariable {
    pub const ALL: [TailVariable; 4] = [
        TailVariable::DegreeUnique,
        TailVariable::DegreeTxCount,
        TailVariable::Strength,
        TailVariable::Amount,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TailVariable::DegreeUnique => "degree_unique",
            TailVariable::DegreeTxCount => "degree_tx_count",
            TailVariable::Strength => "strength",
            TailVariable::Amount => "amount",
        }
    }
}

impl fmt::Display for TailVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailSamples {
    pub variable: TailVariable,
    pub values: Vec<f64>,
}

/// Per-account degree and strength aggregates over the whole log, plus the
/// per-transaction amounts. Zero values are dropped. Accounts appear in
/// canonical key order.
pub fn compute_tail_variables(log: &TransactionLog) -> [TailSamples; 4] {
    #[derive(Default)]
    struct Acc {
        count: u64,
        strength: f64,
        partners: Vec<u32>,
    }
    let mut ids: HashMap<&crate::model::AccountRef, u32> = HashMap::new();
    let mut accs: Vec<Acc> = Vec::new();
    let mut amounts = Vec::with_capacity(log.len());
    let mut id_of = |a, accs: &mut Vec<Acc>| -> u32 {
        let next = accs.len() as u32;
        let id = *ids.entry(a).or_insert(next);
        if id == next {
            accs.push(Acc::default());
        }
        id
    };
    for tx in &log.transactions {
        let u = id_of(&tx.from, &mut accs);
        let v = id_of(&tx.to, &mut accs);
        for (x, y) in [(u, v), (v, u)] {
            let a = &mut accs[x as usize];
            a.count += 1;
            a.strength += tx.amount_paid;
            a.partners.push(y);
        }
        if tx.amount_paid > 0.0 {
            amounts.push(tx.amount_paid);
        }
    }
    let mut order: Vec<(&crate::model::AccountRef, u32)> = ids.into_iter().collect();
    order.sort();
    let mut unique = Vec::with_capacity(order.len());
    let mut count = Vec::with_capacity(order.len());
    let mut strength = Vec::with_capacity(order.len());
    for (_, id) in order {
        let a = &mut accs[id as usize];
        a.partners.sort_unstable();
        a.partners.dedup();
        unique.push(a.partners.len() as f64);
        count.push(a.count as f64);
        if a.strength > 0.0 {
            strength.push(a.strength);
        }
    }
    [
        TailSamples {
            variable: TailVariable::DegreeUnique,
            values: unique,
        },
        TailSamples {
            variable: TailVariable::DegreeTxCount,
            values: count,
        },
        TailSamples {
            variable: TailVariable::Strength,
            values: strength,
        },
        TailSamples {
            variable: TailVariable::Amount,
            values: amounts,
        },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum XminMode {
    /// Percentile in `[0, 100]`, linearly interpolated between order statistics.
    Percentile(f64),
    Auto,
}

impl XminMode {
    pub const REPORT_MODES: [XminMode; 3] = [
        XminMode::Percentile(90.0),
        XminMode::Percentile(95.0),
        XminMode::Auto,
    ];

    pub fn label(&self) -> String {
        match self {
            XminMode::Percentile(q) => format!("p{q}"),
            XminMode::Auto => "auto".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerLawFit {
    pub mode: XminMode,
    pub x_min: f64,
    pub n: usize,
    pub n_tail: usize,
    /// Exponent clamped to [`ALPHA_RANGE`].
    pub alpha: f64,
    pub alpha_unclamped: f64,
    pub boundary_flag: bool,
    pub ks_d: f64,
}

/// Linear-interpolation percentile of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = (q / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Continuous MLE `1 + n / Σ ln(x / x_min)` over the given tail.
pub fn alpha_mle(tail: &[f64], x_min: f64) -> f64 {
    let s: f64 = tail.iter().map(|x| (x / x_min).ln()).sum();
    1.0 + tail.len() as f64 / s
}

/// KS distance between the empirical CDF of `tail` (sorted ascending, all
/// `>= x_min`) and the power law, evaluated on both sides of every step.
pub fn ks_distance_sorted(tail: &[f64], alpha: f64, x_min: f64) -> f64 {
    let logs: Vec<f64> = tail.iter().map(|x| x.ln()).collect();
    ks_from_logs(tail, &logs, alpha, x_min.ln())
}

fn ks_from_logs(tail: &[f64], logs: &[f64], alpha: f64, lmin: f64) -> f64 {
    let m = tail.len() as f64;
    let e = alpha - 1.0;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < tail.len() {
        let mut j = i;
        while j + 1 < tail.len() && tail[j + 1] == tail[i] {
            j += 1;
        }
        let f = 1.0 - (-e * (logs[i] - lmin)).exp();
        d = d
            .max((f - i as f64 / m).abs())
            .max(((j + 1) as f64 / m - f).abs());
        i = j + 1;
    }
    d
}

/// KS distance of the values `>= x_min` against the power law.
pub fn ks_distance(samples: &[f64], alpha: f64, x_min: f64) -> f64 {
    let mut tail: Vec<f64> = samples.iter().copied().filter(|&x| x >= x_min).collect();
    tail.sort_by(f64::total_cmp);
    ks_distance_sorted(&tail, alpha, x_min)
}

fn finish(
    mode: XminMode,
    n: usize,
    tail: &[f64],
    x_min: f64,
    alpha_raw: f64,
    ks_d: f64,
) -> PowerLawFit {
    let alpha = alpha_raw.clamp(ALPHA_RANGE.0, ALPHA_RANGE.1);
    PowerLawFit {
        mode,
        x_min,
        n,
        n_tail: tail.len(),
        alpha,
        alpha_unclamped: alpha_raw,
        boundary_flag: alpha != alpha_raw,
        ks_d,
    }
}

/// Fits a continuous power law above `x_min` chosen by `mode`.
pub fn fit_power_law(values: &[f64], mode: XminMode) -> Result<PowerLawFit, FidelityError> {
    let mut sorted: Vec<f64> = values
        .iter()
        .copied()
        .filter(|x| *x > 0.0 && x.is_finite())
        .collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n < MIN_TAIL {
        return Err(FidelityError::TooFewSamples {
            needed: MIN_TAIL,
            got: n,
        });
    }
    match mode {
        XminMode::Percentile(q) => {
            let x_min = percentile(&sorted, q);
            let start = sorted.partition_point(|&x| x < x_min);
            let tail = &sorted[start..];
            if tail.len() < MIN_TAIL {
                return Err(FidelityError::TooFewSamples {
                    needed: MIN_TAIL,
                    got: tail.len(),
                });
            }
            let a = alpha_mle(tail, x_min);
            if !a.is_finite() {
                return Err(FidelityError::DegenerateTail(x_min));
            }
            Ok(finish(
                mode,
                n,
                tail,
                x_min,
                a,
                ks_distance_sorted(tail, a, x_min),
            ))
        }
        XminMode::Auto => fit_auto(&sorted),
    }
}

fn fit_auto(sorted: &[f64]) -> Result<PowerLawFit, FidelityError> {
    let n = sorted.len();
    let logs: Vec<f64> = sorted.iter().map(|x| x.ln()).collect();
    // suffix[i] = Σ_{j >= i} ln x_j
    let mut suffix = vec![0.0; n + 1];
    for i in (0..n).rev() {
        suffix[i] = suffix[i + 1] + logs[i];
    }
    // Candidate start indices: first occurrence of each distinct value leaving
    // at least MIN_TAIL samples, thinned to quantile-spaced positions.
    let last = n - MIN_TAIL;
    let mut starts: Vec<usize> = Vec::new();
    for i in 0..=last {
        if i == 0 || sorted[i] != sorted[i - 1] {
            starts.push(i);
        }
    }
    if starts.len() > MAX_CANDIDATES {
        let k = starts.len();
        let mut thinned: Vec<usize> = (0..MAX_CANDIDATES)
            .map(|j| starts[j * (k - 1) / (MAX_CANDIDATES - 1)])
            .collect();
        thinned.dedup();
        starts = thinned;
    }
    let mut best: Option<(f64, usize, f64)> = None;
    for &i in &starts {
        let m = (n - i) as f64;
        let s = suffix[i] - m * logs[i];
        if s <= 0.0 {
            continue;
        }
        let a = 1.0 + m / s;
        let d = ks_from_logs(&sorted[i..], &logs[i..], a, logs[i]);
        if best.is_none_or(|(bd, _, _)| d < bd) {
            best = Some((d, i, a));
        }
    }
    let (d, i, a) = best.ok_or(FidelityError::DegenerateTail(sorted[0]))?;
    Ok(finish(XminMode::Auto, n, &sorted[i..], sorted[i], a, d))
}

/// Result of the likelihood-ratio comparison; `r < 0` favours the lognormal.
#[derive(Debug, Clone, PartialEq)]
pub struct LognormalComparison {
    pub r: f64,
    pub p: f64,
    pub mu: f64,
    pub sigma: f64,
    pub converged: bool,
}

/// ln(1 - Φ(z)), accurate in the far right tail.
fn log_normal_sf(z: f64) -> f64 {
    if z < 5.0 {
        (0.5 * erfc(z / SQRT_2)).ln()
    } else {
        let z2 = z * z;
        let series =
            1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2) + 105.0 / (z2 * z2 * z2 * z2);
        -0.5 * z2 - z.ln() - 0.5 * (2.0 * PI).ln() + series.ln()
    }
}

/// Per-sample log density of a lognormal truncated to `[x_min, ∞)`.
fn lognormal_logpdf(lx: f64, mu: f64, sigma: f64, log_norm: f64) -> f64 {
    let z = (lx - mu) / sigma;
    -0.5 * z * z - lx - sigma.ln() - 0.5 * (2.0 * PI).ln() - log_norm
}

fn lognormal_nll(logs: &[f64], lmin: f64, mu: f64, sigma: f64) -> f64 {
    let log_norm = log_normal_sf((lmin - mu) / sigma);
    if !log_norm.is_finite() {
        return f64::INFINITY;
    }
    -logs
        .iter()
        .map(|&lx| lognormal_logpdf(lx, mu, sigma, log_norm))
        .sum::<f64>()
}

/// Nelder-Mead minimizer on a 2-d function. Returns (point, value, converged).
fn nelder_mead(
    f: impl Fn([f64; 2]) -> f64,
    start: [f64; 2],
    step: [f64; 2],
    max_iter: usize,
) -> ([f64; 2], f64, bool) {
    let mut simplex = [
        start,
        [start[0] + step[0], start[1]],
        [start[0], start[1] + step[1]],
    ];
    let mut vals = simplex.map(&f);
    for _ in 0..max_iter {
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        simplex = idx.map(|i| simplex[i]);
        vals = idx.map(|i| vals[i]);
        let spread = (vals[2] - vals[0]).abs();
        let size = (0..2).map(|k| {
            (simplex[1][k] - simplex[0][k])
                .abs()
                .max((simplex[2][k] - simplex[0][k]).abs())
        });
        if spread <= 1e-10 * (1.0 + vals[0].abs()) && size.fold(0.0, f64::max) <= 1e-9 {
            return (simplex[0], vals[0], true);
        }
        let c = [
            (simplex[0][0] + simplex[1][0]) / 2.0,
            (simplex[0][1] + simplex[1][1]) / 2.0,
        ];
        let at = |t: f64| {
            [
                c[0] + t * (simplex[2][0] - c[0]),
                c[1] + t * (simplex[2][1] - c[1]),
            ]
        };
        let xr = at(-1.0);
        let fr = f(xr);
        if fr < vals[0] {
            let xe = at(-2.0);
            let fe = f(xe);
            if fe < fr {
                simplex[2] = xe;
                vals[2] = fe;
            } else {
                simplex[2] = xr;
                vals[2] = fr;
            }
        } else if fr < vals[1] {
            simplex[2] = xr;
            vals[2] = fr;
        } else {
            let (xc, fc) = if fr < vals[2] {
                let x = at(-0.5);
                (x, f(x))
            } else {
                let x = at(0.5);
                (x, f(x))
            };
            if fc < vals[2].min(fr) {
                simplex[2] = xc;
                vals[2] = fc;
            } else {
                for i in 1..3 {
                    for k in 0..2 {
                        simplex[i][k] = simplex[0][k] + 0.5 * (simplex[i][k] - simplex[0][k]);
                    }
                    vals[i] = f(simplex[i]);
                }
            }
        }
    }
    let best = (0..3).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    (simplex[best], vals[best], false)
}

/// Normalized likelihood-ratio test of the power law (with its MLE exponent at
/// `x_min`) against a lognormal truncated at `x_min`, fitted by maximum likelihood.
pub fn compare_lognormal(values: &[f64], x_min: f64) -> Result<LognormalComparison, FidelityError> {
    let tail: Vec<f64> = values
        .iter()
        .copied()
        .filter(|&x| x >= x_min && x.is_finite())
        .collect();
    if tail.len() < 30 {
        return Err(FidelityError::TooFewSamples {
            needed: 30,
            got: tail.len(),
        });
    }
    let n = tail.len() as f64;
    let lmin = x_min.ln();
    let logs: Vec<f64> = tail.iter().map(|x| x.ln()).collect();
    let alpha = alpha_mle(&tail, x_min);
    if !alpha.is_finite() {
        return Err(FidelityError::DegenerateTail(x_min));
    }
    let mean = logs.iter().sum::<f64>() / n;
    let sd = (logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n)
        .sqrt()
        .max(1e-3);

    // Optimize over (mu, ln sigma).
    let objective = |p: [f64; 2]| {
        let v = lognormal_nll(&logs, lmin, p[0], p[1].exp());
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let (p, _, converged) = nelder_mead(objective, [mean, sd.ln()], [sd, 0.5], 2000);
    let (mu, sigma) = (p[0], p[1].exp());
    let log_norm = log_normal_sf((lmin - mu) / sigma);
    if !log_norm.is_finite() {
        return Err(FidelityError::LognormalFit(format!(
            "mu={mu} sigma={sigma}"
        )));
    }

    let diffs: Vec<f64> = logs
        .iter()
        .map(|&lx| {
            let pl = (alpha - 1.0).ln() - lmin - alpha * (lx - lmin);
            pl - lognormal_logpdf(lx, mu, sigma, log_norm)
        })
        .collect();
    let r: f64 = diffs.iter().sum();
    let dm = r / n;
    let var = diffs.iter().map(|d| (d - dm).powi(2)).sum::<f64>() / n;
    let p = if var > 0.0 {
        erfc(r.abs() / (2.0 * n * var).sqrt())
    } else {
        1.0
    };
    Ok(LognormalComparison {
        r,
        p,
        mu,
        sigma,
        converged,
    })
}

/// Inverse-CDF draw from a continuous power law with density exponent `alpha`.
pub fn pareto_inverse(u: f64, alpha: f64, x_min: f64) -> f64 {
    x_min * (1.0 - u).powf(-1.0 / (alpha - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;
    use rand::Rng;
    use std::f64::consts::LN_2;

    #[test]
    fn closed_form_example() {
        let a = alpha_mle(&[1.0, 2.0, 4.0, 8.0], 1.0);
        assert!((a - (1.0 + 4.0 / (6.0 * LN_2))).abs() < 1e-12);
        assert!((a - 1.9617).abs() < 1e-4);
    }

    #[test]
    fn single_point_ks_is_one() {
        assert_eq!(ks_distance(&[3.0], 2.5, 3.0), 1.0);
    }

    #[test]
    fn quantile_placed_samples_have_small_ks() {
        let (alpha, x_min, n) = (2.3, 5.0, 999);
        let xs: Vec<f64> = (1..=n)
            .map(|k| pareto_inverse(k as f64 / (n + 1) as f64, alpha, x_min))
            .collect();
        let d = ks_distance(&xs, alpha, x_min);
        assert!(d <= 1.0 / (n + 1) as f64 + 1e-12, "{d}");
    }

    fn ks_reference(xs: &[f64], alpha: f64, x_min: f64) -> f64 {
        let mut t: Vec<f64> = xs.iter().copied().filter(|&x| x >= x_min).collect();
        t.sort_by(f64::total_cmp);
        let m = t.len() as f64;
        let cdf = |x: f64| 1.0 - (x / x_min).powf(1.0 - alpha);
        let mut d: f64 = 0.0;
        for &x in &t {
            let below = t.iter().filter(|&&y| y < x).count() as f64 / m;
            let at = t.iter().filter(|&&y| y <= x).count() as f64 / m;
            d = d.max((cdf(x) - below).abs()).max((at - cdf(x)).abs());
        }
        d
    }

    #[test]
    fn ks_matches_reference_with_ties() {
        let key = StreamKey::root(17);
        for case in 0..30u64 {
            let mut rng = key.child(case).rng();
            let xs: Vec<f64> = (0..rng.random_range(1..80))
                .map(|_| rng.random_range(1..20) as f64)
                .collect();
            let x_min = rng.random_range(1..5) as f64;
            if !xs.iter().any(|&x| x >= x_min) {
                continue;
            }
            let a = rng.random_range(1.2..3.5);
            assert!((ks_distance(&xs, a, x_min) - ks_reference(&xs, a, x_min)).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_percentile_counts_tail() {
        let xs: Vec<f64> = (1..=200).map(f64::from).collect();
        for q in [90.0, 95.0] {
            let fit = fit_power_law(&xs, XminMode::Percentile(q)).unwrap();
            assert_eq!(fit.n_tail, xs.iter().filter(|&&x| x >= fit.x_min).count());
            assert_eq!(fit.n, 200);
        }
    }

    #[test]
    fn too_few_samples_is_an_error() {
        assert!(matches!(
            fit_power_law(&[1.0, 2.0], XminMode::Auto),
            Err(FidelityError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn boundary_flag_marks_clamping() {
        // Very steep tail: unclamped exponent far above 3.
        let xs: Vec<f64> = (0..2000)
            .map(|k| pareto_inverse(k as f64 / 2000.0, 6.0, 1.0))
            .collect();
        let fit = fit_power_law(&xs, XminMode::Percentile(0.0)).unwrap();
        assert!(fit.boundary_flag);
        assert_eq!(fit.alpha, 3.0);
        assert!(fit.alpha_unclamped > 5.0);
    }

    #[test]
    fn tail_variables_small_examples() {
        use crate::model::{AccountRef, CurrencyCode, PaymentFormat, Transaction};
        let t = |amt: f64| Transaction {
            timestamp: 0,
            from: AccountRef::new("1", "A").unwrap(),
            to: AccountRef::new("1", "B").unwrap(),
            amount_paid: amt,
            payment_currency: CurrencyCode::USD,
            amount_received: amt,
            receiving_currency: CurrencyCode::USD,
            payment_format: PaymentFormat::Card,
            is_laundering: false,
        };
        let vars = compute_tail_variables(&TransactionLog::new(vec![t(100.0)], Default::default()));
        assert_eq!(vars[0].values, vec![1.0, 1.0]);
        assert_eq!(vars[1].values, vec![1.0, 1.0]);
        assert_eq!(vars[2].values, vec![100.0, 100.0]);
        assert_eq!(vars[3].values, vec![100.0]);
        let vars = compute_tail_variables(&TransactionLog::new(
            vec![t(1.0), t(2.0)],
            Default::default(),
        ));
        assert_eq!(vars[0].values[0], 1.0);
        assert_eq!(vars[1].values[0], 2.0);
    }
}
