//! Initiator activation and per-event attribute sampling.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::population::{EntityId, Population};
use super::scenario::ScenarioModifiers;
use crate::model::{pick_weighted, CurrencyCode, PaymentFormat, Transaction};
use crate::rng::{SimRng, StreamKey};

/// Lognormal body with a Pareto tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AmountModel {
    /// Probability that an amount is drawn from the tail component.
    pub tail_probability: f64,
    /// Density exponent of the tail, `p(x) ∝ x^-alpha` for `x >= tail_threshold`.
    pub tail_alpha: f64,
    pub tail_threshold: f64,
}

impl Default for AmountModel {
    fn default() -> Self {
        AmountModel {
            tail_probability: 0.01,
            tail_alpha: 2.9,
            tail_threshold: 40_000.0,
        }
    }
}

impl AmountModel {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.tail_probability) {
            return Err("tail_probability must lie in [0,1]".into());
        }
        if !(self.tail_alpha > 1.0) || !(self.tail_threshold > 0.0) {
            return Err("tail_alpha must exceed 1 and tail_threshold must be positive".into());
        }
        Ok(())
    }
}

/// Payment-format weights, in [`PaymentFormat::ALL`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FormatWeights {
    pub to_merchant: [f64; 5],
    pub to_person: [f64; 5],
}

impl Default for FormatWeights {
    fn default() -> Self {
        FormatWeights {
            to_merchant: [0.46, 0.42, 0.03, 0.08, 0.01],
            to_person: [0.55, 0.0, 0.33, 0.08, 0.04],
        }
    }
}

/// Optional multi-currency setup. With no region currencies everything settles
/// in `default`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurrencyConfig {
    pub default: CurrencyCode,
    pub region_currency: BTreeMap<String, CurrencyCode>,
    /// Conversion rates keyed `"PAY/RECV"`.
    pub fx_rates: BTreeMap<String, f64>,
}

impl Default for CurrencyConfig {
    fn default() -> Self {
        CurrencyConfig {
            default: CurrencyCode::USD,
            region_currency: BTreeMap::new(),
            fx_rates: BTreeMap::new(),
        }
    }
}

impl CurrencyConfig {
    pub fn currency_of(&self, region: &str) -> CurrencyCode {
        self.region_currency
            .get(region)
            .copied()
            .unwrap_or(self.default)
    }

    pub fn rate(&self, pay: CurrencyCode, recv: CurrencyCode) -> Option<f64> {
        if pay == recv {
            return Some(1.0);
        }
        self.fx_rates.get(&format!("{pay}/{recv}")).copied()
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut codes: Vec<CurrencyCode> = self.region_currency.values().copied().collect();
        codes.push(self.default);
        codes.sort();
        codes.dedup();
        for &a in &codes {
            for &b in &codes {
                match self.rate(a, b) {
                    Some(r) if r > 0.0 && r.is_finite() => {}
                    _ => return Err(format!("missing or invalid fx rate {a}/{b}")),
                }
            }
        }
        Ok(())
    }
}

/// Inverse-CDF Poisson draw from a single uniform.
pub fn poisson_inverse(lambda: f64, u: f64) -> u32 {
    if lambda <= 0.0 {
        return 0;
    }
    let mut k = 0u32;
    let mut p = (-lambda).exp();
    let mut cdf = p;
    while u >= cdf && k < 10_000 {
        k += 1;
        p *= lambda / f64::from(k);
        cdf += p;
        if p == 0.0 && cdf < u {
            break;
        }
    }
    k
}

/// Per-person Poisson event counts for one hourly window, in canonical order,
/// omitting zero counts. The count for `(entity, hour)` is a pure function of the
/// key, so it does not depend on other entities.
pub fn sample_initiators(
    hour: u32,
    pop: &Population,
    scenario: &ScenarioModifiers,
    key: StreamKey,
) -> Vec<(EntityId, u32)> {
    let h = (hour % 24) as usize;
    let mut out = Vec::new();
    for &p in pop.persons() {
        let lambda = pop.intensity(p) * pop.diurnal(p)[h] * scenario.global_intensity_factor;
        if lambda <= 0.0 {
            continue;
        }
        let u = key.child(u64::from(p.0)).child(u64::from(hour)).uniform();
        let k = poisson_inverse(lambda, u);
        if k > 0 {
            out.push((p, k));
        }
    }
    out
}

pub(crate) fn round_cents(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Draws timestamp, amount and payment format for one event.
#[allow(clippy::too_many_arguments)]
pub fn sample_event_attributes(
    initiator: EntityId,
    counterparty: EntityId,
    hour: u32,
    start_epoch: i64,
    pop: &Population,
    amounts: &AmountModel,
    formats: &FormatWeights,
    currency: &CurrencyConfig,
    rng: &mut SimRng,
) -> Transaction {
    debug_assert_ne!(initiator, counterparty);
    let timestamp = start_epoch + i64::from(hour) * 3600 + rng.random_range(0..3600);
    let raw = if rng.random::<f64>() < amounts.tail_probability {
        let u: f64 = rng.random();
        amounts.tail_threshold * (1.0 - u).powf(-1.0 / (amounts.tail_alpha - 1.0))
    } else {
        let n = Normal::new(
            pop.amount_scale(initiator),
            pop.amount_dispersion(initiator),
        )
        .expect("positive dispersion");
        n.sample(rng).exp()
    };
    let amount_paid = round_cents(raw).max(0.01);
    let table = if pop.is_merchant(counterparty) {
        &formats.to_merchant
    } else {
        &formats.to_person
    };
    let payment_format = PaymentFormat::ALL[pick_weighted(table, rng)];

    let names = pop.region_names();
    let pay = currency.currency_of(&names[pop.region(initiator)]);
    let recv = currency.currency_of(&names[pop.region(counterparty)]);
    let amount_received = if pay == recv {
        amount_paid
    } else {
        round_cents(amount_paid * currency.rate(pay, recv).unwrap_or(1.0))
    };
    Transaction {
        timestamp,
        from: pop.account(initiator).clone(),
        to: pop.account(counterparty).clone(),
        amount_paid,
        payment_currency: pay,
        amount_received,
        receiving_currency: recv,
        payment_format,
        is_laundering: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poisson_inverse_matches_cdf_points() {
        assert_eq!(poisson_inverse(0.0, 0.99), 0);
        let l: f64 = 2.0;
        let p0 = (-l).exp();
        assert_eq!(poisson_inverse(l, p0 * 0.999), 0);
        assert_eq!(poisson_inverse(l, p0 * 1.001), 1);
        let p1 = p0 * l;
        assert_eq!(poisson_inverse(l, (p0 + p1) * 1.0001), 2);
    }

    #[test]
    fn poisson_inverse_is_monotone_in_lambda() {
        for i in 0..1000 {
            let u = (i as f64 + 0.5) / 1000.0;
            assert!(poisson_inverse(0.5, u) <= poisson_inverse(1.0, u));
        }
    }

    #[test]
    fn fx_validation_requires_rates() {
        let mut c = CurrencyConfig::default();
        assert!(c.validate().is_ok());
        c.region_currency
            .insert("east".into(), "EUR".parse().unwrap());
        assert!(c.validate().is_err());
        c.fx_rates.insert("USD/EUR".into(), 0.9);
        c.fx_rates.insert("EUR/USD".into(), 1.0 / 0.9);
        assert!(c.validate().is_ok());
    }
}
