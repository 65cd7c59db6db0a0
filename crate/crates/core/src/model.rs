//! Domain types shared by every stage: account identities, entity profiles,
//! transactions and the transaction log, plus profile sampling.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::StreamKey;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("account reference has an empty {0} field")]
    EmptyField(&'static str),
    #[error("account field {field} contains the reserved character {ch:?}: {value}")]
    ReservedCharacter {
        field: &'static str,
        ch: char,
        value: String,
    },
    #[error("invalid currency code {0:?}")]
    Currency(String),
    #[error("unknown payment format {0:?}")]
    PaymentFormat(String),
    #[error("invalid population config: {0}")]
    Config(String),
}

/// A bank account, identified by bank and account number.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AccountRef {
    bank_id: Arc<str>,
    account_id: Arc<str>,
}

impl AccountRef {
    pub fn new(bank_id: &str, account_id: &str) -> Result<Self, ModelError> {
        if bank_id.is_empty() {
            return Err(ModelError::EmptyField("bank_id"));
        }
        if account_id.is_empty() {
            return Err(ModelError::EmptyField("account_id"));
        }
        // ':' would make the key ambiguous, ',' and newlines would break the CSV dialect.
        for (field, value) in [("bank_id", bank_id), ("account_id", account_id)] {
            if let Some(ch) = value
                .chars()
                .find(|c| matches!(c, ':' | ',' | '\n' | '\r' | '"'))
            {
                return Err(ModelError::ReservedCharacter {
                    field,
                    ch,
                    value: value.to_string(),
                });
            }
        }
        Ok(AccountRef {
            bank_id: bank_id.into(),
            account_id: account_id.into(),
        })
    }

    pub fn bank_id(&self) -> &str {
        &self.bank_id
    }

    pub fn account_id(&self) -> &str {
        &self.account_id
    }

    /// Canonical `bank:account` key.
    pub fn key(&self) -> String {
        format!("{}:{}", self.bank_id, self.account_id)
    }
}

impl fmt::Debug for AccountRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.bank_id, self.account_id)
    }
}

impl fmt::Display for AccountRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.bank_id, self.account_id)
    }
}

/// Builds the `bank:account` key from raw parts.
pub fn account_key(bank_id: &str, account_id: &str) -> Result<String, ModelError> {
    AccountRef::new(bank_id, account_id).map(|a| a.key())
}

/// Three-letter currency code.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CurrencyCode([u8; 3]);

impl CurrencyCode {
    pub const USD: CurrencyCode = CurrencyCode(*b"USD");

    pub fn as_str(&self) -> &str {
        std::str::from_utf8(&self.0).expect("validated ascii")
    }
}

impl FromStr for CurrencyCode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let b = s.as_bytes();
        if b.len() != 3 || !b.iter().all(|c| c.is_ascii_uppercase()) {
            return Err(ModelError::Currency(s.to_string()));
        }
        Ok(CurrencyCode([b[0], b[1], b[2]]))
    }
}

impl fmt::Debug for CurrencyCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for CurrencyCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for CurrencyCode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for CurrencyCode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PaymentFormat {
    Mobile,
    Card,
    Transfer,
    Cash,
    Cheque,
}

impl PaymentFormat {
    pub const ALL: [PaymentFormat; 5] = [
        PaymentFormat::Mobile,
        PaymentFormat::Card,
        PaymentFormat::Transfer,
        PaymentFormat::Cash,
        PaymentFormat::Cheque,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PaymentFormat::Mobile => "mobile",
            PaymentFormat::Card => "card",
            PaymentFormat::Transfer => "transfer",
            PaymentFormat::Cash => "cash",
            PaymentFormat::Cheque => "cheque",
        }
    }

    pub fn index(&self) -> usize {
        *self as usize
    }
}

impl FromStr for PaymentFormat {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PaymentFormat::ALL
            .iter()
            .copied()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| ModelError::PaymentFormat(s.to_string()))
    }
}

impl fmt::Display for PaymentFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Persistent descriptor of a person account.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityProfile {
    pub account: AccountRef,
    pub region: String,
    pub age_band: String,
    pub occupation: String,
    pub income_tier: String,
    /// Expected initiations per day.
    pub base_daily_intensity: f64,
    /// Log-median of transaction amounts.
    pub amount_scale: f64,
    /// Log-scale standard deviation of amounts.
    pub amount_dispersion: f64,
    /// Share of the day's activity falling in each hour; sums to one.
    pub diurnal_profile: [f64; 24],
    pub exploration_rate: f64,
}

impl EntityProfile {
    /// Attribute names in the canonical export order.
    pub const ATTRIBUTES: [&'static str; 8] = [
        "region",
        "age_band",
        "occupation",
        "income_tier",
        "base_daily_intensity",
        "amount_scale",
        "amount_dispersion",
        "exploration_rate",
    ];

    pub fn check(&self) -> Result<(), ModelError> {
        let sum: f64 = self.diurnal_profile.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.diurnal_profile.iter().any(|&w| w < 0.0) {
            return Err(ModelError::Config(format!(
                "{}: diurnal profile sums to {sum}",
                self.account
            )));
        }
        if !(self.base_daily_intensity >= 0.0) {
            return Err(ModelError::Config(format!(
                "{}: negative intensity",
                self.account
            )));
        }
        if !(0.0..=1.0).contains(&self.exploration_rate) {
            return Err(ModelError::Config(format!(
                "{}: exploration rate outside [0,1]",
                self.account
            )));
        }
        if !(self.amount_dispersion > 0.0) {
            return Err(ModelError::Config(format!(
                "{}: amount dispersion must be positive",
                self.account
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MerchantProfile {
    pub account: AccountRef,
    pub region: String,
    pub business_type: String,
    /// Attractiveness weight, > 0.
    pub operating_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    Person(EntityProfile),
    Merchant(MerchantProfile),
}

impl Profile {
    pub fn account(&self) -> &AccountRef {
        match self {
            Profile::Person(p) => &p.account,
            Profile::Merchant(m) => &m.account,
        }
    }

    pub fn region(&self) -> &str {
        match self {
            Profile::Person(p) => &p.region,
            Profile::Merchant(m) => &m.region,
        }
    }

    pub fn is_merchant(&self) -> bool {
        matches!(self, Profile::Merchant(_))
    }

    /// Value of a named person attribute, rendered as text. Merchants answer
    /// `region` and leave the rest empty.
    pub fn attribute(&self, name: &str) -> String {
        match self {
            Profile::Person(p) => match name {
                "region" => p.region.clone(),
                "age_band" => p.age_band.clone(),
                "occupation" => p.occupation.clone(),
                "income_tier" => p.income_tier.clone(),
                "base_daily_intensity" => format!("{}", p.base_daily_intensity),
                "amount_scale" => format!("{}", p.amount_scale),
                "amount_dispersion" => format!("{}", p.amount_dispersion),
                "exploration_rate" => format!("{}", p.exploration_rate),
                _ => String::new(),
            },
            Profile::Merchant(m) => match name {
                "region" => m.region.clone(),
                _ => String::new(),
            },
        }
    }
}

pub type ProfileMap = BTreeMap<AccountRef, Profile>;

#[derive(Debug, Clone, PartialEq)]
pub struct Transaction {
    /// Seconds since the Unix epoch.
    pub timestamp: i64,
    pub from: AccountRef,
    pub to: AccountRef,
    pub amount_paid: f64,
    pub payment_currency: CurrencyCode,
    pub amount_received: f64,
    pub receiving_currency: CurrencyCode,
    pub payment_format: PaymentFormat,
    pub is_laundering: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    SelfTransaction,
    NegativeAmount,
    NonFiniteAmount,
    CurrencyAmountMismatch,
}

/// Every violated invariant of a single transaction.
pub fn validate_transaction(tx: &Transaction) -> Vec<Violation> {
    let mut out = Vec::new();
    if tx.from == tx.to {
        out.push(Violation::SelfTransaction);
    }
    if !tx.amount_paid.is_finite() || !tx.amount_received.is_finite() {
        out.push(Violation::NonFiniteAmount);
    }
    if tx.amount_paid < 0.0 || tx.amount_received < 0.0 {
        out.push(Violation::NegativeAmount);
    }
    if tx.payment_currency == tx.receiving_currency && tx.amount_paid != tx.amount_received {
        out.push(Violation::CurrencyAmountMismatch);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum LogViolation {
    Row { index: usize, violation: Violation },
    OutOfOrder { index: usize },
    MissingProfile { index: usize, account: AccountRef },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransactionLog {
    pub transactions: Vec<Transaction>,
    pub profiles: ProfileMap,
}

impl TransactionLog {
    pub fn new(transactions: Vec<Transaction>, profiles: ProfileMap) -> Self {
        TransactionLog {
            transactions,
            profiles,
        }
    }

    pub fn len(&self) -> usize {
        self.transactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transactions.is_empty()
    }

    pub fn laundering_count(&self) -> usize {
        self.transactions.iter().filter(|t| t.is_laundering).count()
    }

    /// Row checks, timestamp order and profile coverage. Profile coverage is
    /// skipped when the log carries no profiles at all (e.g. a bare CSV import).
    pub fn validate(&self) -> Vec<LogViolation> {
        let mut out = Vec::new();
        let check_profiles = !self.profiles.is_empty();
        for (index, tx) in self.transactions.iter().enumerate() {
            for violation in validate_transaction(tx) {
                out.push(LogViolation::Row { index, violation });
            }
            if index > 0 && self.transactions[index - 1].timestamp > tx.timestamp {
                out.push(LogViolation::OutOfOrder { index });
            }
            if check_profiles {
                for acc in [&tx.from, &tx.to] {
                    if !self.profiles.contains_key(acc) {
                        out.push(LogViolation::MissingProfile {
                            index,
                            account: acc.clone(),
                        });
                    }
                }
            }
        }
        out
    }
}

/// Simulated time span: `days` calendar days starting at `start` (epoch seconds, midnight UTC).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Horizon {
    pub start: i64,
    pub days: u32,
}

impl Horizon {
    pub const SECONDS_PER_DAY: i64 = 86_400;

    pub fn end(&self) -> i64 {
        self.start + i64::from(self.days) * Self::SECONDS_PER_DAY
    }

    pub fn contains(&self, ts: i64) -> bool {
        ts >= self.start && ts < self.end()
    }

    /// Day index of a timestamp relative to `start` (may be out of range).
    pub fn day_of(&self, ts: i64) -> i64 {
        (ts - self.start).div_euclid(Self::SECONDS_PER_DAY)
    }

    /// Smallest whole-day horizon covering every timestamp in the log.
    pub fn covering(log: &TransactionLog) -> Option<Horizon> {
        let first = log.transactions.first()?.timestamp;
        let last = log.transactions.last()?.timestamp;
        let start = first.div_euclid(Self::SECONDS_PER_DAY) * Self::SECONDS_PER_DAY;
        let days = (last - start).div_euclid(Self::SECONDS_PER_DAY) + 1;
        Some(Horizon {
            start,
            days: days as u32,
        })
    }
}

// ---------------------------------------------------------------------------
// Population configuration and profile sampling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Categorical {
    pub names: Vec<String>,
    pub weights: Vec<f64>,
}

impl Categorical {
    pub fn new(names: &[&str], weights: &[f64]) -> Self {
        Categorical {
            names: names.iter().map(|s| s.to_string()).collect(),
            weights: weights.to_vec(),
        }
    }

    fn check(&self, what: &str) -> Result<(), ModelError> {
        if self.names.len() != self.weights.len() || self.names.is_empty() {
            return Err(ModelError::Config(format!(
                "{what}: names and weights differ in length"
            )));
        }
        check_weights(&self.weights, what)
    }

    pub fn probabilities(&self) -> Vec<f64> {
        normalize(&self.weights)
    }
}

fn check_weights(w: &[f64], what: &str) -> Result<(), ModelError> {
    if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(ModelError::Config(format!(
            "{what}: negative or non-finite weight"
        )));
    }
    if w.iter().sum::<f64>() <= 0.0 {
        return Err(ModelError::Config(format!("{what}: weights sum to zero")));
    }
    Ok(())
}

fn normalize(w: &[f64]) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

/// Inverse-CDF draw from unnormalized weights.
pub(crate) fn pick_weighted<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Behavioural priors for persons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PersonPriors {
    /// Median daily initiation rate per income tier.
    pub intensity_median_by_tier: Vec<f64>,
    /// Log-scale spread of the daily rate across persons.
    pub intensity_sigma: f64,
    /// When set, person rates are rescaled after sampling so that their mean
    /// equals this value; the tier medians then only fix relative levels.
    pub mean_daily_intensity: Option<f64>,
    /// Median amount per income tier, in currency units.
    pub amount_median_by_tier: Vec<f64>,
    pub amount_median_sigma: f64,
    pub dispersion_range: [f64; 2],
    pub exploration_range: [f64; 2],
    /// Hourly activity shape shared by everyone before per-person jitter.
    pub diurnal_base: Vec<f64>,
    /// Largest per-person shift of the diurnal shape, in hours.
    pub diurnal_max_shift: u32,
}

impl Default for PersonPriors {
    fn default() -> Self {
        PersonPriors {
            intensity_median_by_tier: vec![0.010, 0.014, 0.017, 0.022, 0.027],
            intensity_sigma: 2.2,
            mean_daily_intensity: Some(0.18),
            amount_median_by_tier: vec![25.0, 40.0, 60.0, 95.0, 150.0],
            amount_median_sigma: 0.25,
            dispersion_range: [0.25, 0.45],
            exploration_range: [0.0, 1.0],
            diurnal_base: vec![
                0.5, 0.3, 0.2, 0.2, 0.3, 0.6, 1.2, 2.2, 3.2, 3.8, 4.2, 4.6, 5.2, 4.8, 4.4, 4.3,
                4.5, 4.9, 5.2, 4.8, 3.9, 2.8, 1.7, 1.0,
            ],
            diurnal_max_shift: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationConfig {
    pub persons: usize,
    pub merchants: usize,
    pub banks: usize,
    pub region: Categorical,
    pub age_band: Categorical,
    pub occupation_names: Vec<String>,
    /// Row per region: occupation weights given that region.
    pub occupation_given_region: Vec<Vec<f64>>,
    pub income_tier_names: Vec<String>,
    /// Row per occupation: income tier weights given that occupation.
    pub income_given_occupation: Vec<Vec<f64>>,
    pub business_type: Categorical,
    /// Pareto shape of merchant operating scale (smaller is more concentrated).
    pub merchant_scale_shape: f64,
    /// Upper truncation of the merchant operating scale.
    pub merchant_scale_cap: Option<f64>,
    pub person_priors: PersonPriors,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        let regions = [
            "north",
            "northeast",
            "east",
            "southeast",
            "south",
            "southwest",
            "west",
            "northwest",
        ];
        let occupations = [
            "student",
            "service",
            "manufacturing",
            "retail",
            "professional",
            "healthcare",
            "education",
            "public_sector",
            "self_employed",
            "retired",
        ];
        let base_occ = [0.08, 0.14, 0.10, 0.11, 0.13, 0.08, 0.07, 0.08, 0.09, 0.12];
        // Regions tilt the occupation mix; the tilt is a smooth function so the
        // table stays readable in the exported default config.
        let occupation_given_region = (0..regions.len())
            .map(|r| {
                base_occ
                    .iter()
                    .enumerate()
                    .map(|(o, w)| w * (1.0 + 0.35 * ((r * 3 + o * 2) as f64 * 0.7).sin()))
                    .collect()
            })
            .collect();
        // Typical income tier per occupation.
        let typical_tier = [0.5, 1.0, 1.5, 1.2, 3.2, 2.6, 2.0, 2.2, 2.4, 1.3];
        let income_given_occupation = typical_tier
            .iter()
            .map(|&c| {
                (0..5)
                    .map(|t| (-(t as f64 - c).powi(2) / 1.2).exp())
                    .collect()
            })
            .collect();
        PopulationConfig {
            persons: 4_500,
            merchants: 500,
            banks: 20,
            region: Categorical::new(&regions, &[0.18, 0.10, 0.16, 0.09, 0.14, 0.08, 0.15, 0.10]),
            age_band: Categorical::new(
                &["18-24", "25-34", "35-44", "45-54", "55-64", "65+"],
                &[0.13, 0.21, 0.20, 0.18, 0.15, 0.13],
            ),
            occupation_names: occupations.iter().map(|s| s.to_string()).collect(),
            occupation_given_region,
            income_tier_names: ["very_low", "low", "middle", "high", "very_high"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            income_given_occupation,
            business_type: Categorical::new(
                &[
                    "grocery",
                    "restaurant",
                    "fuel",
                    "pharmacy",
                    "electronics",
                    "apparel",
                    "utilities",
                    "telecom",
                    "travel",
                    "online_marketplace",
                    "entertainment",
                    "wholesale",
                ],
                &[
                    0.16, 0.15, 0.08, 0.07, 0.06, 0.09, 0.05, 0.05, 0.06, 0.10, 0.08, 0.05,
                ],
            ),
            merchant_scale_shape: 0.5,
            merchant_scale_cap: None,
            person_priors: PersonPriors::default(),
        }
    }
}

impl PopulationConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.region.check("region")?;
        self.age_band.check("age_band")?;
        self.business_type.check("business_type")?;
        if self.banks == 0 {
            return Err(ModelError::Config("at least one bank is required".into()));
        }
        if self.occupation_given_region.len() != self.region.names.len() {
            return Err(ModelError::Config(
                "occupation_given_region needs one row per region".into(),
            ));
        }
        for row in &self.occupation_given_region {
            if row.len() != self.occupation_names.len() {
                return Err(ModelError::Config("occupation row length mismatch".into()));
            }
            check_weights(row, "occupation_given_region")?;
        }
        if self.income_given_occupation.len() != self.occupation_names.len() {
            return Err(ModelError::Config(
                "income_given_occupation needs one row per occupation".into(),
            ));
        }
        for row in &self.income_given_occupation {
            if row.len() != self.income_tier_names.len() {
                return Err(ModelError::Config("income row length mismatch".into()));
            }
            check_weights(row, "income_given_occupation")?;
        }
        let p = &self.person_priors;
        if p.intensity_median_by_tier.len() != self.income_tier_names.len()
            || p.amount_median_by_tier.len() != self.income_tier_names.len()
        {
            return Err(ModelError::Config(
                "per-tier priors need one entry per income tier".into(),
            ));
        }
        if p.intensity_median_by_tier.iter().any(|x| !(*x >= 0.0))
            || p.amount_median_by_tier.iter().any(|x| !(*x > 0.0))
        {
            return Err(ModelError::Config(
                "per-tier priors must be non-negative (amounts positive)".into(),
            ));
        }
        if p.mean_daily_intensity
            .is_some_and(|m| !(m >= 0.0 && m.is_finite()))
        {
            return Err(ModelError::Config(
                "mean_daily_intensity must be finite and non-negative".into(),
            ));
        }
        if !(p.intensity_sigma >= 0.0) || !(p.amount_median_sigma >= 0.0) {
            return Err(ModelError::Config(
                "prior spreads must be non-negative".into(),
            ));
        }
        if !(p.dispersion_range[0] > 0.0 && p.dispersion_range[0] <= p.dispersion_range[1]) {
            return Err(ModelError::Config(
                "dispersion_range must be positive and ordered".into(),
            ));
        }
        if !(0.0 <= p.exploration_range[0]
            && p.exploration_range[0] <= p.exploration_range[1]
            && p.exploration_range[1] <= 1.0)
        {
            return Err(ModelError::Config(
                "exploration_range must lie in [0,1]".into(),
            ));
        }
        if p.diurnal_base.len() != 24 {
            return Err(ModelError::Config("diurnal_base needs 24 entries".into()));
        }
        check_weights(&p.diurnal_base, "diurnal_base")?;
        if !(self.merchant_scale_shape > 0.0) {
            return Err(ModelError::Config(
                "merchant_scale_shape must be positive".into(),
            ));
        }
        if self.merchant_scale_cap.is_some_and(|c| !(c >= 1.0)) {
            return Err(ModelError::Config(
                "merchant_scale_cap must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Implied marginal of occupation (sum over regions).
    pub fn occupation_marginal(&self) -> Vec<f64> {
        let pr = self.region.probabilities();
        let mut out = vec![0.0; self.occupation_names.len()];
        for (r, row) in self.occupation_given_region.iter().enumerate() {
            for (o, p) in normalize(row).iter().enumerate() {
                out[o] += pr[r] * p;
            }
        }
        out
    }

    /// Implied marginal of income tier.
    pub fn income_marginal(&self) -> Vec<f64> {
        let po = self.occupation_marginal();
        let mut out = vec![0.0; self.income_tier_names.len()];
        for (o, row) in self.income_given_occupation.iter().enumerate() {
            for (t, p) in normalize(row).iter().enumerate() {
                out[t] += po[o] * p;
            }
        }
        out
    }
}

/// Samples the person and merchant populations. Deterministic in `(config, seed)`.
pub fn sample_profiles(config: &PopulationConfig, seed: u64) -> Result<ProfileMap, ModelError> {
    config.validate()?;
    let root = StreamKey::root(seed).named("profiles");
    let mut out = ProfileMap::new();
    let banks: Vec<String> = (0..config.banks).map(|b| format!("{}", 10 + b)).collect();
    // Bank market shares decay like 1/(rank+1).
    let bank_weights: Vec<f64> = (0..config.banks).map(|b| 1.0 / (b as f64 + 1.0)).collect();
    let priors = &config.person_priors;

    for i in 0..config.persons {
        let mut rng = root.named("person").child(i as u64).rng();
        let bank = &banks[pick_weighted(&bank_weights, &mut rng)];
        let account = AccountRef::new(bank, &format!("P{i:07}"))?;
        let r = pick_weighted(&config.region.weights, &mut rng);
        let a = pick_weighted(&config.age_band.weights, &mut rng);
        let o = pick_weighted(&config.occupation_given_region[r], &mut rng);
        let t = pick_weighted(&config.income_given_occupation[o], &mut rng);

        let intensity = lognormal(
            priors.intensity_median_by_tier[t],
            priors.intensity_sigma,
            &mut rng,
        );
        let amount_median = lognormal(
            priors.amount_median_by_tier[t],
            priors.amount_median_sigma,
            &mut rng,
        );
        let [dlo, dhi] = priors.dispersion_range;
        let dispersion = dlo + (dhi - dlo) * rng.random::<f64>();
        let [elo, ehi] = priors.exploration_range;
        let exploration = elo + (ehi - elo) * rng.random::<f64>();

        let shift_span = 2 * priors.diurnal_max_shift + 1;
        let shift = rng.random_range(0..shift_span) as i64 - priors.diurnal_max_shift as i64;
        let mut diurnal = [0.0; 24];
        for (h, slot) in diurnal.iter_mut().enumerate() {
            let src = (h as i64 - shift).rem_euclid(24) as usize;
            *slot = priors.diurnal_base[src] * (0.75 + 0.5 * rng.random::<f64>());
        }
        let total: f64 = diurnal.iter().sum();
        diurnal.iter_mut().for_each(|w| *w /= total);
        // Pin the sum to one against accumulated rounding.
        let drift = 1.0 - diurnal.iter().sum::<f64>();
        diurnal[12] += drift;

        let profile = EntityProfile {
            account: account.clone(),
            region: config.region.names[r].clone(),
            age_band: config.age_band.names[a].clone(),
            occupation: config.occupation_names[o].clone(),
            income_tier: config.income_tier_names[t].clone(),
            base_daily_intensity: intensity,
            amount_scale: amount_median.ln(),
            amount_dispersion: dispersion,
            diurnal_profile: diurnal,
            exploration_rate: exploration,
        };
        out.insert(account, Profile::Person(profile));
    }
    if let Some(target) = priors.mean_daily_intensity {
        let total: f64 = out
            .values()
            .filter_map(|p| match p {
                Profile::Person(p) => Some(p.base_daily_intensity),
                Profile::Merchant(_) => None,
            })
            .sum();
        if total > 0.0 {
            let f = target * config.persons as f64 / total;
            for p in out.values_mut() {
                if let Profile::Person(p) = p {
                    p.base_daily_intensity *= f;
                }
            }
        }
    }

    for j in 0..config.merchants {
        let mut rng = root.named("merchant").child(j as u64).rng();
        let bank = &banks[pick_weighted(&bank_weights, &mut rng)];
        let account = AccountRef::new(bank, &format!("M{j:06}"))?;
        let r = pick_weighted(&config.region.weights, &mut rng);
        let b = pick_weighted(&config.business_type.weights, &mut rng);
        // Pareto(shape, 1) by inversion.
        let u: f64 = rng.random();
        let mut scale = (1.0 - u).powf(-1.0 / config.merchant_scale_shape);
        if let Some(cap) = config.merchant_scale_cap {
            scale = scale.min(cap);
        }
        let m = MerchantProfile {
            account: account.clone(),
            region: config.region.names[r].clone(),
            business_type: config.business_type.names[b].clone(),
            operating_scale: scale,
        };
        out.insert(account, Profile::Merchant(m));
    }
    Ok(out)
}

fn lognormal<R: Rng + ?Sized>(median: f64, sigma: f64, rng: &mut R) -> f64 {
    if sigma == 0.0 || median == 0.0 {
        return median;
    }
    LogNormal::new(median.ln(), sigma)
        .expect("valid lognormal")
        .sample(rng)
}
