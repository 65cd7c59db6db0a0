//! Agent-based generator of normal transactions.
//!
//! Time advances in one-hour windows. In each window the generator samples
//! initiators, picks a counterparty for every event, samples the event
//! attributes, and then folds the window into the interaction state. A daily
//! scenario controller scales the overall volume and tilts the regional mix.

mod events;
mod interaction;
mod population;
mod scenario;

pub use events::{
    poisson_inverse, sample_event_attributes, sample_initiators, AmountModel, CurrencyConfig,
    FormatWeights,
};
pub use interaction::{select_counterparty, InteractionState, LocalityParams, MixtureWeights};
pub use population::{EntityId, PoolWeighting, Population};
pub use scenario::{step_scenario, CalendarOverride, ScenarioConfig, ScenarioModifiers};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    sample_profiles, AccountRef, Horizon, ModelError, PopulationConfig, TransactionLog,
};
use crate::rng::StreamKey;

#[derive(Debug, Error)]
pub enum BackboneError {
    #[error("invalid backbone config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no counterparty candidates for {0}")]
    EmptyCandidates(AccountRef),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    /// Midnight UTC of day 0, in epoch seconds.
    pub start_epoch: i64,
    pub days: u32,
    pub mixture: MixtureWeights,
    /// Per-hour decay of interaction memory and region hotspots.
    pub decay: f64,
    pub person_pool_size: usize,
    pub pool_weighting: PoolWeighting,
    pub locality_radius: usize,
    pub hotspot_coupling: f64,
    pub exploration_reference: f64,
    pub amounts: AmountModel,
    pub formats: FormatWeights,
    pub currency: CurrencyConfig,
    pub scenario: ScenarioConfig,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            start_epoch: 1_672_531_200,
            days: 30,
            mixture: MixtureWeights::default(),
            decay: 0.995,
            person_pool_size: 64,
            pool_weighting: PoolWeighting::Activity,
            locality_radius: 0,
            hotspot_coupling: 0.5,
            exploration_reference: 0.5,
            amounts: AmountModel::default(),
            formats: FormatWeights::default(),
            currency: CurrencyConfig::default(),
            scenario: ScenarioConfig::default(),
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<(), BackboneError> {
        let err = |m: String| BackboneError::Config(m);
        if self.days == 0 {
            return Err(err("horizon must cover at least one day".into()));
        }
        if self.start_epoch.rem_euclid(Horizon::SECONDS_PER_DAY) != 0 {
            return Err(err("start_epoch must be midnight UTC".into()));
        }
        self.mixture.validate().map_err(err)?;
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(err("decay must lie in (0,1)".into()));
        }
        if !(self.hotspot_coupling >= 0.0) || !(self.exploration_reference >= 0.0) {
            return Err(err(
                "hotspot_coupling and exploration_reference must be non-negative".into(),
            ));
        }
        self.amounts.validate().map_err(err)?;
        self.currency.validate().map_err(err)?;
        self.scenario.validate().map_err(err)?;
        for w in [&self.formats.to_merchant, &self.formats.to_person] {
            if w.iter().any(|x| !(*x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
                return Err(err(
                    "payment format weights must be a valid distribution".into()
                ));
            }
        }
        Ok(())
    }

    pub fn horizon(&self) -> Horizon {
        Horizon {
            start: self.start_epoch,
            days: self.days,
        }
    }

    pub fn locality(&self) -> LocalityParams {
        LocalityParams {
            radius: self.locality_radius,
            hotspot_coupling: self.hotspot_coupling,
            exploration_reference: self.exploration_reference,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BackboneOutput {
    pub log: TransactionLog,
    /// Events dropped because the initiator had no candidates.
    pub skipped_events: u64,
    pub warnings: Vec<String>,
}

/// Samples profiles and runs the closed-loop simulation over the whole horizon.
pub fn generate_backbone(
    population: &PopulationConfig,
    config: &BackboneConfig,
    seed: u64,
) -> Result<BackboneOutput, BackboneError> {
    config.validate()?;
    if population.persons == 0 {
        return Err(BackboneError::Config(
            "at least one person is required".into(),
        ));
    }
    let profiles = sample_profiles(population, seed)?;
    let root = StreamKey::root(seed);
    let pop = Population::build(
        &profiles,
        &population.region.names,
        config.person_pool_size,
        config.pool_weighting,
        root.named("population"),
    );
    let base_mix = population.region.probabilities();
    let mut base_mix_aligned = vec![0.0; pop.n_regions()];
    base_mix_aligned[..base_mix.len()].copy_from_slice(&base_mix);
    let output = simulate(&pop, &base_mix_aligned, config, root);
    Ok(BackboneOutput {
        log: TransactionLog::new(output.0, profiles),
        skipped_events: output.1,
        warnings: output.2,
    })
}

/// The simulation loop on an already-built population.
pub fn simulate(
    pop: &Population,
    base_mix: &[f64],
    config: &BackboneConfig,
    root: StreamKey,
) -> (Vec<crate::model::Transaction>, u64, Vec<String>) {
    let locality = config.locality();
    let mut state = InteractionState::new(pop.len(), pop.n_regions(), config.decay);
    let mut scenario = ScenarioModifiers::initial(&config.scenario, base_mix);
    let init_key = root.named("initiators");
    let cp_key = root.named("counterparty");
    let attr_key = root.named("attributes");
    let scen_key = root.named("scenario");

    let mut txs = Vec::new();
    let mut skipped = 0u64;
    let mut warnings = Vec::new();
    let mut window = Vec::new();
    let mut pairs = Vec::new();
    for day in 0..config.days {
        if day > 0 {
            scenario = step_scenario(
                day,
                &scenario,
                &config.scenario,
                base_mix,
                scen_key.child(u64::from(day)),
            );
        }
        for h in 0..24 {
            let hour = day * 24 + h;
            window.clear();
            pairs.clear();
            for (initiator, count) in sample_initiators(hour, pop, &scenario, init_key) {
                for k in 0..count {
                    let ev = |base: StreamKey| {
                        base.child(u64::from(initiator.0))
                            .child(u64::from(hour))
                            .child(u64::from(k))
                    };
                    let mut cp_rng = ev(cp_key).rng();
                    let counterparty = match select_counterparty(
                        initiator,
                        &state,
                        pop,
                        &scenario,
                        &config.mixture,
                        &locality,
                        &mut cp_rng,
                    ) {
                        Ok(c) => c,
                        Err(e) => {
                            skipped += 1;
                            if warnings.len() < 20 {
                                warnings.push(format!("hour {hour}: {e}"));
                            }
                            continue;
                        }
                    };
                    let mut attr_rng = ev(attr_key).rng();
                    let tx = sample_event_attributes(
                        initiator,
                        counterparty,
                        hour,
                        config.start_epoch,
                        pop,
                        &config.amounts,
                        &config.formats,
                        &config.currency,
                        &mut attr_rng,
                    );
                    window.push(tx);
                    pairs.push((initiator, counterparty));
                }
            }
            state.update(&pairs, hour, pop);
            window.sort_by_key(|t| t.timestamp);
            txs.append(&mut window);
        }
    }
    (txs, skipped, warnings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EntityProfile, MerchantProfile, Profile, ProfileMap};

    fn person(i: u32, region: &str, daily: f64) -> (AccountRef, Profile) {
        let account = AccountRef::new("10", &format!("P{i:07}")).unwrap();
        let p = EntityProfile {
            account: account.clone(),
            region: region.into(),
            age_band: "a".into(),
            occupation: "o".into(),
            income_tier: "t".into(),
            base_daily_intensity: daily,
            amount_scale: 4.0,
            amount_dispersion: 0.5,
            diurnal_profile: [1.0 / 24.0; 24],
            exploration_rate: 0.5,
        };
        (account, Profile::Person(p))
    }

    fn merchant(j: u32, region: &str, scale: f64) -> (AccountRef, Profile) {
        let account = AccountRef::new("10", &format!("M{j:06}")).unwrap();
        let m = MerchantProfile {
            account: account.clone(),
            region: region.into(),
            business_type: "b".into(),
            operating_scale: scale,
        };
        (account, Profile::Merchant(m))
    }

    fn build(entries: Vec<(AccountRef, Profile)>, pool: usize) -> Population {
        let map: ProfileMap = entries.into_iter().collect();
        Population::build(
            &map,
            &["north".into()],
            pool,
            PoolWeighting::Uniform,
            StreamKey::root(0),
        )
    }

    fn flat(pop: &Population) -> ScenarioModifiers {
        ScenarioModifiers {
            day: 0,
            base_factor: 1.0,
            global_intensity_factor: 1.0,
            region_mix: vec![1.0; pop.n_regions()],
        }
    }

    fn only(i: usize) -> MixtureWeights {
        let mut w = [0.0; 4];
        w[i] = 1.0;
        MixtureWeights::new(w[0], w[1], w[2], w[3])
    }

    #[test]
    fn zero_intensity_gives_no_initiators() {
        let pop = build(vec![person(0, "north", 0.0), person(1, "north", 0.0)], 4);
        assert!(sample_initiators(5, &pop, &flat(&pop), StreamKey::root(1)).is_empty());
    }

    #[test]
    fn poisson_counts_have_configured_mean() {
        // 48 per day with a flat diurnal profile is 2 per hour.
        let pop = build(vec![person(0, "north", 48.0)], 0);
        let s = flat(&pop);
        let key = StreamKey::root(2);
        let n = 100_000u32;
        let total: u64 = (0..n)
            .flat_map(|h| sample_initiators(h, &pop, &s, key))
            .map(|(_, k)| u64::from(k))
            .sum();
        let mean = total as f64 / f64::from(n);
        assert!((mean - 2.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn doubling_factor_doubles_volume() {
        let pop = build(
            (0..200)
                .map(|i| person(i, "north", 0.5 + f64::from(i % 7)))
                .collect(),
            0,
        );
        let s1 = flat(&pop);
        let s2 = ScenarioModifiers {
            global_intensity_factor: 2.0,
            ..s1.clone()
        };
        let key = StreamKey::root(3);
        let count = |s: &ScenarioModifiers| -> f64 {
            (0..2_000)
                .flat_map(|h| sample_initiators(h, &pop, s, key))
                .map(|(_, k)| f64::from(k))
                .sum()
        };
        let (a, b) = (count(&s1), count(&s2));
        assert!((b / a - 2.0).abs() / 2.0 < 0.02, "ratio {}", b / a);
    }

    #[test]
    fn memory_only_returns_remembered_partner() {
        let pop = build(
            vec![
                person(0, "north", 1.0),
                person(1, "north", 1.0),
                person(2, "north", 1.0),
                merchant(0, "north", 1.0),
            ],
            4,
        );
        let a = pop
            .id_of(&AccountRef::new("10", "P0000000").unwrap())
            .unwrap();
        let b = pop
            .id_of(&AccountRef::new("10", "P0000002").unwrap())
            .unwrap();
        let mut state = InteractionState::new(pop.len(), pop.n_regions(), 0.9);
        state.update(&[(a, b)], 0, &pop);
        let mut rng = StreamKey::root(4).rng();
        for _ in 0..1_000 {
            let c = select_counterparty(
                a,
                &state,
                &pop,
                &flat(&pop),
                &only(1),
                &LocalityParams::default(),
                &mut rng,
            );
            assert_eq!(c.unwrap(), b);
        }
    }

    #[test]
    fn exploration_is_uniform_over_candidates() {
        let mut entries: Vec<_> = (0..6).map(|i| person(i, "north", 1.0)).collect();
        entries.extend((0..4).map(|j| merchant(j, "north", 1.0 + f64::from(j) * 5.0)));
        let pop = build(entries, 16);
        let a = pop.persons()[0];
        let state = InteractionState::new(pop.len(), pop.n_regions(), 0.9);
        let mut rng = StreamKey::root(5).rng();
        let mut counts = vec![0u64; pop.len()];
        let n = 100_000;
        for _ in 0..n {
            let c = select_counterparty(
                a,
                &state,
                &pop,
                &flat(&pop),
                &only(3),
                &LocalityParams::default(),
                &mut rng,
            )
            .unwrap();
            counts[c.idx()] += 1;
        }
        assert_eq!(counts[a.idx()], 0);
        let k = pop.len() - 1;
        let expected = n as f64 / k as f64;
        let chi2: f64 = counts
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != a.idx())
            .map(|(_, &c)| (c as f64 - expected).powi(2) / expected)
            .sum();
        let p = 1.0
            - statrs::distribution::ContinuousCDF::cdf(
                &statrs::distribution::ChiSquared::new((k - 1) as f64).unwrap(),
                chi2,
            );
        assert!(p > 0.01, "chi2 {chi2} p {p}");
    }

    #[test]
    fn merchant_attractiveness_ratio() {
        let pop = build(
            vec![
                person(0, "north", 1.0),
                merchant(0, "north", 3.0),
                merchant(1, "north", 1.0),
            ],
            4,
        );
        let a = pop.persons()[0];
        let state = InteractionState::new(pop.len(), pop.n_regions(), 0.9);
        let mut rng = StreamKey::root(6).rng();
        let (mut big, mut small) = (0u32, 0u32);
        for _ in 0..100_000 {
            let c = select_counterparty(
                a,
                &state,
                &pop,
                &flat(&pop),
                &only(2),
                &LocalityParams::default(),
                &mut rng,
            )
            .unwrap();
            if pop.operating_scale(c) == 3.0 {
                big += 1;
            } else {
                small += 1;
            }
        }
        let ratio = f64::from(big) / f64::from(small);
        assert!((ratio / 3.0 - 1.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn memory_update_examples() {
        let pop = build(vec![person(0, "north", 1.0), person(1, "north", 1.0)], 4);
        let (a, b) = (pop.persons()[0], pop.persons()[1]);
        let mut state = InteractionState::new(pop.len(), pop.n_regions(), 0.9);
        state.update(&[(a, b)], 0, &pop);
        assert_eq!(state.memory_weight(a, b), 1.0);
        assert_eq!(state.memory_weight(b, a), 0.0);
        state.update(&[], 1, &pop);
        assert!((state.memory_weight(a, b) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn decay_matches_closed_form() {
        let pop = build(vec![person(0, "north", 1.0), person(1, "north", 1.0)], 4);
        let (a, b) = (pop.persons()[0], pop.persons()[1]);
        let gamma: f64 = 0.995;
        let mut state = InteractionState::new(pop.len(), pop.n_regions(), gamma);
        state.update(&[(a, b)], 0, &pop);
        for k in 1..=100u32 {
            state.update(&[], k, &pop);
            let expect = gamma.powi(k as i32);
            assert!(
                (state.memory_weight(a, b) - expect).abs() <= 1e-12 * expect,
                "k={k}"
            );
        }
    }

    #[test]
    fn lognormal_body_moments() {
        let pop = build(vec![person(0, "north", 1.0), person(1, "north", 1.0)], 4);
        let (a, b) = (pop.persons()[0], pop.persons()[1]);
        let amounts = AmountModel {
            tail_probability: 0.0,
            ..Default::default()
        };
        let cfg = BackboneConfig::default();
        let mut rng = StreamKey::root(7).rng();
        let n = 100_000;
        let logs: Vec<f64> = (0..n)
            .map(|_| {
                sample_event_attributes(
                    a,
                    b,
                    0,
                    0,
                    &pop,
                    &amounts,
                    &cfg.formats,
                    &cfg.currency,
                    &mut rng,
                )
                .amount_paid
                .ln()
            })
            .collect();
        let mean = logs.iter().sum::<f64>() / n as f64;
        let var = logs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        let skew = logs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n as f64 / var.powf(1.5);
        // Standard errors: 0.5/sqrt(n) ≈ 0.0016 for the mean, sqrt(6/n) ≈ 0.008 for skewness.
        assert!((mean - 4.0).abs() < 0.01, "mean {mean}");
        assert!((var.sqrt() - 0.5).abs() < 0.01, "sd {}", var.sqrt());
        assert!(skew.abs() < 0.04, "skew {skew}");
    }

    #[test]
    fn attributes_are_deterministic_and_in_window() {
        let pop = build(vec![person(0, "north", 1.0), merchant(0, "north", 1.0)], 4);
        let (a, m) = (pop.persons()[0], pop.merchants()[0]);
        let cfg = BackboneConfig::default();
        let draw = || {
            let mut rng = StreamKey::root(8).child(3).rng();
            sample_event_attributes(
                a,
                m,
                30,
                cfg.start_epoch,
                &pop,
                &cfg.amounts,
                &cfg.formats,
                &cfg.currency,
                &mut rng,
            )
        };
        let t = draw();
        assert_eq!(t, draw());
        assert!(!t.is_laundering);
        let lo = cfg.start_epoch + 30 * 3600;
        assert!(t.timestamp >= lo && t.timestamp < lo + 3600);
    }

    #[test]
    fn amount_tail_exponent_is_recovered() {
        let pop = build(vec![person(0, "north", 1.0), person(1, "north", 1.0)], 4);
        let (a, b) = (pop.persons()[0], pop.persons()[1]);
        let cfg = BackboneConfig::default();
        let mut rng = StreamKey::root(9).rng();
        let amounts: Vec<f64> = (0..1_000_000)
            .map(|_| {
                sample_event_attributes(
                    a,
                    b,
                    0,
                    0,
                    &pop,
                    &cfg.amounts,
                    &cfg.formats,
                    &cfg.currency,
                    &mut rng,
                )
                .amount_paid
            })
            .collect();
        let fit =
            crate::fidelity::fit_power_law(&amounts, crate::fidelity::XminMode::Auto).unwrap();
        assert!(
            (2.6..=3.2).contains(&fit.alpha_unclamped),
            "alpha {}",
            fit.alpha_unclamped
        );
    }

    #[test]
    fn single_idle_person_gives_empty_log() {
        let pop = PopulationConfig {
            persons: 1,
            merchants: 0,
            person_priors: crate::model::PersonPriors {
                intensity_median_by_tier: vec![0.0; 5],
                mean_daily_intensity: None,
                ..Default::default()
            },
            ..Default::default()
        };
        let cfg = BackboneConfig {
            days: 1,
            ..Default::default()
        };
        let out = generate_backbone(&pop, &cfg, 1).unwrap();
        assert!(out.log.transactions.is_empty());
    }

    #[test]
    fn lone_person_events_are_skipped_with_warning() {
        let mut pop = PopulationConfig {
            persons: 1,
            merchants: 0,
            ..Default::default()
        };
        pop.person_priors.mean_daily_intensity = Some(24.0);
        let cfg = BackboneConfig {
            days: 3,
            ..Default::default()
        };
        let out = generate_backbone(&pop, &cfg, 3).unwrap();
        assert!(out.log.transactions.is_empty());
        assert!(out.skipped_events > 20);
        assert_eq!(out.warnings.len() as u64, out.skipped_events.min(20));
    }

    #[test]
    fn config_validation() {
        assert!(BackboneConfig {
            days: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(BackboneConfig {
            decay: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(BackboneConfig {
            start_epoch: 1,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(BackboneConfig::default().validate().is_ok());
    }
}
