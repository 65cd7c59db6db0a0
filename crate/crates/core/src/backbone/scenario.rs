//! Daily scenario controller: a global intensity factor and region mixing weights.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::StreamKey;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalendarOverride {
    pub day: u32,
    pub multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    /// Standard deviation of the daily log-shock to the intensity factor.
    pub shock_sd: f64,
    /// Shocks are truncated to `[-shock_bound, shock_bound]`.
    pub shock_bound: f64,
    /// Pull of the log factor back toward zero per day, in `[0, 1]`; zero gives
    /// a pure random walk.
    pub shock_reversion: f64,
    pub min_factor: f64,
    pub max_factor: f64,
    pub weekend_multiplier: f64,
    /// Weekday of day 0, Monday = 0.
    pub first_weekday: u32,
    pub holidays: Vec<CalendarOverride>,
    /// Half-width of the uniform log-perturbation applied to each region weight.
    pub region_shock_bound: f64,
    /// Pull of the region mix back toward its base mix, in `[0, 1]`.
    pub region_reversion: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            shock_sd: 0.04,
            shock_bound: 0.12,
            shock_reversion: 0.1,
            min_factor: 0.5,
            max_factor: 2.0,
            weekend_multiplier: 0.85,
            // 2023-01-01 was a Sunday.
            first_weekday: 6,
            holidays: vec![
                CalendarOverride {
                    day: 0,
                    multiplier: 0.7,
                },
                CalendarOverride {
                    day: 145,
                    multiplier: 1.2,
                },
                CalendarOverride {
                    day: 184,
                    multiplier: 1.15,
                },
                CalendarOverride {
                    day: 326,
                    multiplier: 1.4,
                },
                CalendarOverride {
                    day: 358,
                    multiplier: 0.8,
                },
            ],
            region_shock_bound: 0.08,
            region_reversion: 0.25,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.min_factor > 0.0 && self.min_factor <= self.max_factor) {
            return Err("scenario factor band must satisfy 0 < min <= max".into());
        }
        if !(self.shock_sd >= 0.0 && self.shock_bound >= 0.0 && self.region_shock_bound >= 0.0) {
            return Err("scenario shocks must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.shock_reversion) {
            return Err("shock_reversion must lie in [0,1]".into());
        }
        if !(0.0..=1.0).contains(&self.region_reversion) {
            return Err("region_reversion must lie in [0,1]".into());
        }
        if !(self.weekend_multiplier > 0.0) || self.holidays.iter().any(|h| !(h.multiplier > 0.0)) {
            return Err("calendar multipliers must be positive".into());
        }
        Ok(())
    }

    /// Product of the weekend and holiday multipliers for a day.
    pub fn calendar_multiplier(&self, day: u32) -> f64 {
        let weekday = (day + self.first_weekday) % 7;
        let mut m = if weekday >= 5 {
            self.weekend_multiplier
        } else {
            1.0
        };
        for h in self.holidays.iter().filter(|h| h.day == day) {
            m *= h.multiplier;
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioModifiers {
    pub day: u32,
    /// Random-walk level before calendar effects.
    pub base_factor: f64,
    pub global_intensity_factor: f64,
    /// Indexed like the population's region list; sums to one.
    pub region_mix: Vec<f64>,
}

impl ScenarioModifiers {
    /// Day-0 modifiers: unit base factor and the configured base mix.
    pub fn initial(cfg: &ScenarioConfig, base_mix: &[f64]) -> Self {
        let factor = cfg
            .calendar_multiplier(0)
            .clamp(cfg.min_factor, cfg.max_factor);
        ScenarioModifiers {
            day: 0,
            base_factor: 1.0,
            global_intensity_factor: factor,
            region_mix: normalized(base_mix),
        }
    }
}

fn normalized(w: &[f64]) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    if s > 0.0 {
        w.iter().map(|x| x / s).collect()
    } else {
        vec![1.0 / w.len().max(1) as f64; w.len()]
    }
}

/// Advances the controller by one day.
pub fn step_scenario(
    day: u32,
    prev: &ScenarioModifiers,
    cfg: &ScenarioConfig,
    base_mix: &[f64],
    key: StreamKey,
) -> ScenarioModifiers {
    debug_assert_eq!(day, prev.day + 1);
    let mut rng = key.rng();
    let eta = if cfg.shock_sd > 0.0 {
        let n = Normal::new(0.0, cfg.shock_sd).expect("positive sd");
        n.sample(&mut rng).clamp(-cfg.shock_bound, cfg.shock_bound)
    } else {
        0.0
    };
    let level = (1.0 - cfg.shock_reversion) * prev.base_factor.ln() + eta;
    let base_factor = level.exp().clamp(cfg.min_factor, cfg.max_factor);
    let global_intensity_factor =
        (base_factor * cfg.calendar_multiplier(day)).clamp(cfg.min_factor, cfg.max_factor);

    let base = normalized(base_mix);
    let rho = cfg.region_reversion;
    let logs: Vec<f64> = prev
        .region_mix
        .iter()
        .zip(&base)
        .map(|(&p, &b)| {
            if p <= 0.0 || b <= 0.0 {
                return f64::NEG_INFINITY;
            }
            let xi = if cfg.region_shock_bound > 0.0 {
                rng.random_range(-cfg.region_shock_bound..=cfg.region_shock_bound)
            } else {
                0.0
            };
            (1.0 - rho) * p.ln() + rho * b.ln() + xi
        })
        .collect();
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    ScenarioModifiers {
        day,
        base_factor,
        global_intensity_factor,
        region_mix: normalized(&raw),
    }
}
