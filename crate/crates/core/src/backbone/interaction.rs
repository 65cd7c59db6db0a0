//! Interaction memory, region hotspots, and counterparty selection.

use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::population::{EntityId, Population};
use super::scenario::ScenarioModifiers;
use super::BackboneError;
use crate::model::pick_weighted;
use crate::rng::SimRng;

/// Weights of the four counterparty-selection components. Must lie on the simplex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureWeights {
    pub w_local: f64,
    pub w_memory: f64,
    pub w_merchant: f64,
    pub w_explore: f64,
}

impl Default for MixtureWeights {
    fn default() -> Self {
        MixtureWeights {
            w_local: 0.07,
            w_memory: 0.60,
            w_merchant: 0.31,
            w_explore: 0.02,
        }
    }
}

impl MixtureWeights {
    pub fn new(w_local: f64, w_memory: f64, w_merchant: f64, w_explore: f64) -> Self {
        MixtureWeights {
            w_local,
            w_memory,
            w_merchant,
            w_explore,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let w = self.as_array();
        if w.iter().any(|x| !(*x >= 0.0)) {
            return Err("mixture weights must be non-negative".into());
        }
        if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err("mixture weights must sum to one".into());
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.w_local, self.w_memory, self.w_merchant, self.w_explore]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct MemoryEntry {
    partner: EntityId,
    /// Weight as of `stamp`; decays by `gamma` per hour afterwards.
    weight: f64,
    stamp: u32,
}

/// Time-decayed partner preferences and region hotspots.
///
/// Memory weights are stored with the hour they were last touched and decayed on
/// read, which is observationally identical to decaying every weight each window.
#[derive(Debug, Clone)]
pub struct InteractionState {
    gamma: f64,
    memory: Vec<Vec<MemoryEntry>>,
    hotspots: Vec<f64>,
    last_window: Option<u32>,
}

impl InteractionState {
    pub fn new(n_entities: usize, n_regions: usize, gamma: f64) -> Self {
        assert!(gamma > 0.0 && gamma < 1.0, "decay must lie in (0,1)");
        InteractionState {
            gamma,
            memory: vec![Vec::new(); n_entities],
            hotspots: vec![0.0; n_regions],
            last_window: None,
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn last_window(&self) -> Option<u32> {
        self.last_window
    }

    fn now(&self) -> u32 {
        self.last_window.unwrap_or(0)
    }

    fn decayed(&self, e: &MemoryEntry) -> f64 {
        e.weight * self.gamma.powi((self.now() - e.stamp) as i32)
    }

    /// Current weight of `initiator → counterparty`.
    pub fn memory_weight(&self, initiator: EntityId, counterparty: EntityId) -> f64 {
        self.memory[initiator.idx()]
            .iter()
            .find(|e| e.partner == counterparty)
            .map_or(0.0, |e| self.decayed(e))
    }

    /// All remembered partners of `initiator` with their current weights.
    pub fn memory_of(&self, initiator: EntityId) -> impl Iterator<Item = (EntityId, f64)> + '_ {
        self.memory[initiator.idx()]
            .iter()
            .map(move |e| (e.partner, self.decayed(e)))
    }

    pub fn hotspot(&self, region: usize) -> f64 {
        self.hotspots[region]
    }

    /// Overwrites a memory weight at the current window.
    pub fn set_memory(&mut self, initiator: EntityId, counterparty: EntityId, weight: f64) {
        let now = self.now();
        let list = &mut self.memory[initiator.idx()];
        match list.iter_mut().find(|e| e.partner == counterparty) {
            Some(e) => {
                e.weight = weight;
                e.stamp = now;
            }
            None => list.push(MemoryEntry {
                partner: counterparty,
                weight,
                stamp: now,
            }),
        }
    }

    /// Applies one window: decay by `gamma^(hour - last_window)`, then +1 per observed pair.
    pub fn update(&mut self, pairs: &[(EntityId, EntityId)], hour: u32, pop: &Population) {
        if let Some(last) = self.last_window {
            assert!(hour > last, "windows must advance");
            let f = self.gamma.powi((hour - last) as i32);
            self.hotspots.iter_mut().for_each(|h| *h *= f);
        }
        self.last_window = Some(hour);
        for &(i, c) in pairs {
            let gamma = self.gamma;
            let list = &mut self.memory[i.idx()];
            match list.iter_mut().find(|e| e.partner == c) {
                Some(e) => {
                    e.weight = e.weight * gamma.powi((hour - e.stamp) as i32) + 1.0;
                    e.stamp = hour;
                }
                None => list.push(MemoryEntry {
                    partner: c,
                    weight: 1.0,
                    stamp: hour,
                }),
            }
            self.hotspots[pop.region(c)] += 1.0;
        }
    }
}

/// Tuning of the locality component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalityParams {
    /// Regions within this ring distance of the initiator's region are compatible.
    pub radius: usize,
    /// Strength of the hotspot tilt on region weights (0 disables it).
    pub hotspot_coupling: f64,
    /// Exploration rate at which the configured explore weight applies unchanged.
    pub exploration_reference: f64,
}

impl Default for LocalityParams {
    fn default() -> Self {
        LocalityParams {
            radius: 0,
            hotspot_coupling: 0.0,
            exploration_reference: 0.0,
        }
    }
}

fn ring_distance(a: usize, b: usize, n: usize) -> usize {
    let d = a.abs_diff(b);
    d.min(n - d)
}

/// Samples a counterparty from the normalized mixture of the locality, memory,
/// merchant-attractiveness and exploration components over the initiator's
/// candidate set (all merchants plus the initiator's person pool).
///
/// Each component is a distribution over candidates; components with no mass
/// drop out and the remaining weights are renormalized.
pub fn select_counterparty(
    initiator: EntityId,
    state: &InteractionState,
    pop: &Population,
    scenario: &ScenarioModifiers,
    weights: &MixtureWeights,
    locality: &LocalityParams,
    rng: &mut SimRng,
) -> Result<EntityId, BackboneError> {
    let own_region = pop.region(initiator);
    let pool = pop.pool(initiator);
    let self_is_merchant = pop.is_merchant(initiator);
    let n_regions = pop.n_regions();
    let n_candidates = pop.merchants().len() + pool.len() - usize::from(self_is_merchant);
    if n_candidates == 0 {
        return Err(BackboneError::EmptyCandidates(
            pop.account(initiator).clone(),
        ));
    }

    // Locality: region weight × candidate count in each compatible region.
    let hot_total: f64 = (0..n_regions).map(|r| state.hotspot(r)).sum();
    let mut region_mass = vec![0.0; n_regions];
    for (r, mass) in region_mass.iter_mut().enumerate() {
        if ring_distance(r, own_region, n_regions) > locality.radius {
            continue;
        }
        let mut count = pop.merchants_in_region(r).len();
        if r == own_region {
            count += pool.len();
            if self_is_merchant {
                count -= 1;
            }
        }
        let tilt = if hot_total > 0.0 {
            1.0 + locality.hotspot_coupling * state.hotspot(r) / hot_total
        } else {
            1.0
        };
        let mix = scenario.region_mix.get(r).copied().unwrap_or(0.0);
        *mass = mix * tilt * count as f64;
    }
    let local_mass: f64 = region_mass.iter().sum();

    let memory: Vec<(EntityId, f64)> = if weights.w_memory > 0.0 {
        state
            .memory_of(initiator)
            .filter(|(_, w)| *w > 0.0)
            .collect()
    } else {
        Vec::new()
    };

    let merchant_available =
        pop.merchant_sampler().is_some() && !(self_is_merchant && pop.merchants().len() == 1);

    let mut w = weights.as_array();
    if locality.exploration_reference > 0.0 {
        w[3] *= pop.exploration(initiator) / locality.exploration_reference;
    }
    if local_mass <= 0.0 {
        w[0] = 0.0;
    }
    if memory.is_empty() {
        w[1] = 0.0;
    }
    if !merchant_available {
        w[2] = 0.0;
    }
    if w.iter().sum::<f64>() <= 0.0 {
        // Only exploration remains; it always has mass when candidates exist.
        w = [0.0, 0.0, 0.0, 1.0];
    }

    loop {
        let pick = match pick_weighted(&w, rng) {
            0 => {
                let r = pick_weighted(&region_mass, rng);
                let merchants = pop.merchants_in_region(r);
                let extra = if r == own_region { pool.len() } else { 0 };
                let j = rng.random_range(0..merchants.len() + extra);
                if j < merchants.len() {
                    merchants[j]
                } else {
                    pool[j - merchants.len()]
                }
            }
            1 => {
                let ws: Vec<f64> = memory.iter().map(|(_, w)| *w).collect();
                memory[pick_weighted(&ws, rng)].0
            }
            2 => {
                let sampler = pop.merchant_sampler().expect("checked above");
                pop.merchants()[sampler.sample(rng)]
            }
            _ => {
                let m = pop.merchants().len();
                let j = rng.random_range(0..m + pool.len());
                if j < m {
                    pop.merchants()[j]
                } else {
                    pool[j - m]
                }
            }
        };
        // Only a merchant initiator can draw itself; resampling conditions it out.
        if pick != initiator {
            return Ok(pick);
        }
    }
}
