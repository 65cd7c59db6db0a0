//! Index-based view of the profile map used by the simulation loop.

use std::collections::HashMap;

use rand::distr::weighted::WeightedIndex;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::model::{AccountRef, Profile, ProfileMap};
use crate::rng::StreamKey;

/// Dense index of an entity inside a [`Population`], in canonical account order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId(pub u32);

impl EntityId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

/// How the fixed per-person pool of same-region peers is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolWeighting {
    Uniform,
    /// Peers are drawn without replacement with probability proportional to
    /// their daily intensity, so active people are known by more people.
    #[default]
    Activity,
}

#[derive(Debug, Clone)]
pub struct Population {
    accounts: Vec<AccountRef>,
    is_merchant: Vec<bool>,
    region: Vec<u16>,
    region_names: Vec<String>,
    persons: Vec<EntityId>,
    intensity: Vec<f64>,
    diurnal: Vec<[f64; 24]>,
    amount_scale: Vec<f64>,
    amount_dispersion: Vec<f64>,
    exploration: Vec<f64>,
    operating_scale: Vec<f64>,
    merchants: Vec<EntityId>,
    merchant_sampler: Option<WeightedIndex<f64>>,
    merchants_by_region: Vec<Vec<EntityId>>,
    pools: Vec<Vec<EntityId>>,
    index: HashMap<AccountRef, EntityId>,
}

impl Population {
    /// Builds the indexed population. `region_order` fixes region indices; regions
    /// found in profiles but missing from it are appended in sorted order.
    /// Each person gets a fixed pool of up to `pool_size` same-region persons.
    pub fn build(
        profiles: &ProfileMap,
        region_order: &[String],
        pool_size: usize,
        weighting: PoolWeighting,
        key: StreamKey,
    ) -> Self {
        let mut region_names: Vec<String> = region_order.to_vec();
        let mut extra: Vec<&str> = profiles
            .values()
            .map(|p| p.region())
            .filter(|r| !region_names.iter().any(|n| n == r))
            .collect();
        extra.sort_unstable();
        extra.dedup();
        region_names.extend(extra.into_iter().map(String::from));
        let region_idx: HashMap<&str, u16> = region_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i as u16))
            .collect();

        let n = profiles.len();
        let mut pop = Population {
            accounts: Vec::with_capacity(n),
            is_merchant: Vec::with_capacity(n),
            region: Vec::with_capacity(n),
            region_names: region_names.clone(),
            persons: Vec::new(),
            intensity: Vec::with_capacity(n),
            diurnal: Vec::with_capacity(n),
            amount_scale: Vec::with_capacity(n),
            amount_dispersion: Vec::with_capacity(n),
            exploration: Vec::with_capacity(n),
            operating_scale: Vec::with_capacity(n),
            merchants: Vec::new(),
            merchant_sampler: None,
            merchants_by_region: vec![Vec::new(); region_names.len()],
            pools: vec![Vec::new(); n],
            index: HashMap::with_capacity(n),
        };
        let mut persons_by_region: Vec<Vec<EntityId>> = vec![Vec::new(); region_names.len()];
        for (i, (acc, profile)) in profiles.iter().enumerate() {
            let id = EntityId(i as u32);
            let r = region_idx[profile.region()];
            pop.accounts.push(acc.clone());
            pop.region.push(r);
            pop.index.insert(acc.clone(), id);
            match profile {
                Profile::Person(p) => {
                    pop.is_merchant.push(false);
                    pop.persons.push(id);
                    persons_by_region[r as usize].push(id);
                    pop.intensity.push(p.base_daily_intensity);
                    pop.diurnal.push(p.diurnal_profile);
                    pop.amount_scale.push(p.amount_scale);
                    pop.amount_dispersion.push(p.amount_dispersion);
                    pop.exploration.push(p.exploration_rate);
                    pop.operating_scale.push(0.0);
                }
                Profile::Merchant(m) => {
                    pop.is_merchant.push(true);
                    pop.merchants.push(id);
                    pop.merchants_by_region[r as usize].push(id);
                    pop.intensity.push(0.0);
                    pop.diurnal.push([1.0 / 24.0; 24]);
                    pop.amount_scale.push(0.0);
                    pop.amount_dispersion.push(1.0);
                    pop.exploration.push(0.0);
                    pop.operating_scale.push(m.operating_scale);
                }
            }
        }
        if !pop.merchants.is_empty() {
            let w: Vec<f64> = pop
                .merchants
                .iter()
                .map(|m| pop.operating_scale[m.idx()])
                .collect();
            pop.merchant_sampler = WeightedIndex::new(&w).ok();
        }
        let pool_key = key.named("pools");
        for &p in &pop.persons {
            let peers = &persons_by_region[pop.region[p.idx()] as usize];
            let mut rng = pool_key.child(u64::from(p.0)).rng();
            let take = (pool_size + 1).min(peers.len());
            let picked = match weighting {
                PoolWeighting::Uniform => index::sample(&mut rng, peers.len(), take),
                PoolWeighting::Activity => {
                    let w = |j: usize| pop.intensity[peers[j].idx()] + 1e-12;
                    index::sample_weighted(&mut rng, peers.len(), w, take)
                        .expect("finite non-negative weights")
                }
            };
            let mut pool: Vec<EntityId> = picked
                .into_iter()
                .map(|j| peers[j])
                .filter(|&q| q != p)
                .collect();
            pool.truncate(pool_size);
            pop.pools[p.idx()] = pool;
        }
        pop
    }

    pub fn len(&self) -> usize {
        self.accounts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accounts.is_empty()
    }

    pub fn account(&self, id: EntityId) -> &AccountRef {
        &self.accounts[id.idx()]
    }

    pub fn id_of(&self, acc: &AccountRef) -> Option<EntityId> {
        self.index.get(acc).copied()
    }

    pub fn is_merchant(&self, id: EntityId) -> bool {
        self.is_merchant[id.idx()]
    }

    pub fn region(&self, id: EntityId) -> usize {
        self.region[id.idx()] as usize
    }

    pub fn region_names(&self) -> &[String] {
        &self.region_names
    }

    pub fn n_regions(&self) -> usize {
        self.region_names.len()
    }

    pub fn persons(&self) -> &[EntityId] {
        &self.persons
    }

    pub fn merchants(&self) -> &[EntityId] {
        &self.merchants
    }

    pub fn merchants_in_region(&self, r: usize) -> &[EntityId] {
        &self.merchants_by_region[r]
    }

    pub fn pool(&self, id: EntityId) -> &[EntityId] {
        &self.pools[id.idx()]
    }

    pub fn intensity(&self, id: EntityId) -> f64 {
        self.intensity[id.idx()]
    }

    pub fn diurnal(&self, id: EntityId) -> &[f64; 24] {
        &self.diurnal[id.idx()]
    }

    pub fn amount_scale(&self, id: EntityId) -> f64 {
        self.amount_scale[id.idx()]
    }

    pub fn amount_dispersion(&self, id: EntityId) -> f64 {
        self.amount_dispersion[id.idx()]
    }

    pub fn exploration(&self, id: EntityId) -> f64 {
        self.exploration[id.idx()]
    }

    pub fn operating_scale(&self, id: EntityId) -> f64 {
        self.operating_scale[id.idx()]
    }

    pub(crate) fn merchant_sampler(&self) -> Option<&WeightedIndex<f64>> {
        self.merchant_sampler.as_ref()
    }
}
