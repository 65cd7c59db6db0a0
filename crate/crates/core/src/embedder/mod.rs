//! Embedding of illicit clusters into a backbone log as intact subgraphs.
//!
//! A cluster is accepted only when three constraints hold: the role mapping is
//! injective onto known accounts (structure), every host's observed activity
//! rate and amount scale fall inside its role's ranges (profile), and the
//! shifted cluster lies in the horizon without pushing any host beyond its
//! burst cap (temporal). Rejected clusters leave the log untouched.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anomaly::{check_sanity, cluster_transactions, IllicitCluster, RoleId};
use crate::model::{AccountRef, Horizon, PaymentFormat, ProfileMap, Transaction, TransactionLog};
use crate::rng::{SimRng, StreamKey};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedConfig {
    /// Trailing window, ending at the horizon end, over which host activity is measured.
    pub activity_window_days: u32,
    /// Role assignments proposed per cluster.
    pub candidates: usize,
    /// A host may not exceed this multiple of its historical peak hourly count.
    pub burst_factor: f64,
    /// Random anchors tried per assignment.
    pub anchor_tries: usize,
    pub payment_format: PaymentFormat,
    /// Cluster instances attempted by [`embed_all`] before giving up.
    pub max_attempts: usize,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            activity_window_days: 30,
            candidates: 8,
            burst_factor: 3.0,
            anchor_tries: 32,
            payment_format: PaymentFormat::Transfer,
            max_attempts: 100_000,
        }
    }
}

impl EmbedConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.activity_window_days == 0 || self.candidates == 0 || self.anchor_tries == 0 {
            return Err(EmbedError::Config(
                "window, candidates and anchor_tries must be positive".into(),
            ));
        }
        if !(self.burst_factor >= 1.0 && self.burst_factor.is_finite()) {
            return Err(EmbedError::Config("burst_factor must be at least 1".into()));
        }
        Ok(())
    }
}

/// Injective mapping from roles to host accounts.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RoleAssignment {
    pub mapping: BTreeMap<RoleId, AccountRef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionReason {
    None,
    Structure,
    Profile,
    Temporal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingReport {
    pub cluster_id: String,
    pub accepted: bool,
    pub rejection_reason: RejectionReason,
    pub edges_added: usize,
    /// Anchor of an accepted embedding.
    pub anchor: Option<i64>,
}

/// Writes reports as CSV with header `cluster_id,accepted,rejection_reason,edges_added,anchor`.
pub fn write_reports<W: Write>(reports: &[EmbeddingReport], w: W) -> Result<(), EmbedError> {
    let mut csv = csv::Writer::from_writer(w);
    for r in reports {
        csv.serialize(r)?;
    }
    csv.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn hour_of(ts: i64) -> i64 {
    ts.div_euclid(3_600)
}

/// Per-account view of a log used to match roles to hosts and to place clusters.
pub struct HostIndex {
    horizon: Horizon,
    window_start: i64,
    window_days: f64,
    accounts: Vec<AccountRef>,
    ids: HashMap<AccountRef, usize>,
    /// Sorted timestamps of every transaction touching the account.
    times: Vec<Vec<i64>>,
    /// Count and amount sum of transactions inside the activity window.
    window: Vec<(u64, f64)>,
    /// Peak hourly transaction count in the indexed log.
    peak_hourly: Vec<u32>,
}

impl HostIndex {
    /// Indexes the profiled accounts and every account appearing in `log`.
    pub fn build(log: &TransactionLog, horizon: &Horizon, cfg: &EmbedConfig) -> HostIndex {
        let days = cfg.activity_window_days.min(horizon.days.max(1));
        let window_start = horizon.end() - i64::from(days) * Horizon::SECONDS_PER_DAY;
        let mut idx = HostIndex {
            horizon: *horizon,
            window_start,
            window_days: f64::from(days),
            accounts: Vec::new(),
            ids: HashMap::new(),
            times: Vec::new(),
            window: Vec::new(),
            peak_hourly: Vec::new(),
        };
        for a in log.profiles.keys() {
            idx.intern(a);
        }
        for t in &log.transactions {
            for a in [&t.from, &t.to] {
                let i = idx.intern(a);
                idx.times[i].push(t.timestamp);
                if t.timestamp >= idx.window_start && t.timestamp < horizon.end() {
                    idx.window[i].0 += 1;
                    idx.window[i].1 += t.amount_paid;
                }
            }
        }
        for (i, ts) in idx.times.iter_mut().enumerate() {
            ts.sort_unstable();
            let mut peak = 0;
            let mut run = 0;
            for (k, t) in ts.iter().enumerate() {
                run = if k > 0 && hour_of(ts[k - 1]) == hour_of(*t) {
                    run + 1
                } else {
                    1
                };
                peak = peak.max(run);
            }
            idx.peak_hourly[i] = peak;
        }
        idx
    }

    fn intern(&mut self, a: &AccountRef) -> usize {
        if let Some(&i) = self.ids.get(a) {
            return i;
        }
        let i = self.accounts.len();
        self.ids.insert(a.clone(), i);
        self.accounts.push(a.clone());
        self.times.push(Vec::new());
        self.window.push((0, 0.0));
        self.peak_hourly.push(0);
        i
    }

    pub fn horizon(&self) -> &Horizon {
        &self.horizon
    }

    /// Observed `(events per day, mean amount)` over the activity window.
    pub fn activity(&self, account: &AccountRef) -> Option<(f64, f64)> {
        let &i = self.ids.get(account)?;
        Some(self.stats(i))
    }

    fn stats(&self, i: usize) -> (f64, f64) {
        let (n, sum) = self.window[i];
        let mean = if n == 0 { 0.0 } else { sum / n as f64 };
        (n as f64 / self.window_days, mean)
    }

    fn fits(&self, i: usize, cluster: &IllicitCluster, role: RoleId) -> bool {
        let Some(node) = cluster.node(role) else {
            return false;
        };
        let (act, amt) = self.stats(i);
        node.activity_range.contains(act) && node.amount_range.contains(amt)
    }

    /// Hourly cap of a host after insertion.
    fn burst_cap(&self, i: usize, factor: f64) -> u64 {
        (factor * f64::from(self.peak_hourly[i].max(1))).floor() as u64
    }

    /// Up to `cfg.candidates` distinct injective assignments whose hosts fit
    /// their role ranges. Roles with the fewest candidates are filled first;
    /// each pick is uniform among the remaining candidates.
    pub fn role_hosts(
        &self,
        cluster: &IllicitCluster,
        cfg: &EmbedConfig,
        key: StreamKey,
    ) -> Vec<RoleAssignment> {
        let mut roles: Vec<(RoleId, Vec<usize>)> = cluster
            .nodes
            .iter()
            .map(|n| {
                (
                    n.id,
                    (0..self.accounts.len())
                        .filter(|&i| self.fits(i, cluster, n.id))
                        .collect(),
                )
            })
            .collect();
        if roles.is_empty() || roles.iter().any(|(_, c)| c.is_empty()) {
            return Vec::new();
        }
        roles.sort_by_key(|(id, c)| (c.len(), *id));
        let mut out = BTreeSet::new();
        'attempt: for m in 0..cfg.candidates {
            let mut rng = key.child(m as u64).rng();
            let mut used: BTreeSet<usize> = BTreeSet::new();
            let mut mapping = BTreeMap::new();
            for (role, cands) in &roles {
                let taken = used
                    .iter()
                    .filter(|u| cands.binary_search(u).is_ok())
                    .count();
                if taken == cands.len() {
                    continue 'attempt;
                }
                let pick = loop {
                    let c = cands[rng.random_range(0..cands.len())];
                    if !used.contains(&c) {
                        break c;
                    }
                };
                used.insert(pick);
                mapping.insert(*role, self.accounts[pick].clone());
            }
            out.insert(RoleAssignment { mapping });
        }
        out.into_iter().collect()
    }

    fn host_ids(&self, assignment: &RoleAssignment) -> Option<HashMap<RoleId, usize>> {
        assignment
            .mapping
            .iter()
            .map(|(r, a)| self.ids.get(a).map(|&i| (*r, i)))
            .collect()
    }

    /// Checks the three acceptance constraints for placing `cluster` at `anchor`.
    pub fn check(
        &self,
        cluster: &IllicitCluster,
        assignment: &RoleAssignment,
        anchor: i64,
        cfg: &EmbedConfig,
    ) -> Result<(), RejectionReason> {
        let roles: BTreeSet<RoleId> = cluster.nodes.iter().map(|n| n.id).collect();
        let mapped: BTreeSet<RoleId> = assignment.mapping.keys().copied().collect();
        let distinct: BTreeSet<&AccountRef> = assignment.mapping.values().collect();
        if !check_sanity(cluster).is_empty() || roles != mapped || distinct.len() != mapped.len() {
            return Err(RejectionReason::Structure);
        }
        let hosts = self
            .host_ids(assignment)
            .ok_or(RejectionReason::Structure)?;
        if hosts.iter().any(|(r, &i)| !self.fits(i, cluster, *r)) {
            return Err(RejectionReason::Profile);
        }
        if !self.temporal_ok(cluster, &hosts, anchor, cfg) {
            return Err(RejectionReason::Temporal);
        }
        Ok(())
    }

    fn temporal_ok(
        &self,
        cluster: &IllicitCluster,
        hosts: &HashMap<RoleId, usize>,
        anchor: i64,
        cfg: &EmbedConfig,
    ) -> bool {
        if cluster
            .edges
            .iter()
            .any(|e| !self.horizon.contains(anchor + e.rel_time))
        {
            return false;
        }
        let mut added: HashMap<(usize, i64), u64> = HashMap::new();
        for e in &cluster.edges {
            let h = hour_of(anchor + e.rel_time);
            *added.entry((hosts[&e.from], h)).or_default() += 1;
            *added.entry((hosts[&e.to], h)).or_default() += 1;
        }
        added.iter().all(|(&(i, h), &n)| {
            let ts = &self.times[i];
            let lo = ts.partition_point(|&t| t < h * 3_600);
            let hi = ts.partition_point(|&t| t < (h + 1) * 3_600);
            (hi - lo) as u64 + n <= self.burst_cap(i, cfg.burst_factor)
        })
    }

    /// Anchors keeping every edge inside the horizon, or `None` if the cluster
    /// does not fit.
    fn anchor_range(&self, cluster: &IllicitCluster) -> Option<(i64, i64)> {
        let (first, last) = cluster.time_span()?;
        let lo = self.horizon.start - first;
        let hi = self.horizon.end() - 1 - last;
        (lo <= hi).then_some((lo, hi))
    }

    /// A random anchor satisfying the temporal constraint, if one is found in
    /// `cfg.anchor_tries` draws.
    pub fn time_window(
        &self,
        cluster: &IllicitCluster,
        assignment: &RoleAssignment,
        cfg: &EmbedConfig,
        rng: &mut SimRng,
    ) -> Option<i64> {
        let (lo, hi) = self.anchor_range(cluster)?;
        let hosts = self.host_ids(assignment)?;
        if cluster
            .edges
            .iter()
            .any(|e| !hosts.contains_key(&e.from) || !hosts.contains_key(&e.to))
        {
            return None;
        }
        (0..cfg.anchor_tries)
            .map(|_| rng.random_range(lo..=hi))
            .find(|&a| self.temporal_ok(cluster, &hosts, a, cfg))
    }

    /// Validates and records the embedding, returning the new transactions.
    pub fn embed(
        &mut self,
        cluster: &IllicitCluster,
        assignment: &RoleAssignment,
        anchor: i64,
        cfg: &EmbedConfig,
    ) -> Result<Vec<Transaction>, RejectionReason> {
        self.check(cluster, assignment, anchor, cfg)?;
        let txs = cluster_transactions(
            cluster,
            anchor,
            |r| assignment.mapping[&r].clone(),
            cfg.payment_format,
        );
        for t in &txs {
            for a in [&t.from, &t.to] {
                let i = self.ids[a];
                let ts = &mut self.times[i];
                let at = ts.partition_point(|&x| x <= t.timestamp);
                ts.insert(at, t.timestamp);
                if t.timestamp >= self.window_start {
                    self.window[i].0 += 1;
                    self.window[i].1 += t.amount_paid;
                }
            }
        }
        Ok(txs)
    }
}

/// Appends `added` and restores timestamp order; equal timestamps keep their
/// existing relative order.
fn merge_sorted(log: &TransactionLog, added: Vec<Transaction>) -> TransactionLog {
    let mut txs = Vec::with_capacity(log.transactions.len() + added.len());
    txs.extend(log.transactions.iter().cloned());
    txs.extend(added);
    txs.sort_by_key(|t| t.timestamp);
    TransactionLog::new(txs, log.profiles.clone())
}

/// Candidate assignments of `cluster` in `log`; see [`HostIndex::role_hosts`].
pub fn find_role_hosts(
    cluster: &IllicitCluster,
    log: &TransactionLog,
    horizon: &Horizon,
    cfg: &EmbedConfig,
    seed: u64,
) -> Vec<RoleAssignment> {
    HostIndex::build(log, horizon, cfg).role_hosts(
        cluster,
        cfg,
        StreamKey::root(seed).named("hosts"),
    )
}

/// A feasible anchor for `cluster` under `assignment`; see [`HostIndex::time_window`].
pub fn find_time_window(
    cluster: &IllicitCluster,
    assignment: &RoleAssignment,
    log: &TransactionLog,
    horizon: &Horizon,
    cfg: &EmbedConfig,
    seed: u64,
) -> Option<i64> {
    let mut rng = StreamKey::root(seed).named("anchor").rng();
    HostIndex::build(log, horizon, cfg).time_window(cluster, assignment, cfg, &mut rng)
}

/// Embeds one cluster atomically. On rejection the returned log equals the input.
pub fn embed_cluster(
    cluster: &IllicitCluster,
    assignment: &RoleAssignment,
    anchor: i64,
    log: &TransactionLog,
    horizon: &Horizon,
    cfg: &EmbedConfig,
) -> (TransactionLog, EmbeddingReport) {
    let mut idx = HostIndex::build(log, horizon, cfg);
    let mut report = EmbeddingReport {
        cluster_id: cluster.name.clone(),
        accepted: false,
        rejection_reason: RejectionReason::None,
        edges_added: 0,
        anchor: None,
    };
    match idx.embed(cluster, assignment, anchor, cfg) {
        Ok(txs) => {
            report.accepted = true;
            report.edges_added = txs.len();
            report.anchor = Some(anchor);
            (merge_sorted(log, txs), report)
        }
        Err(reason) => {
            report.rejection_reason = reason;
            (log.clone(), report)
        }
    }
}

/// Embeds instances of `clusters`, cycling through them, until the laundering
/// share of the log reaches `target_prevalence`, a full pass is rejected, or
/// `cfg.max_attempts` instances were tried. Instance `i` is reported as
/// `<name>#<i / clusters.len()>`.
pub fn embed_all(
    clusters: &[IllicitCluster],
    log: &TransactionLog,
    horizon: &Horizon,
    target_prevalence: f64,
    cfg: &EmbedConfig,
    seed: u64,
) -> Result<(TransactionLog, Vec<EmbeddingReport>), EmbedError> {
    cfg.validate()?;
    if !(target_prevalence > 0.0 && target_prevalence <= 0.05) {
        return Err(EmbedError::Config(
            "target prevalence must lie in (0, 0.05]".into(),
        ));
    }
    if clusters.is_empty() {
        return Ok((log.clone(), Vec::new()));
    }
    let mut idx = HostIndex::build(log, horizon, cfg);
    let root = StreamKey::root(seed).named("embed");
    let mut laundering = log.laundering_count();
    let mut total = log.len();
    let mut added = Vec::new();
    let mut reports = Vec::new();
    let mut rejected_run = 0;
    for i in 0..cfg.max_attempts {
        if total > 0 && laundering as f64 >= target_prevalence * total as f64 {
            break;
        }
        if rejected_run >= clusters.len() {
            break;
        }
        let c = &clusters[i % clusters.len()];
        let key = root.child(i as u64);
        let mut report = EmbeddingReport {
            cluster_id: format!("{}#{}", c.name, i / clusters.len()),
            accepted: false,
            rejection_reason: RejectionReason::Profile,
            edges_added: 0,
            anchor: None,
        };
        let mut rng = key.named("anchor").rng();
        for a in idx.role_hosts(c, cfg, key.named("hosts")) {
            report.rejection_reason = RejectionReason::Temporal;
            let Some(anchor) = idx.time_window(c, &a, cfg, &mut rng) else {
                continue;
            };
            match idx.embed(c, &a, anchor, cfg) {
                Ok(txs) => {
                    report.accepted = true;
                    report.rejection_reason = RejectionReason::None;
                    report.edges_added = txs.len();
                    report.anchor = Some(anchor);
                    laundering += txs.len();
                    total += txs.len();
                    added.extend(txs);
                    break;
                }
                Err(reason) => report.rejection_reason = reason,
            }
        }
        rejected_run = if report.accepted { 0 } else { rejected_run + 1 };
        reports.push(report);
    }
    Ok((merge_sorted(log, added), reports))
}

/// Profiles whose accounts never transacted still count as hosts; this helper
/// builds a log carrying only profiles.
pub fn profiles_only(profiles: ProfileMap) -> TransactionLog {
    TransactionLog::new(Vec::new(), profiles)
}
