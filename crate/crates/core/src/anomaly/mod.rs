//! Illicit clusters: role graphs with timed, amount-carrying edges, and the
//! four edit families used to diversify them.
//!
//! Amounts are stored in integer cents so that flow conservation under
//! injection and splitting is exact.

mod edits;
mod seeds;

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AccountRef, CurrencyCode, PaymentFormat, Transaction};

pub use edits::{
    apply_account_merging, apply_account_splitting, apply_action, apply_intermediary_injection,
    apply_transaction_adjustment, EditConfig, SplitMode,
};
pub use seeds::{builtin_seeds, parse_seed_file, write_seed_file, SeedParseError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RoleId(pub u32);

impl fmt::Display for RoleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// Closed interval `[lo, hi]`; `hi` may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const ANY: Range = Range {
        lo: 0.0,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Range {
        Range { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn hull(&self, other: &Range) -> Range {
        Range {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Length of the intersection over the length of the hull; 1 for two
    /// identical degenerate or unbounded ranges.
    pub fn overlap(&self, other: &Range) -> f64 {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        if hi < lo {
            return 0.0;
        }
        let hull = self.hull(other);
        if hull.width() == 0.0 || (hull.hi.is_infinite() && hi.is_infinite()) {
            return 1.0;
        }
        if hull.hi.is_infinite() {
            return 0.0;
        }
        (hi - lo) / hull.width()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleNode {
    pub id: RoleId,
    pub label: String,
    /// Events per day the host account must show.
    pub activity_range: Range,
    /// Typical transaction amount the host account must show, in currency units.
    pub amount_range: Range,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterEdge {
    pub from: RoleId,
    pub to: RoleId,
    pub amount_cents: i64,
    /// Seconds relative to the cluster anchor.
    pub rel_time: i64,
}

impl ClusterEdge {
    pub fn amount(&self) -> f64 {
        self.amount_cents as f64 / 100.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IllicitCluster {
    pub name: String,
    pub nodes: Vec<RoleNode>,
    pub edges: Vec<ClusterEdge>,
    /// Edits applied so far.
    pub budget_used: u32,
    /// Roles created by edits so far.
    pub nodes_added: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditBudget {
    pub max_edits: u32,
    pub max_new_nodes: u32,
}

impl Default for EditBudget {
    fn default() -> Self {
        EditBudget {
            max_edits: 12,
            max_new_nodes: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum SanityViolation {
    DanglingEndpoint { edge: usize },
    SelfLoop { edge: usize },
    NegativeAmount { edge: usize },
    TimeOrderViolation(RoleId),
    DuplicateRole(RoleId),
    Disconnected,
    NoEdges,
}

impl IllicitCluster {
    pub fn new(name: impl Into<String>, nodes: Vec<RoleNode>, edges: Vec<ClusterEdge>) -> Self {
        IllicitCluster {
            name: name.into(),
            nodes,
            edges,
            budget_used: 0,
            nodes_added: 0,
        }
    }

    pub fn node(&self, id: RoleId) -> Option<&RoleNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn has_role(&self, id: RoleId) -> bool {
        self.nodes.iter().any(|n| n.id == id)
    }

    pub fn next_role_id(&self) -> RoleId {
        RoleId(self.nodes.iter().map(|n| n.id.0 + 1).max().unwrap_or(0))
    }

    pub fn total_amount_cents(&self) -> i64 {
        self.edges.iter().map(|e| e.amount_cents).sum()
    }

    /// Earliest and latest relative edge time.
    pub fn time_span(&self) -> Option<(i64, i64)> {
        let min = self.edges.iter().map(|e| e.rel_time).min()?;
        let max = self.edges.iter().map(|e| e.rel_time).max()?;
        Some((min, max))
    }

    pub fn out_edges(&self, id: RoleId) -> impl Iterator<Item = (usize, &ClusterEdge)> {
        self.edges
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.from == id)
    }

    pub fn in_edges(&self, id: RoleId) -> impl Iterator<Item = (usize, &ClusterEdge)> {
        self.edges
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.to == id)
    }

    /// Earliest incoming edge time at `id`, if any.
    pub fn first_inflow(&self, id: RoleId) -> Option<i64> {
        self.in_edges(id).map(|(_, e)| e.rel_time).min()
    }

    pub fn max_fan_out(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| self.out_edges(n.id).count())
            .max()
            .unwrap_or(0)
    }

    pub fn max_fan_in(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| self.in_edges(n.id).count())
            .max()
            .unwrap_or(0)
    }

    /// Longest shortest-path distance from the source roles (no inflow). When
    /// every role has inflow, the first role is used as the source.
    pub fn depth(&self) -> usize {
        let idx = |id: RoleId| self.nodes.iter().position(|n| n.id == id);
        let mut dist = vec![usize::MAX; self.nodes.len()];
        let mut queue = VecDeque::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if self.first_inflow(n.id).is_none() {
                dist[i] = 0;
                queue.push_back(i);
            }
        }
        if queue.is_empty() && !self.nodes.is_empty() {
            dist[0] = 0;
            queue.push_back(0);
        }
        while let Some(i) = queue.pop_front() {
            for (_, e) in self.out_edges(self.nodes[i].id) {
                if let Some(j) = idx(e.to) {
                    if dist[j] == usize::MAX {
                        dist[j] = dist[i] + 1;
                        queue.push_back(j);
                    }
                }
            }
        }
        dist.into_iter()
            .filter(|&d| d != usize::MAX)
            .max()
            .unwrap_or(0)
    }

    fn weakly_connected(&self) -> bool {
        if self.nodes.len() <= 1 {
            return true;
        }
        let idx = |id: RoleId| self.nodes.iter().position(|n| n.id == id);
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            if let (Some(a), Some(b)) = (idx(e.from), idx(e.to)) {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Merging similarity: mean overlap of the activity and amount ranges.
    pub fn similarity(&self, a: RoleId, b: RoleId) -> f64 {
        match (self.node(a), self.node(b)) {
            (Some(x), Some(y)) => {
                0.5 * (x.activity_range.overlap(&y.activity_range)
                    + x.amount_range.overlap(&y.amount_range))
            }
            _ => 0.0,
        }
    }

    /// Role pairs ordered by decreasing similarity, ties by id.
    pub fn merge_candidates(&self, limit: usize) -> Vec<(RoleId, RoleId)> {
        let mut pairs = Vec::new();
        for (i, x) in self.nodes.iter().enumerate() {
            for y in &self.nodes[i + 1..] {
                let (a, b) = if x.id < y.id {
                    (x.id, y.id)
                } else {
                    (y.id, x.id)
                };
                pairs.push((self.similarity(a, b), a, b));
            }
        }
        pairs.sort_by(|p, q| q.0.total_cmp(&p.0).then((p.1, p.2).cmp(&(q.1, q.2))));
        pairs
            .into_iter()
            .take(limit)
            .map(|(_, a, b)| (a, b))
            .collect()
    }
}

/// The cluster's edges as laundering transactions, in edge order, with role `r`
/// played by `account(r)` and times shifted by `anchor`.
pub fn cluster_transactions(
    cluster: &IllicitCluster,
    anchor: i64,
    mut account: impl FnMut(RoleId) -> AccountRef,
    format: PaymentFormat,
) -> Vec<Transaction> {
    cluster
        .edges
        .iter()
        .map(|e| Transaction {
            timestamp: anchor + e.rel_time,
            from: account(e.from),
            to: account(e.to),
            amount_paid: e.amount(),
            payment_currency: CurrencyCode::USD,
            amount_received: e.amount(),
            receiving_currency: CurrencyCode::USD,
            payment_format: format,
            is_laundering: true,
        })
        .collect()
}

/// All violated invariants of the cluster; empty when sane.
pub fn check_sanity(cluster: &IllicitCluster) -> Vec<SanityViolation> {
    let mut out = BTreeSet::new();
    let mut ids = BTreeSet::new();
    for n in &cluster.nodes {
        if !ids.insert(n.id) {
            out.insert(SanityViolation::DuplicateRole(n.id));
        }
    }
    if cluster.edges.is_empty() {
        out.insert(SanityViolation::NoEdges);
    }
    for (i, e) in cluster.edges.iter().enumerate() {
        if !ids.contains(&e.from) || !ids.contains(&e.to) {
            out.insert(SanityViolation::DanglingEndpoint { edge: i });
        }
        if e.from == e.to {
            out.insert(SanityViolation::SelfLoop { edge: i });
        }
        if e.amount_cents < 0 {
            out.insert(SanityViolation::NegativeAmount { edge: i });
        }
    }
    for n in &cluster.nodes {
        if let Some(first_in) = cluster.first_inflow(n.id) {
            if cluster.out_edges(n.id).any(|(_, e)| e.rel_time < first_in) {
                out.insert(SanityViolation::TimeOrderViolation(n.id));
            }
        }
    }
    if !cluster.weakly_connected() {
        out.insert(SanityViolation::Disconnected);
    }
    out.into_iter().collect()
}

/// A single edit. Amount shifts are in cents and time shifts in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EditAction {
    IntermediaryInjection {
        edge: usize,
        hops: u32,
    },
    AccountMerging {
        role_a: RoleId,
        role_b: RoleId,
    },
    AccountSplitting {
        role: RoleId,
        k: u32,
    },
    TransactionAdjustment {
        edge: usize,
        delta_cents: i64,
        delta_time: i64,
    },
}

impl EditAction {
    pub fn family(&self) -> &'static str {
        match self {
            EditAction::IntermediaryInjection { .. } => "injection",
            EditAction::AccountMerging { .. } => "merging",
            EditAction::AccountSplitting { .. } => "splitting",
            EditAction::TransactionAdjustment { .. } => "adjustment",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EditError {
    #[error("edit budget exhausted")]
    BudgetExhausted,
    #[error("node budget exhausted")]
    NodeBudgetExhausted,
    #[error("no edge {0}")]
    MissingEdge(usize),
    #[error("no role {0}")]
    MissingRole(RoleId),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no feasible time window")]
    NoTimeWindow,
    #[error("edit would break sanity: {0:?}")]
    Sanity(Vec<SanityViolation>),
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn role(id: u32) -> RoleNode {
        RoleNode {
            id: RoleId(id),
            label: format!("R{id}"),
            activity_range: Range::ANY,
            amount_range: Range::ANY,
        }
    }

    pub(crate) fn edge(from: u32, to: u32, amount_cents: i64, rel_time: i64) -> ClusterEdge {
        ClusterEdge {
            from: RoleId(from),
            to: RoleId(to),
            amount_cents,
            rel_time,
        }
    }

    #[test]
    fn sanity_examples() {
        let ok = IllicitCluster::new(
            "c",
            vec![role(0), role(1), role(2)],
            vec![edge(0, 1, 100, 0), edge(1, 2, 100, 10)],
        );
        assert!(check_sanity(&ok).is_empty());

        let late = IllicitCluster::new(
            "c",
            vec![role(0), role(1), role(2)],
            vec![edge(0, 1, 100, 10), edge(1, 2, 100, 5)],
        );
        assert_eq!(
            check_sanity(&late),
            vec![SanityViolation::TimeOrderViolation(RoleId(1))]
        );

        let neg = IllicitCluster::new("c", vec![role(0), role(1)], vec![edge(0, 1, -5000, 0)]);
        assert_eq!(
            check_sanity(&neg),
            vec![SanityViolation::NegativeAmount { edge: 0 }]
        );
    }

    #[test]
    fn structural_violations() {
        let dangling = IllicitCluster::new(
            "c",
            vec![role(0), role(1)],
            vec![edge(0, 1, 1, 0), edge(1, 7, 1, 1)],
        );
        assert!(check_sanity(&dangling).contains(&SanityViolation::DanglingEndpoint { edge: 1 }));
        let split = IllicitCluster::new(
            "c",
            vec![role(0), role(1), role(2), role(3)],
            vec![edge(0, 1, 1, 0), edge(2, 3, 1, 0)],
        );
        assert_eq!(check_sanity(&split), vec![SanityViolation::Disconnected]);
    }

    #[test]
    fn range_overlap() {
        assert_eq!(
            Range::new(0.0, 10.0).overlap(&Range::new(5.0, 15.0)),
            5.0 / 15.0
        );
        assert_eq!(Range::new(0.0, 1.0).overlap(&Range::new(2.0, 3.0)), 0.0);
        assert_eq!(Range::ANY.overlap(&Range::ANY), 1.0);
    }

    #[test]
    fn depth_and_fans() {
        let c = IllicitCluster::new(
            "c",
            vec![role(0), role(1), role(2), role(3)],
            vec![edge(0, 1, 1, 0), edge(1, 2, 1, 1), edge(1, 3, 1, 1)],
        );
        assert_eq!(c.depth(), 2);
        assert_eq!(c.max_fan_out(), 2);
        assert_eq!(c.max_fan_in(), 1);
    }
}
