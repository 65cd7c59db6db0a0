use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_sanity, ClusterEdge, EditAction, EditBudget, EditError, IllicitCluster, RoleId, RoleNode,
};
use crate::rng::SimRng;

/// How account splitting treats the split role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// The role keeps its inflows and forwards each outflow through `k` new
    /// recipients, which pass their shares on to the original destination.
    #[default]
    Forward,
    /// The role is replaced by itself plus `k - 1` replicas, each carrying a
    /// share of every incident edge at unchanged times.
    Replicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EditConfig {
    /// Longest delay, in seconds, an injected chain or split may add to a flow.
    pub max_delay: i64,
    /// Per-hop fee fraction taken by injected intermediaries.
    pub fee: f64,
    pub split_mode: SplitMode,
}

impl Default for EditConfig {
    fn default() -> Self {
        EditConfig {
            max_delay: 86_400,
            fee: 0.0,
            split_mode: SplitMode::Forward,
        }
    }
}

fn charge(cluster: &IllicitCluster, budget: &EditBudget, new_nodes: u32) -> Result<(), EditError> {
    if cluster.budget_used >= budget.max_edits {
        return Err(EditError::BudgetExhausted);
    }
    if cluster.nodes_added + new_nodes > budget.max_new_nodes {
        return Err(EditError::NodeBudgetExhausted);
    }
    Ok(())
}

fn commit(mut next: IllicitCluster, new_nodes: u32) -> Result<IllicitCluster, EditError> {
    next.budget_used += 1;
    next.nodes_added += new_nodes;
    let v = check_sanity(&next);
    if v.is_empty() {
        Ok(next)
    } else {
        Err(EditError::Sanity(v))
    }
}

/// Latest time at which a replacement for `edge` may still arrive at its
/// destination without letting the destination spend before it is funded.
fn arrival_deadline(c: &IllicitCluster, edge: usize, max_delay: i64) -> i64 {
    let e = c.edges[edge];
    let mut deadline = e.rel_time.saturating_add(max_delay);
    let other_first_in = c
        .edges
        .iter()
        .enumerate()
        .filter(|(i, x)| *i != edge && x.to == e.to)
        .map(|(_, x)| x.rel_time)
        .min();
    if let Some(first_out) = c.out_edges(e.to).map(|(_, x)| x.rel_time).min() {
        if other_first_in.is_none_or(|t| t > first_out) {
            deadline = deadline.min(first_out);
        }
    }
    deadline
}

fn new_role(id: RoleId, prefix: &str, like: &[&RoleNode]) -> RoleNode {
    let mut activity = like[0].activity_range;
    let mut amount = like[0].amount_range;
    for r in &like[1..] {
        activity = activity.hull(&r.activity_range);
        amount = amount.hull(&r.amount_range);
    }
    RoleNode {
        id,
        label: format!("{prefix}{}", id.0),
        activity_range: activity,
        amount_range: amount,
    }
}

/// Splits `total` cents into `k` positive parts uniformly over compositions.
fn split_cents(total: i64, k: usize, rng: &mut SimRng) -> Option<Vec<i64>> {
    if k == 0 || total < k as i64 {
        return None;
    }
    let mut cuts: Vec<i64> = index::sample(rng, (total - 1) as usize, k - 1)
        .into_iter()
        .map(|c| c as i64 + 1)
        .collect();
    cuts.sort_unstable();
    let mut parts = Vec::with_capacity(k);
    let mut prev = 0;
    for c in cuts {
        parts.push(c - prev);
        prev = c;
    }
    parts.push(total - prev);
    Some(parts)
}

/// Replaces `u → v` by `u → m1 → … → m_hops → v` with strictly increasing times
/// after the original time.
pub fn apply_intermediary_injection(
    cluster: &IllicitCluster,
    edge: usize,
    hops: u32,
    budget: &EditBudget,
    cfg: &EditConfig,
    rng: &mut SimRng,
) -> Result<IllicitCluster, EditError> {
    let e = *cluster
        .edges
        .get(edge)
        .ok_or(EditError::MissingEdge(edge))?;
    if hops == 0 {
        return Err(EditError::InvalidParameter(
            "hops must be at least 1".into(),
        ));
    }
    charge(cluster, budget, hops)?;
    let deadline = arrival_deadline(cluster, edge, cfg.max_delay);
    let window = deadline - e.rel_time;
    if window < i64::from(hops) + 1 {
        return Err(EditError::NoTimeWindow);
    }
    let mut times: Vec<i64> = index::sample(rng, window as usize, hops as usize + 1)
        .into_iter()
        .map(|x| e.rel_time + 1 + x as i64)
        .collect();
    times.sort_unstable();

    let mut next = cluster.clone();
    let ends = [
        cluster.node(e.from).ok_or(EditError::MissingRole(e.from))?,
        cluster.node(e.to).ok_or(EditError::MissingRole(e.to))?,
    ];
    let first = cluster.next_role_id().0;
    let mids: Vec<RoleId> = (0..hops).map(|i| RoleId(first + i)).collect();
    for &m in &mids {
        next.nodes.push(new_role(m, "m", &ends));
    }
    let path: Vec<RoleId> = std::iter::once(e.from)
        .chain(mids.iter().copied())
        .chain(std::iter::once(e.to))
        .collect();
    for (i, w) in path.windows(2).enumerate() {
        let amount = if cfg.fee > 0.0 {
            (e.amount_cents as f64 * (1.0 - cfg.fee).powi(i as i32)).round() as i64
        } else {
            e.amount_cents
        };
        let hop = ClusterEdge {
            from: w[0],
            to: w[1],
            amount_cents: amount,
            rel_time: times[i],
        };
        if i == 0 {
            next.edges[edge] = hop;
        } else {
            next.edges.push(hop);
        }
    }
    commit(next, hops)
}

/// Folds `role_b` into `role_a`: incident edges are rewired, edges between the
/// two are dropped, and their requirement ranges are unioned.
pub fn apply_account_merging(
    cluster: &IllicitCluster,
    role_a: RoleId,
    role_b: RoleId,
    budget: &EditBudget,
) -> Result<IllicitCluster, EditError> {
    if role_a == role_b {
        return Err(EditError::InvalidParameter(
            "cannot merge a role with itself".into(),
        ));
    }
    let b = cluster
        .node(role_b)
        .ok_or(EditError::MissingRole(role_b))?
        .clone();
    if !cluster.has_role(role_a) {
        return Err(EditError::MissingRole(role_a));
    }
    charge(cluster, budget, 0)?;
    let mut next = cluster.clone();
    next.nodes.retain(|n| n.id != role_b);
    let a = next
        .nodes
        .iter_mut()
        .find(|n| n.id == role_a)
        .expect("checked");
    a.activity_range = a.activity_range.hull(&b.activity_range);
    a.amount_range = a.amount_range.hull(&b.amount_range);
    let pair = |x: RoleId, y: RoleId| (x == role_a && y == role_b) || (x == role_b && y == role_a);
    next.edges.retain(|e| !pair(e.from, e.to));
    for e in &mut next.edges {
        if e.from == role_b {
            e.from = role_a;
        }
        if e.to == role_b {
            e.to = role_a;
        }
    }
    commit(next, 0)
}

/// Disperses the outflows of `role` over `k` recipients (see [`SplitMode`]).
pub fn apply_account_splitting(
    cluster: &IllicitCluster,
    role: RoleId,
    k: u32,
    budget: &EditBudget,
    cfg: &EditConfig,
    rng: &mut SimRng,
) -> Result<IllicitCluster, EditError> {
    let node = cluster
        .node(role)
        .ok_or(EditError::MissingRole(role))?
        .clone();
    if k < 2 {
        return Err(EditError::InvalidParameter("k must be at least 2".into()));
    }
    let outs: Vec<usize> = cluster.out_edges(role).map(|(i, _)| i).collect();
    if outs.is_empty() {
        return Err(EditError::InvalidParameter(format!(
            "{role} has no outgoing edge"
        )));
    }
    let first = cluster.next_role_id().0;
    match cfg.split_mode {
        SplitMode::Forward => {
            charge(cluster, budget, k)?;
            let splits: Vec<RoleId> = (0..k).map(|i| RoleId(first + i)).collect();
            let mut next = cluster.clone();
            for &s in &splits {
                next.nodes.push(new_role(s, "s", &[&node]));
            }
            let mut replaced = Vec::new();
            for &i in &outs {
                let e = cluster.edges[i];
                let deadline = arrival_deadline(cluster, i, cfg.max_delay);
                let window = deadline - e.rel_time;
                if window < 1 {
                    return Err(EditError::NoTimeWindow);
                }
                let parts = split_cents(e.amount_cents, k as usize, rng).ok_or_else(|| {
                    EditError::InvalidParameter("edge amount too small to split".into())
                })?;
                for (j, &s) in splits.iter().enumerate() {
                    let t1 = e.rel_time + rng.random_range(0..window);
                    let t2 = t1 + 1 + rng.random_range(0..deadline - t1);
                    replaced.push(ClusterEdge {
                        from: role,
                        to: s,
                        amount_cents: parts[j],
                        rel_time: t1,
                    });
                    replaced.push(ClusterEdge {
                        from: s,
                        to: e.to,
                        amount_cents: parts[j],
                        rel_time: t2,
                    });
                }
            }
            let mut keep = Vec::with_capacity(next.edges.len() + replaced.len());
            for (i, e) in next.edges.iter().enumerate() {
                if !outs.contains(&i) {
                    keep.push(*e);
                }
            }
            keep.extend(replaced);
            next.edges = keep;
            commit(next, k)
        }
        SplitMode::Replicate => {
            let extra = k - 1;
            charge(cluster, budget, extra)?;
            let copies: Vec<RoleId> = std::iter::once(role)
                .chain((0..extra).map(|i| RoleId(first + i)))
                .collect();
            let mut next = cluster.clone();
            for &c in &copies[1..] {
                let mut n = node.clone();
                n.id = c;
                n.label = format!("{}#{}", node.label, c.0);
                next.nodes.push(n);
            }
            let mut edges = Vec::with_capacity(next.edges.len() * 2);
            for e in &cluster.edges {
                if e.from != role && e.to != role {
                    edges.push(*e);
                    continue;
                }
                let parts = split_cents(e.amount_cents, k as usize, rng).ok_or_else(|| {
                    EditError::InvalidParameter("edge amount too small to split".into())
                })?;
                for (j, &c) in copies.iter().enumerate() {
                    let mut x = *e;
                    if e.from == role {
                        x.from = c;
                    } else {
                        x.to = c;
                    }
                    x.amount_cents = parts[j];
                    edges.push(x);
                }
            }
            next.edges = edges;
            commit(next, extra)
        }
    }
}

/// Shifts one edge's amount (cents) and time (seconds). A zero shift is a no-op
/// that does not consume budget.
pub fn apply_transaction_adjustment(
    cluster: &IllicitCluster,
    edge: usize,
    delta_cents: i64,
    delta_time: i64,
    budget: &EditBudget,
) -> Result<IllicitCluster, EditError> {
    let e = *cluster
        .edges
        .get(edge)
        .ok_or(EditError::MissingEdge(edge))?;
    if delta_cents == 0 && delta_time == 0 {
        return Ok(cluster.clone());
    }
    let amount = e.amount_cents.checked_add(delta_cents).filter(|a| *a >= 0);
    let Some(amount) = amount else {
        return Err(EditError::InvalidParameter(
            "resulting amount is negative".into(),
        ));
    };
    charge(cluster, budget, 0)?;
    let mut next = cluster.clone();
    next.edges[edge].amount_cents = amount;
    next.edges[edge].rel_time = e.rel_time.saturating_add(delta_time);
    commit(next, 0)
}

/// Applies `action`, returning the edited cluster, or the input and `false` if
/// the edit is rejected for any reason.
pub fn apply_action(
    cluster: &IllicitCluster,
    action: &EditAction,
    budget: &EditBudget,
    cfg: &EditConfig,
    rng: &mut SimRng,
) -> (IllicitCluster, bool) {
    let r = match *action {
        EditAction::IntermediaryInjection { edge, hops } => {
            apply_intermediary_injection(cluster, edge, hops, budget, cfg, rng)
        }
        EditAction::AccountMerging { role_a, role_b } => {
            apply_account_merging(cluster, role_a, role_b, budget)
        }
        EditAction::AccountSplitting { role, k } => {
            apply_account_splitting(cluster, role, k, budget, cfg, rng)
        }
        EditAction::TransactionAdjustment {
            edge,
            delta_cents,
            delta_time,
        } => apply_transaction_adjustment(cluster, edge, delta_cents, delta_time, budget),
    };
    match r {
        Ok(c) if check_sanity(&c).is_empty() => (c, true),
        _ => (cluster.clone(), false),
    }
}
