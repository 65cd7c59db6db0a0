#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use amlsynth_core::anomaly::write_seed_file;
use amlsynth_core::grpo::{default_action_grid, EvalContext, Policy, Step, Trajectory, DIGEST_DIM};
use amlsynth_core::model::CurrencyCode;
use amlsynth_core::monitor::{CompositeWeights, Scorer};
use amlsynth_core::pipeline::PipelineConfig;
use sha2::{Digest, Sha256};

use amlsynth_core::anomaly::{
    builtin_seeds, cluster_transactions, ClusterEdge, EditAction, IllicitCluster, Range, RoleId,
    RoleNode,
};
use amlsynth_core::backbone::{generate_backbone, BackboneConfig};
use amlsynth_core::model::{
    AccountRef, Horizon, PaymentFormat, PopulationConfig, Transaction, TransactionLog,
};
use amlsynth_core::monitor::{
    extract_all_features, train_monitor, FeatureConfig, MonitorModel, TrainConfig,
};
use amlsynth_core::rng::{SimRng, StreamKey};
use rand::Rng;

/// Random weakly connected cluster that passes the sanity check: a random tree
/// with arrival times increasing away from the root, plus forward extra edges.
pub fn random_cluster(rng: &mut SimRng, max_roles: u32) -> IllicitCluster {
    let n = rng.random_range(2..=max_roles.max(2));
    let nodes: Vec<RoleNode> = (0..n)
        .map(|i| {
            let a = rng.random_range(0.0..2.0);
            let m = rng.random_range(10.0..500.0);
            RoleNode {
                id: RoleId(i),
                label: format!("n{i}"),
                activity_range: Range::new(a, a + rng.random_range(0.0..3.0)),
                amount_range: Range::new(m, m * rng.random_range(1.0..10.0)),
            }
        })
        .collect();
    let mut arrival = vec![0i64; n as usize];
    let mut edges = Vec::new();
    for j in 1..n as usize {
        let p = rng.random_range(0..j);
        arrival[j] = arrival[p] + rng.random_range(1..20_000);
        edges.push(ClusterEdge {
            from: RoleId(p as u32),
            to: RoleId(j as u32),
            amount_cents: rng.random_range(1..2_000_000),
            rel_time: arrival[j],
        });
    }
    for _ in 0..rng.random_range(0..n) {
        let p = rng.random_range(0..n as usize - 1);
        let q = rng.random_range(p + 1..n as usize);
        edges.push(ClusterEdge {
            from: RoleId(p as u32),
            to: RoleId(q as u32),
            amount_cents: rng.random_range(1..2_000_000),
            rel_time: arrival[p] + rng.random_range(0..30_000),
        });
    }
    IllicitCluster::new("random", nodes, edges)
}

/// Arbitrary action, including out-of-range and infeasible parameters.
pub fn random_action(c: &IllicitCluster, rng: &mut SimRng) -> EditAction {
    let edge = rng.random_range(0..c.edges.len() + 1);
    let role = |rng: &mut SimRng| {
        if rng.random_bool(0.95) && !c.nodes.is_empty() {
            c.nodes[rng.random_range(0..c.nodes.len())].id
        } else {
            RoleId(999)
        }
    };
    match rng.random_range(0..4) {
        0 => EditAction::IntermediaryInjection {
            edge,
            hops: rng.random_range(0..4),
        },
        1 => EditAction::AccountMerging {
            role_a: role(rng),
            role_b: role(rng),
        },
        2 => EditAction::AccountSplitting {
            role: role(rng),
            k: rng.random_range(1..6),
        },
        _ => EditAction::TransactionAdjustment {
            edge,
            delta_cents: rng.random_range(-500_000..500_000),
            delta_time: rng.random_range(-90_000..90_000),
        },
    }
}

/// Checks flow conservation of one applied injection or forward split at
/// zero fee. Returns a description of the first discrepancy.
pub fn conservation_error(
    before: &IllicitCluster,
    action: &EditAction,
    after: &IllicitCluster,
) -> Option<String> {
    match *action {
        EditAction::IntermediaryInjection { edge, hops } => {
            let a = before.edges[edge].amount_cents;
            let added = &after.edges[before.edges.len()..];
            if after.edges[edge].amount_cents != a
                || added.len() != hops as usize
                || added.iter().any(|e| e.amount_cents != a)
            {
                return Some(format!("injection changed amount {a}"));
            }
            None
        }
        EditAction::AccountSplitting { role, .. } => {
            let new_roles: Vec<RoleId> = after
                .nodes
                .iter()
                .filter(|n| !before.has_role(n.id))
                .map(|n| n.id)
                .collect();
            let mut dests: Vec<RoleId> = before.out_edges(role).map(|(_, e)| e.to).collect();
            dests.sort();
            dests.dedup();
            for v in dests {
                let old: i64 = before
                    .out_edges(role)
                    .filter(|(_, e)| e.to == v)
                    .map(|(_, e)| e.amount_cents)
                    .sum();
                let new: i64 = after
                    .in_edges(v)
                    .filter(|(_, e)| new_roles.contains(&e.from))
                    .map(|(_, e)| e.amount_cents)
                    .sum();
                if old != new {
                    return Some(format!("split flow to {v}: {old} -> {new}"));
                }
            }
            let old_out: i64 = before.out_edges(role).map(|(_, e)| e.amount_cents).sum();
            let new_out: i64 = after.out_edges(role).map(|(_, e)| e.amount_cents).sum();
            (old_out != new_out).then(|| format!("split outflow {old_out} -> {new_out}"))
        }
        _ => None,
    }
}

/// A 200-entity, 30-day backbone and a monitor trained to separate it from
/// copies of the built-in seed clusters laid on fresh accounts.
pub fn toy_monitor(seed: u64) -> (Vec<Transaction>, MonitorModel) {
    let pop = PopulationConfig {
        persons: 180,
        merchants: 20,
        ..PopulationConfig::default()
    };
    let cfg = BackboneConfig {
        days: 30,
        ..BackboneConfig::default()
    };
    let backbone = generate_backbone(&pop, &cfg, seed)
        .unwrap()
        .log
        .transactions;
    let mut rng = StreamKey::root(seed).named("toy-positives").rng();
    let mut all = backbone.clone();
    for (ci, c) in builtin_seeds().iter().enumerate() {
        for copy in 0..20 {
            let anchor = cfg.start_epoch + rng.random_range(0..cfg.days as i64 * 86_400 - 86_400);
            all.extend(cluster_transactions(
                c,
                anchor,
                |r| AccountRef::new("T", &format!("C{ci}K{copy}R{}", r.0)).unwrap(),
                PaymentFormat::Transfer,
            ));
        }
    }
    all.sort_by_key(|t| t.timestamp);
    let features = extract_all_features(&all, &FeatureConfig::default());
    let labels: Vec<bool> = all.iter().map(|t| t.is_laundering).collect();
    let model = train_monitor(&features, &labels, &TrainConfig::default(), seed)
        .unwrap()
        .model;
    (backbone, model)
}

/// Checks an accepted embedding against the log it was embedded into: the
/// original rows survive in order, and the added rows are exactly the cluster
/// edges under the role mapping, at `anchor + rel_time`, labelled laundering.
pub fn embedding_error(
    before: &[Transaction],
    after: &[Transaction],
    cluster: &IllicitCluster,
    mapping: &BTreeMap<RoleId, AccountRef>,
    anchor: i64,
) -> Option<String> {
    let mut added = Vec::new();
    let mut kept = before.iter().peekable();
    for t in after {
        if kept.peek() == Some(&t) {
            kept.next();
        } else {
            added.push(t);
        }
    }
    if kept.next().is_some() {
        return Some("an original transaction was lost or reordered".into());
    }
    if after.windows(2).any(|w| w[1].timestamp < w[0].timestamp) {
        return Some("log is not time-sorted".into());
    }
    let key = |from: &AccountRef, to: &AccountRef, amount: f64, ts: i64| {
        format!("{from:?}|{to:?}|{amount}|{ts}")
    };
    let mut want: Vec<String> = cluster
        .edges
        .iter()
        .map(|e| {
            key(
                &mapping[&e.from],
                &mapping[&e.to],
                e.amount(),
                anchor + e.rel_time,
            )
        })
        .collect();
    let mut got: Vec<String> = added
        .iter()
        .map(|t| key(&t.from, &t.to, t.amount_paid, t.timestamp))
        .collect();
    want.sort();
    got.sort();
    if want != got {
        return Some(format!("added edges differ: want {want:?}, got {got:?}"));
    }
    if added.iter().any(|t| !t.is_laundering) {
        return Some("an added edge is not labelled laundering".into());
    }
    let mut by_time: Vec<&ClusterEdge> = cluster.edges.iter().collect();
    by_time.sort_by_key(|e| e.rel_time);
    let rel: Vec<i64> = added.iter().map(|t| t.timestamp - anchor).collect();
    if rel != by_time.iter().map(|e| e.rel_time).collect::<Vec<_>>() {
        return Some("relative time order changed".into());
    }
    None
}

/// A backbone for embedding tests: 500 entities over 30 days.
pub fn embedding_backbone(seed: u64) -> (TransactionLog, Horizon) {
    let pop = PopulationConfig {
        persons: 450,
        merchants: 50,
        ..PopulationConfig::default()
    };
    let cfg = BackboneConfig {
        days: 30,
        ..BackboneConfig::default()
    };
    (
        generate_backbone(&pop, &cfg, seed).unwrap().log,
        cfg.horizon(),
    )
}

/// Random cluster whose role profiles accept any host.
pub fn permissive_cluster(rng: &mut SimRng, max_roles: u32) -> IllicitCluster {
    let mut c = random_cluster(rng, max_roles);
    for n in &mut c.nodes {
        n.activity_range = Range::ANY;
        n.amount_range = Range::ANY;
    }
    c
}

/// Brute-force graph invariants: (gcc ratio, components, max k-core, max
/// core fraction, transitivity, assortativity). `adj` is a symmetric 0/1
/// matrix without self-loops.
pub fn brute_invariants(adj: &[Vec<bool>]) -> (f64, usize, usize, f64, f64, Option<f64>) {
    let n = adj.len();
    let mut reach: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| i == j || adj[i][j]).collect())
        .collect();
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    let reps: HashSet<usize> = (0..n)
        .map(|i| (0..n).find(|&j| reach[i][j]).unwrap())
        .collect();
    let largest = (0..n)
        .map(|i| reach[i].iter().filter(|&&r| r).count())
        .max()
        .unwrap_or(0);

    let core_of = |k: usize| -> Vec<usize> {
        let mut alive = vec![true; n];
        loop {
            let drop: Vec<usize> = (0..n)
                .filter(|&u| alive[u] && (0..n).filter(|&v| alive[v] && adj[u][v]).count() < k)
                .collect();
            if drop.is_empty() {
                return (0..n).filter(|&u| alive[u]).collect();
            }
            for u in drop {
                alive[u] = false;
            }
        }
    };
    let mut max_k = 0;
    while n > 0 && !core_of(max_k + 1).is_empty() {
        max_k += 1;
    }
    let core_size = if n == 0 { 0 } else { core_of(max_k).len() };

    let deg: Vec<usize> = (0..n)
        .map(|u| adj[u].iter().filter(|&&e| e).count())
        .collect();
    let mut tri = 0u64;
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                if adj[i][j] && adj[j][k] && adj[i][k] {
                    tri += 1;
                }
            }
        }
    }
    let triples: u64 = deg
        .iter()
        .map(|&d| (d * d.saturating_sub(1) / 2) as u64)
        .sum();
    let transitivity = if triples == 0 {
        0.0
    } else {
        3.0 * tri as f64 / triples as f64
    };

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if adj[u][v] {
                xs.push(deg[u] as f64);
                ys.push(deg[v] as f64);
            }
        }
    }
    let assortativity = if xs.is_empty() {
        None
    } else {
        let m = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / m;
        let my = ys.iter().sum::<f64>() / m;
        let cov = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - mx) * (y - my))
            .sum::<f64>()
            / m;
        let vx = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / m;
        let vy = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / m;
        (vx > 1e-12 && vy > 1e-12).then(|| cov / (vx * vy).sqrt())
    };
    let frac = |a: usize| if n == 0 { 0.0 } else { a as f64 / n as f64 };
    (
        frac(largest),
        reps.len(),
        max_k,
        frac(core_size),
        transitivity,
        assortativity,
    )
}

/// Random graph on at most `max_n` nodes with a random density; returns the
/// edge list (possibly with repeats and self-loops) and the adjacency matrix.
pub fn random_graph(
    rng: &mut SimRng,
    max_n: usize,
) -> (usize, Vec<(usize, usize)>, Vec<Vec<bool>>) {
    let n = rng.random_range(1..=max_n);
    let p = rng.random_range(0.0..0.5);
    let mut edges = Vec::new();
    let mut adj = vec![vec![false; n]; n];
    for u in 0..n {
        for v in 0..n {
            if rng.random_bool(p / 2.0) {
                edges.push((u, v));
                if u != v {
                    adj[u][v] = true;
                    adj[v][u] = true;
                }
            }
        }
    }
    (n, edges, adj)
}

/// Exact continuous power-law samples by inverse CDF.
pub fn pareto_samples(rng: &mut SimRng, n: usize, alpha: f64, x_min: f64) -> Vec<f64> {
    (0..n)
        .map(|_| x_min / (1.0 - rng.random::<f64>()).powf(1.0 / (alpha - 1.0)))
        .collect()
}

/// Pipeline config small enough for a sub-second end-to-end run, with one
/// seed cluster written to `dir`.
pub fn tiny_config(dir: &Path) -> PipelineConfig {
    let seeds = dir.join("one.seeds");
    let mut buf = Vec::new();
    write_seed_file(&builtin_seeds()[..1], &mut buf).unwrap();
    fs::write(&seeds, buf).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.seed = 17;
    cfg.population.persons = 90;
    cfg.population.merchants = 10;
    cfg.backbone.days = 2;
    cfg.seeds = Some(seeds);
    cfg.monitor.seed_copies = 6;
    cfg.harden.grpo.iterations = 3;
    cfg.harden.grpo.group_size = 4;
    cfg.harden.variants_per_seed = 2;
    cfg.output.features = true;
    cfg
}

/// SHA-256 of every file under `dir`, keyed by relative path.
pub fn hashes(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                let digest = Sha256::digest(fs::read(&p).unwrap());
                out.insert(rel, digest.iter().map(|b| format!("{b:02x}")).collect());
            }
        }
    }
    out
}

/// Random time-sorted log with arbitrary currencies, formats and labels.
pub fn random_log(rng: &mut SimRng, n: usize) -> Vec<Transaction> {
    let mut t = 1_600_000_000i64;
    (0..n)
        .map(|_| {
            t += rng.random_range(0..400);
            let acc = |rng: &mut SimRng| {
                AccountRef::new(
                    &rng.random_range(1..40).to_string(),
                    &format!("A{:06}", rng.random_range(0..500)),
                )
                .unwrap()
            };
            let paid = (rng.random_range(0.0..1e6f64) * 100.0).round() / 100.0;
            let received = if rng.random_bool(0.5) {
                paid
            } else {
                rng.random_range(0.0..1e7)
            };
            Transaction {
                timestamp: t,
                from: acc(rng),
                to: acc(rng),
                amount_paid: paid,
                payment_currency: ["USD", "EUR", "GBP"][rng.random_range(0..3)]
                    .parse::<CurrencyCode>()
                    .unwrap(),
                amount_received: received,
                receiving_currency: CurrencyCode::USD,
                payment_format: PaymentFormat::ALL[rng.random_range(0..5)],
                is_laundering: rng.random_bool(0.01),
            }
        })
        .collect()
}

/// Random policy, trajectories and advantages for gradient checks.
pub fn random_instance(rng: &mut SimRng) -> (Policy, Vec<Trajectory>, Vec<f64>) {
    let mut policy = Policy::new(default_action_grid(), rng.random_range(0.5..2.0));
    for t in &mut policy.theta {
        *t = rng.random_range(-1.0..1.0);
    }
    let k = rng.random_range(2..6);
    let trajs = (0..k)
        .map(|_| {
            let steps = (0..rng.random_range(1..6))
                .map(|_| Step {
                    digest: (0..DIGEST_DIM)
                        .map(|_| rng.random_range(-1.0..1.0))
                        .collect(),
                    action: rng.random_range(0..policy.n_actions()),
                    edit: None,
                    reward: 0.0,
                    applied: false,
                    s_after: 0.0,
                })
                .collect();
            Trajectory {
                steps,
                ret: 0.0,
                final_cluster: builtin_seeds()[0].clone(),
                final_s: 0.0,
                best: None,
            }
        })
        .collect();
    let adv = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
    (policy, trajs, adv)
}

/// Evaluation context over the whole log, anchored at its middle.
pub fn context<'a, S: Scorer>(txs: &[Transaction], model: &'a S) -> EvalContext<'a, S> {
    let anchor = txs[txs.len() / 2].timestamp;
    EvalContext::new(
        model,
        txs.to_vec(),
        anchor,
        PaymentFormat::Transfer,
        CompositeWeights::default(),
    )
    .unwrap()
}
