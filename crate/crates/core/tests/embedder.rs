mod common;

use std::collections::BTreeMap;

use amlsynth_core::anomaly::{builtin_seeds, RoleId};
use amlsynth_core::embedder::{
    embed_all, embed_cluster, find_role_hosts, find_time_window, EmbedConfig, RejectionReason,
    RoleAssignment,
};
use amlsynth_core::model::AccountRef;
use amlsynth_core::pipeline::write_transactions;
use amlsynth_core::rng::StreamKey;
use common::{embedding_backbone, embedding_error, permissive_cluster, random_cluster};
use rand::Rng;

fn csv_bytes(txs: &[amlsynth_core::model::Transaction]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_transactions(txs, &mut buf).unwrap();
    buf
}

#[test]
fn accepted_embeddings_preserve_cluster_structure() {
    let (log, horizon) = embedding_backbone(31);
    let cfg = EmbedConfig::default();
    let mut rng = StreamKey::root(32).rng();
    let mut accepted = 0;
    for trial in 0..1000u64 {
        if accepted == 100 {
            break;
        }
        let c = permissive_cluster(&mut rng, 7);
        let Some(a) = find_role_hosts(&c, &log, &horizon, &cfg, trial)
            .into_iter()
            .next()
        else {
            continue;
        };
        let Some(anchor) = find_time_window(&c, &a, &log, &horizon, &cfg, trial) else {
            continue;
        };
        let (after, report) = embed_cluster(&c, &a, anchor, &log, &horizon, &cfg);
        if !report.accepted {
            continue;
        }
        accepted += 1;
        assert_eq!(report.edges_added, c.edges.len());
        assert_eq!(after.laundering_count(), c.edges.len());
        if let Some(e) = embedding_error(
            &log.transactions,
            &after.transactions,
            &c,
            &a.mapping,
            anchor,
        ) {
            panic!("trial {trial}: {e}");
        }
    }
    assert_eq!(accepted, 100);
}

#[test]
fn rejections_leave_the_log_identical() {
    let (log, horizon) = embedding_backbone(33);
    let cfg = EmbedConfig::default();
    let original = csv_bytes(&log.transactions);
    let accounts: Vec<AccountRef> = log.profiles.keys().cloned().collect();
    let mut rng = StreamKey::root(34).rng();
    let mut seen = BTreeMap::new();
    for _ in 0..300 {
        let c = random_cluster(&mut rng, 6);
        let mut mapping: BTreeMap<RoleId, AccountRef> = c
            .nodes
            .iter()
            .map(|n| (n.id, accounts[rng.random_range(0..accounts.len())].clone()))
            .collect();
        if rng.random_bool(0.1) {
            mapping.pop_first();
        }
        let anchor = horizon.start + rng.random_range(-86_400..horizon.days as i64 * 86_400);
        let (after, report) = embed_cluster(
            &c,
            &RoleAssignment { mapping },
            anchor,
            &log,
            &horizon,
            &cfg,
        );
        if report.accepted {
            continue;
        }
        *seen
            .entry(format!("{:?}", report.rejection_reason))
            .or_insert(0) += 1;
        assert_eq!(report.edges_added, 0);
        assert_eq!(after, log);
        assert_eq!(csv_bytes(&after.transactions), original);
    }
    assert!(seen.len() >= 2, "{seen:?}");
}

#[test]
fn embed_all_reaches_target_and_is_deterministic() {
    let (log, horizon) = embedding_backbone(35);
    let cfg = EmbedConfig::default();
    let seeds = builtin_seeds();
    let target = 0.01;
    let (a, reports) = embed_all(&seeds, &log, &horizon, target, &cfg, 3).unwrap();
    let (b, again) = embed_all(&seeds, &log, &horizon, target, &cfg, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(reports, again);
    let share = a.laundering_count() as f64 / a.len() as f64;
    let accepted: usize = reports
        .iter()
        .filter(|r| r.accepted)
        .map(|r| r.edges_added)
        .sum();
    assert_eq!(accepted, a.laundering_count());
    assert!(reports
        .iter()
        .all(|r| r.accepted == (r.rejection_reason == RejectionReason::None)));
    if share < target {
        let tail = &reports[reports.len().saturating_sub(seeds.len())..];
        assert!(
            tail.iter().all(|r| !r.accepted),
            "stopped early at share {share}"
        );
    } else {
        let largest = seeds.iter().map(|c| c.edges.len()).max().unwrap() as f64;
        assert!(share < target + largest / a.len() as f64);
    }
}
