mod common;

use std::collections::{HashMap, HashSet};
use std::fs;

use amlsynth_core::anomaly::write_seed_file;
use amlsynth_core::model::Transaction;
use amlsynth_core::monitor::FEATURE_NAMES;
use amlsynth_core::pipeline::{
    export_features, make_splits, read_transactions, run_backbone, run_embed, run_harden,
    run_monitor, run_pipeline, summarize, write_transactions, AttributeTable, FeatureExport,
    SplitMode, Stage,
};
use amlsynth_core::rng::{SimRng, StreamKey};
use common::{hashes, random_log, tiny_config};
use rand::Rng;

#[test]
fn tiny_pipeline_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(tmp.path());
    cfg.output.dir = tmp.path().join("a");
    let a = run_pipeline(&cfg).unwrap();
    cfg.output.dir = tmp.path().join("b");
    let b = run_pipeline(&cfg).unwrap();
    let (ha, hb) = (hashes(&a.dir), hashes(&b.dir));
    for f in [
        "transactions.csv",
        "persons.csv",
        "merchants.csv",
        "summary.csv",
        "features.csv",
        "monitor.txt",
        "policy.txt",
        "grpo_log.csv",
        "hardened.seeds",
        "embedding_reports.csv",
        "fidelity_daily.csv",
        "config.toml",
        "splits/train.csv",
        "splits/test.csv",
    ] {
        assert!(ha.contains_key(f), "missing {f}");
    }
    assert_eq!(ha, hb);
    assert!(a.summary.laundering > 0);
    assert!(a.reports.iter().any(|r| r.accepted));
    assert!(!tmp.path().join(".a.partial").exists());

    cfg.seed = 18;
    cfg.output.dir = tmp.path().join("c");
    let c = run_pipeline(&cfg).unwrap();
    assert_ne!(ha["transactions.csv"], hashes(&c.dir)["transactions.csv"]);
}

#[test]
fn pipeline_equals_stages_run_individually() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(tmp.path());
    cfg.output.dir = tmp.path().join("out");
    let result = run_pipeline(&cfg).unwrap();

    let seeds = cfg.load_seeds().unwrap();
    let backbone = run_backbone(&cfg).unwrap();
    let monitor = run_monitor(&cfg, &backbone.log.transactions, &seeds).unwrap();
    let harden = run_harden(
        &cfg,
        &backbone.log.transactions,
        &monitor.backbone_scores,
        &monitor.training.model,
        &seeds,
    )
    .unwrap();
    let (log, reports) = run_embed(&cfg, &backbone.log, &harden.pool).unwrap();

    assert_eq!(harden.outcome.hardened, result.hardened);
    assert_eq!(reports, result.reports);
    let mut buf = Vec::new();
    write_transactions(&log.transactions, &mut buf).unwrap();
    assert_eq!(buf, fs::read(result.dir.join("transactions.csv")).unwrap());
    let mut seeds_buf = Vec::new();
    write_seed_file(&harden.pool, &mut seeds_buf).unwrap();
    assert_eq!(
        seeds_buf,
        fs::read(result.dir.join("hardened.seeds")).unwrap()
    );
}

#[test]
fn failures_are_stage_tagged_and_leave_no_output() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(tmp.path());
    cfg.output.dir = tmp.path().join("out");

    let mut bad = cfg.clone();
    bad.seeds = Some(tmp.path().join("missing.seeds"));
    assert_eq!(run_pipeline(&bad).unwrap_err().stage, Stage::Config);

    let mut empty = cfg.clone();
    empty.population.persons = 0;
    let err = run_pipeline(&empty).unwrap_err();
    assert!(
        matches!(err.stage, Stage::Config | Stage::Backbone),
        "{err}"
    );

    let mut few = cfg.clone();
    few.population.persons = 2;
    few.population.merchants = 1;
    few.backbone.days = 1;
    let err = run_pipeline(&few).unwrap_err();
    assert_eq!(err.stage, Stage::Monitor, "{err}");
    assert!(!cfg.output.dir.exists());
    assert!(!tmp.path().join(".out.partial").exists());

    fs::create_dir(&cfg.output.dir).unwrap();
    fs::write(cfg.output.dir.join("keep.txt"), "x").unwrap();
    assert_eq!(run_pipeline(&cfg).unwrap_err().stage, Stage::Config);
    assert_eq!(
        fs::read_to_string(cfg.output.dir.join("keep.txt")).unwrap(),
        "x"
    );
}

#[test]
fn csv_round_trip_is_field_exact() {
    let mut rng = StreamKey::root(21).rng();
    for _ in 0..3 {
        let log = random_log(&mut rng, 10_000);
        let mut buf = Vec::new();
        write_transactions(&log, &mut buf).unwrap();
        let back = read_transactions(buf.as_slice()).unwrap();
        assert_eq!(back.len(), log.len());
        for (a, b) in log.iter().zip(&back) {
            assert_eq!(a, b);
            assert_eq!(a.amount_paid.to_bits(), b.amount_paid.to_bits());
            assert_eq!(a.amount_received.to_bits(), b.amount_received.to_bits());
        }
        let mut again = Vec::new();
        write_transactions(&back, &mut again).unwrap();
        assert_eq!(buf, again);
        let text = String::from_utf8(buf).unwrap();
        assert!(!text.contains('\r') && !text.contains('"'));
        assert!(text
            .lines()
            .skip(1)
            .all(|l| l.ends_with(",0") || l.ends_with(",1")));
    }
}

#[test]
fn strict_reader_rejects_column_drift() {
    let mut rng = StreamKey::root(22).rng();
    let log = random_log(&mut rng, 50);
    let mut buf = Vec::new();
    write_transactions(&log, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    for row in [1usize, 10, 50] {
        let mut extra = lines.clone();
        let widened = format!("{},x", lines[row]);
        extra[row] = &widened;
        let err = read_transactions(extra.join("\n").as_bytes())
            .unwrap_err()
            .to_string();
        assert!(err.starts_with(&format!("line {}:", row + 1)), "{err}");
    }
    let mut swapped = lines.clone();
    let header = lines[0].replace(
        "Amount Paid,Payment Currency",
        "Payment Currency,Amount Paid",
    );
    swapped[0] = &header;
    assert!(read_transactions(swapped.join("\n").as_bytes()).is_err());
}

#[test]
fn splits_follow_time_order() {
    let mut rng = StreamKey::root(23).rng();
    for _ in 0..200 {
        let n = rng.random_range(10..400);
        let log = random_log(&mut rng, n);
        let s = make_splits(&log).unwrap();
        assert_eq!(s.val.len(), n * 2 / 10);
        assert_eq!(s.test.len(), n * 2 / 10);
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), n);
        assert_eq!(
            (s.train.start, s.train.end, s.val.end, s.test.end),
            (0, s.val.start, s.test.start, n)
        );
        let max_train = log[s.train.clone()]
            .iter()
            .map(|t| t.timestamp)
            .max()
            .unwrap();
        let min_val = log[s.val.clone()]
            .iter()
            .map(|t| t.timestamp)
            .min()
            .unwrap();
        let max_val = log[s.val.clone()]
            .iter()
            .map(|t| t.timestamp)
            .max()
            .unwrap();
        let min_test = log[s.test.clone()]
            .iter()
            .map(|t| t.timestamp)
            .min()
            .unwrap();
        assert!(max_train <= min_val && min_val <= min_test && max_val <= min_test);
    }
}

#[test]
fn random_split_files_partition_the_log() {
    let tmp = tempfile::tempdir().unwrap();
    let mut rng = StreamKey::root(24).rng();
    let log = random_log(&mut rng, 1000);
    amlsynth_core::pipeline::write_splits(&log, SplitMode::Random, 5, tmp.path()).unwrap();
    let mut all = Vec::new();
    for name in ["train", "val", "test"] {
        let part =
            read_transactions(fs::File::open(tmp.path().join(format!("{name}.csv"))).unwrap())
                .unwrap();
        assert!(part.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        all.extend(part);
    }
    assert_eq!(all.len(), 1000);
    let key = |t: &Transaction| format!("{t:?}");
    let mut a: Vec<String> = all.iter().map(key).collect();
    let mut b: Vec<String> = log.iter().map(key).collect();
    a.sort();
    b.sort();
    assert_eq!(a, b);
}

#[test]
fn summary_matches_recount() {
    let mut rng = StreamKey::root(25).rng();
    for _ in 0..100 {
        let n = rng.random_range(0..300);
        let mut log = random_log(&mut rng, n);
        for t in &mut log {
            t.timestamp += rng.random_range(0..86_400 * 3);
        }
        let s = summarize(&log);
        let keys: HashSet<String> = log
            .iter()
            .flat_map(|t| [t.from.key(), t.to.key()])
            .collect();
        let days: HashSet<i64> = log.iter().map(|t| t.timestamp.div_euclid(86_400)).collect();
        let span = match (days.iter().min(), days.iter().max()) {
            (Some(a), Some(b)) => (b - a + 1) as u64,
            _ => 0,
        };
        let lab = log.iter().filter(|t| t.is_laundering).count();
        assert_eq!(
            (s.days, s.accounts, s.transactions, s.laundering),
            (span, keys.len(), n, lab)
        );
        match s.one_per_n {
            Some(x) => assert_eq!(x, n as f64 / lab as f64),
            None => assert_eq!(lab, 0),
        }
    }
}

fn table(rng: &mut SimRng, log: &[Transaction], a: usize) -> AttributeTable {
    let names = (0..a).map(|i| format!("attr{i}")).collect();
    let mut rows = HashMap::new();
    for t in log {
        for acc in [&t.from, &t.to] {
            if rng.random_bool(0.9) {
                rows.entry(acc.clone()).or_insert_with(|| {
                    (0..a)
                        .map(|i| format!("v{i}_{}", rng.random_range(0..5)))
                        .collect()
                });
            }
        }
    }
    AttributeTable { names, rows }
}

fn export(
    log: &[Transaction],
    t: &AttributeTable,
    with_profiles: bool,
    fraction: f64,
) -> Vec<Vec<String>> {
    let mut buf = Vec::new();
    let opts = FeatureExport {
        with_profiles,
        profile_fraction: fraction,
        ..FeatureExport::default()
    };
    export_features(log, t, &opts, &mut buf).unwrap();
    String::from_utf8(buf)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn feature_columns_scale_with_profile_fraction() {
    let mut rng = StreamKey::root(26).rng();
    let log = random_log(&mut rng, 40);
    let base = FEATURE_NAMES.len() + 2;
    for a in 0..=10usize {
        let t = table(&mut rng, &log, a);
        let blind = export(&log, &t, false, 1.0);
        assert_eq!(blind[0].len(), base);
        assert_eq!(export(&log, &t, true, 0.0), blind);
        for step in 0..=20usize {
            let fraction = step as f64 / 20.0;
            let k = (step * a).div_ceil(20);
            let rows = export(&log, &t, true, fraction);
            assert_eq!(rows.len(), log.len() + 1);
            assert!(
                rows.iter().all(|r| r.len() == base + 2 * k),
                "A={a} f={fraction}"
            );
            let expect: Vec<String> = ["sender", "receiver"]
                .iter()
                .flat_map(|side| (0..k).map(move |i| format!("{side}_attr{i}")))
                .collect();
            assert_eq!(&rows[0][base - 1..base - 1 + 2 * k], &expect[..]);
            for (row, tx) in rows[1..].iter().zip(&log) {
                let sender = t
                    .rows
                    .get(&tx.from)
                    .map_or(vec![String::new(); k], |v| v[..k].to_vec());
                assert_eq!(&row[base - 1..base - 1 + k], &sender[..]);
                assert_eq!(
                    row.last().unwrap(),
                    if tx.is_laundering { "1" } else { "0" }
                );
            }
        }
        assert_eq!(export(&log, &t, true, 1.0)[0].len(), base + 2 * a);
    }
}
