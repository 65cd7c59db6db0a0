//! End-to-end orchestration: configuration, stage runners and dataset output.
//!
//! Every stage draws its randomness from `stage_seed(seed, <stage>)`, so a
//! stage run on its own with the same inputs reproduces the pipeline's result.

mod dataset;
mod io;

use std::error::Error as StdError;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{
    export_features, feature_header, make_splits, profile_attribute_count, split_rows, summarize,
    write_splits, DatasetSplit, FeatureExport, SplitMode, Summary,
};
pub use io::{
    export_csv, format_timestamp, import_csv, parse_timestamp, read_transactions, write_profiles,
    write_transactions, AttributeTable, DataError, TRANSACTION_HEADER,
};

use crate::anomaly::{
    builtin_seeds, cluster_transactions, parse_seed_file, write_seed_file, IllicitCluster,
};
use crate::backbone::{generate_backbone, BackboneConfig, BackboneOutput};
use crate::embedder::{embed_all, write_reports, EmbedConfig, EmbeddingReport};
use crate::fidelity::{fidelity_report, FidelityReport};
use crate::grpo::{
    run_grpo, sample_trajectories, write_training_log, EvalContext, GrpoConfig, GrpoOutcome,
    Hardened,
};
use crate::model::{AccountRef, Horizon, PopulationConfig, Transaction, TransactionLog};
use crate::monitor::{
    extract_all_features, train_monitor, CompositeWeights, MonitorModel, Scorer, TrainConfig,
    Training,
};
use crate::rng::StreamKey;

/// Bank identifier of the seed copies the reference monitor is trained on.
pub const SEED_COPY_BANK: &str = "SEED";

pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    StreamKey::root(seed).named(stage).raw()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Backbone,
    Monitor,
    Harden,
    Embed,
    Analyze,
    Export,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Backbone => "backbone",
            Stage::Monitor => "monitor",
            Stage::Harden => "harden",
            Stage::Embed => "embed",
            Stage::Analyze => "analyze",
            Stage::Export => "export",
        }
    }

    /// Process exit code for a failure in this stage.
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config => 2,
            Stage::Backbone => 3,
            Stage::Monitor => 4,
            Stage::Harden => 5,
            Stage::Embed => 6,
            Stage::Analyze => 7,
            Stage::Export => 8,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
#[error("{stage} stage failed: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    pub source: Box<dyn StdError + Send + Sync + 'static>,
}

impl PipelineError {
    pub fn new(stage: Stage, source: impl Into<Box<dyn StdError + Send + Sync + 'static>>) -> Self {
        PipelineError {
            stage,
            source: source.into(),
        }
    }
}

/// Tags the error of a fallible stage step.
pub trait StageContext<T> {
    fn stage(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: Into<Box<dyn StdError + Send + Sync + 'static>>> StageContext<T> for Result<T, E> {
    fn stage(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::new(stage, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorStageConfig {
    pub train: TrainConfig,
    /// Copies of each seed cluster, on fresh accounts, used as positives.
    pub seed_copies: usize,
    pub weights: CompositeWeights,
}

impl Default for MonitorStageConfig {
    fn default() -> Self {
        MonitorStageConfig {
            train: TrainConfig::default(),
            seed_copies: 40,
            weights: CompositeWeights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HardenStageConfig {
    pub grpo: GrpoConfig,
    /// The evaluation slice is the last `context_days` of the backbone ...
    pub context_days: u32,
    /// ... capped to its latest `context_max` transactions.
    pub context_max: usize,
    /// Extra edited variants per seed drawn from the trained policy.
    pub variants_per_seed: usize,
}

impl Default for HardenStageConfig {
    fn default() -> Self {
        HardenStageConfig {
            grpo: GrpoConfig::default(),
            context_days: 2,
            context_max: 5000,
            variants_per_seed: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingStageConfig {
    pub target_prevalence: f64,
    pub params: EmbedConfig,
}

impl Default for EmbeddingStageConfig {
    fn default() -> Self {
        EmbeddingStageConfig {
            target_prevalence: 0.00153,
            params: EmbedConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub split: SplitMode,
    /// Also write `features.csv`.
    pub features: bool,
    pub feature_export: FeatureExport,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            split: SplitMode::Temporal,
            features: false,
            feature_export: FeatureExport::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub population: PopulationConfig,
    pub backbone: BackboneConfig,
    /// Seed-cluster file; the built-in templates when absent.
    pub seeds: Option<PathBuf>,
    pub monitor: MonitorStageConfig,
    pub harden: HardenStageConfig,
    pub embedding: EmbeddingStageConfig,
    pub output: OutputConfig,
}

fn config_err(msg: impl Into<String>) -> PipelineError {
    PipelineError::new(Stage::Config, msg.into())
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<PipelineConfig, PipelineError> {
        toml::from_str(text).stage(Stage::Config)
    }

    pub fn load(path: &Path) -> Result<PipelineConfig, PipelineError> {
        let text =
            fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.population.validate().stage(Stage::Config)?;
        self.backbone.validate().stage(Stage::Config)?;
        self.monitor.train.validate().stage(Stage::Config)?;
        self.monitor.weights.validate().stage(Stage::Config)?;
        if self.monitor.seed_copies < 2 {
            return Err(config_err("monitor.seed_copies must be at least 2"));
        }
        self.harden.grpo.validate().stage(Stage::Config)?;
        if self.harden.context_days == 0 || self.harden.context_max == 0 {
            return Err(config_err(
                "harden.context_days and harden.context_max must be positive",
            ));
        }
        self.embedding.params.validate().stage(Stage::Config)?;
        let p = self.embedding.target_prevalence;
        if !(p > 0.0 && p <= 0.05) {
            return Err(config_err(format!(
                "target prevalence {p} is outside (0, 0.05]"
            )));
        }
        let f = self.output.feature_export.profile_fraction;
        if !(0.0..=1.0).contains(&f) {
            return Err(config_err(format!(
                "profile fraction {f} is outside [0, 1]"
            )));
        }
        Ok(())
    }

    pub fn horizon(&self) -> Horizon {
        self.backbone.horizon()
    }

    pub fn load_seeds(&self) -> Result<Vec<IllicitCluster>, PipelineError> {
        match &self.seeds {
            None => Ok(builtin_seeds()),
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
                let seeds = parse_seed_file(&text).stage(Stage::Config)?;
                if seeds.is_empty() {
                    return Err(config_err(format!("{} holds no clusters", path.display())));
                }
                Ok(seeds)
            }
        }
    }
}

pub fn run_backbone(cfg: &PipelineConfig) -> Result<BackboneOutput, PipelineError> {
    generate_backbone(
        &cfg.population,
        &cfg.backbone,
        stage_seed(cfg.seed, "backbone"),
    )
    .stage(Stage::Backbone)
}

/// `copies` instances of each seed on fresh `SEED` accounts at random anchors
/// inside the horizon, time-sorted.
pub fn seed_copies(
    seeds: &[IllicitCluster],
    copies: usize,
    horizon: &Horizon,
    cfg: &PipelineConfig,
    seed: u64,
) -> Vec<Transaction> {
    let mut rng = StreamKey::root(seed).named("seed-copies").rng();
    let mut out = Vec::new();
    for (ci, c) in seeds.iter().enumerate() {
        let (first, last) = c.time_span().unwrap_or((0, 0));
        let lo = horizon.start - first;
        let hi = (horizon.end() - 1 - last).max(lo);
        for k in 0..copies {
            let anchor = rng.random_range(lo..=hi);
            out.extend(cluster_transactions(
                c,
                anchor,
                |r| {
                    AccountRef::new(SEED_COPY_BANK, &format!("C{ci}K{k}R{}", r.0))
                        .expect("valid account id")
                },
                cfg.embedding.params.payment_format,
            ));
        }
    }
    out.sort_by_key(|t| t.timestamp);
    out
}

pub struct MonitorStage {
    pub training: Training,
    /// Scores of the backbone transactions, in log order.
    pub backbone_scores: Vec<f64>,
}

/// Trains the reference monitor on the backbone (negatives) and seed copies
/// (positives). Copies use their own accounts, so backbone features are the
/// same as for the backbone alone and are computed once.
pub fn run_monitor(
    cfg: &PipelineConfig,
    backbone: &[Transaction],
    seeds: &[IllicitCluster],
) -> Result<MonitorStage, PipelineError> {
    let seed = stage_seed(cfg.seed, "monitor");
    let copies = seed_copies(seeds, cfg.monitor.seed_copies, &cfg.horizon(), cfg, seed);
    let fcfg = &cfg.monitor.train.features;
    let mut features = extract_all_features(backbone, fcfg);
    features.extend(extract_all_features(&copies, fcfg));
    let labels: Vec<bool> = backbone
        .iter()
        .chain(&copies)
        .map(|t| t.is_laundering)
        .collect();
    let training =
        train_monitor(&features, &labels, &cfg.monitor.train, seed).stage(Stage::Monitor)?;
    let backbone_scores = training.model.score_features(&features[..backbone.len()]);
    Ok(MonitorStage {
        training,
        backbone_scores,
    })
}

/// Start of the evaluation slice within a time-sorted backbone.
pub fn context_start(
    backbone: &[Transaction],
    horizon: &Horizon,
    cfg: &HardenStageConfig,
) -> usize {
    let cut = horizon.end() - cfg.context_days as i64 * Horizon::SECONDS_PER_DAY;
    let by_time = backbone.partition_point(|t| t.timestamp < cut);
    by_time.max(backbone.len().saturating_sub(cfg.context_max))
}

pub struct HardenStage {
    pub outcome: GrpoOutcome,
    /// Hardened clusters followed by the extra policy variants.
    pub pool: Vec<IllicitCluster>,
}

/// Runs GRPO against the monitor on the backbone's evaluation slice, then
/// draws one more group per seed from the trained policy and keeps the
/// distinct variants that score no higher than their seed.
pub fn run_harden<S: Scorer + ?Sized>(
    cfg: &PipelineConfig,
    backbone: &[Transaction],
    backbone_scores: &[f64],
    monitor: &S,
    seeds: &[IllicitCluster],
) -> Result<HardenStage, PipelineError> {
    let h = &cfg.harden;
    let start = context_start(backbone, &cfg.horizon(), h);
    if start >= backbone.len() {
        return Err(PipelineError::new(
            Stage::Harden,
            "the evaluation slice is empty",
        ));
    }
    let base = backbone[start..].to_vec();
    let anchor = base[0].timestamp;
    let ctx = EvalContext::with_scores(
        monitor,
        base,
        backbone_scores[start..].to_vec(),
        anchor,
        cfg.embedding.params.payment_format,
        cfg.monitor.weights,
    )
    .stage(Stage::Harden)?;
    let seed = stage_seed(cfg.seed, "harden");
    let outcome = run_grpo(seeds, &ctx, &h.grpo, seed).stage(Stage::Harden)?;
    let mut pool: Vec<IllicitCluster> =
        outcome.hardened.iter().map(|x| x.cluster.clone()).collect();
    let key = StreamKey::root(seed).named("variants");
    for (ci, Hardened { initial_s, .. }) in outcome.hardened.iter().enumerate() {
        let mut kept = 0;
        let mut round = 0u64;
        while kept < h.variants_per_seed && round < 4 {
            let trajs = sample_trajectories(
                &outcome.policy,
                &seeds[ci],
                &ctx,
                &h.grpo,
                key.child(ci as u64).child(round),
            )
            .stage(Stage::Harden)?;
            round += 1;
            for t in trajs {
                let Some((s, mut v)) = t.best else { continue };
                if kept >= h.variants_per_seed || s > *initial_s {
                    continue;
                }
                v.name = seeds[ci].name.clone();
                if pool
                    .iter()
                    .any(|p| p.nodes == v.nodes && p.edges == v.edges)
                {
                    continue;
                }
                kept += 1;
                v.name = format!("{}-v{kept}", seeds[ci].name);
                pool.push(v);
            }
        }
    }
    Ok(HardenStage { outcome, pool })
}

pub fn run_embed(
    cfg: &PipelineConfig,
    backbone: &TransactionLog,
    pool: &[IllicitCluster],
) -> Result<(TransactionLog, Vec<EmbeddingReport>), PipelineError> {
    embed_all(
        pool,
        backbone,
        &cfg.horizon(),
        cfg.embedding.target_prevalence,
        &cfg.embedding.params,
        stage_seed(cfg.seed, "embed"),
    )
    .stage(Stage::Embed)
}

pub fn run_analyze(
    log: &TransactionLog,
    horizon: &Horizon,
) -> Result<FidelityReport, PipelineError> {
    fidelity_report(log, horizon).stage(Stage::Analyze)
}

fn create(path: &Path) -> Result<BufWriter<File>, PipelineError> {
    Ok(BufWriter::new(File::create(path).stage(Stage::Export)?))
}

fn finish(mut w: BufWriter<File>) -> Result<(), PipelineError> {
    w.flush().stage(Stage::Export)
}

/// Writes the monitor, policy, training log and cluster pool into `dir`.
pub fn write_harden_outputs(
    dir: &Path,
    model: &MonitorModel,
    harden: &HardenStage,
) -> Result<(), PipelineError> {
    let mut w = create(&dir.join("monitor.txt"))?;
    model.write(&mut w).stage(Stage::Export)?;
    finish(w)?;
    let mut w = create(&dir.join("policy.txt"))?;
    harden.outcome.policy.write(&mut w).stage(Stage::Export)?;
    finish(w)?;
    let mut w = create(&dir.join("grpo_log.csv"))?;
    write_training_log(&harden.outcome.log, &mut w).stage(Stage::Export)?;
    finish(w)?;
    let mut w = create(&dir.join("hardened.seeds"))?;
    write_seed_file(&harden.pool, &mut w).stage(Stage::Export)?;
    finish(w)?;
    let mut w = create(&dir.join("hardening.csv"))?;
    writeln!(w, "cluster,initial_s,hardened_s").stage(Stage::Export)?;
    for h in &harden.outcome.hardened {
        writeln!(w, "{},{},{}", h.cluster.name, h.initial_s, h.s).stage(Stage::Export)?;
    }
    finish(w)
}

/// Writes the dataset files: transactions, profiles, splits, summary and,
/// when configured, the feature table.
pub fn write_dataset(
    dir: &Path,
    log: &TransactionLog,
    cfg: &PipelineConfig,
) -> Result<Summary, PipelineError> {
    export_csv(log, &dir.join("transactions.csv")).stage(Stage::Export)?;
    write_profiles(&log.profiles, dir).stage(Stage::Export)?;
    let splits = dir.join("splits");
    fs::create_dir_all(&splits).stage(Stage::Export)?;
    write_splits(
        &log.transactions,
        cfg.output.split,
        stage_seed(cfg.seed, "split"),
        &splits,
    )
    .stage(Stage::Export)?;
    let summary = summarize(&log.transactions);
    let mut w = create(&dir.join("summary.csv"))?;
    summary.write_csv(&mut w).stage(Stage::Export)?;
    finish(w)?;
    if cfg.output.features {
        let table = AttributeTable::from_profiles(&log.profiles);
        let mut w = create(&dir.join("features.csv"))?;
        export_features(
            &log.transactions,
            &table,
            &cfg.output.feature_export,
            &mut w,
        )
        .stage(Stage::Export)?;
        finish(w)?;
    }
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub dir: PathBuf,
    pub summary: Summary,
    pub hardened: Vec<Hardened>,
    pub reports: Vec<EmbeddingReport>,
    pub warnings: Vec<String>,
}

fn staging_dir(out: &Path) -> PathBuf {
    let name = out
        .file_name()
        .map_or_else(|| "out".into(), |n| n.to_string_lossy().into_owned());
    out.with_file_name(format!(".{name}.partial"))
}

/// Runs every stage and writes all outputs to `cfg.output.dir`. Files are
/// staged in a sibling directory that is renamed into place on success and
/// removed on failure. The output directory must be absent or empty.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineResult, PipelineError> {
    cfg.validate()?;
    let out = cfg.output.dir.clone();
    if out.exists() && fs::read_dir(&out).stage(Stage::Config)?.next().is_some() {
        return Err(config_err(format!(
            "output directory {} is not empty",
            out.display()
        )));
    }
    let staging = staging_dir(&out);
    if staging.exists() {
        fs::remove_dir_all(&staging).stage(Stage::Export)?;
    }
    fs::create_dir_all(&staging).stage(Stage::Export)?;
    match run_stages(cfg, &staging) {
        Ok(mut result) => {
            if out.exists() {
                fs::remove_dir(&out).stage(Stage::Export)?;
            }
            fs::rename(&staging, &out).stage(Stage::Export)?;
            result.dir = out;
            Ok(result)
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            Err(e)
        }
    }
}

fn run_stages(cfg: &PipelineConfig, dir: &Path) -> Result<PipelineResult, PipelineError> {
    let seeds = cfg.load_seeds()?;
    let mut echo = cfg.clone();
    echo.output.dir = PathBuf::from(".");
    fs::write(dir.join("config.toml"), echo.to_toml()).stage(Stage::Export)?;
    let backbone = run_backbone(cfg)?;
    let monitor = run_monitor(cfg, &backbone.log.transactions, &seeds)?;
    let harden = run_harden(
        cfg,
        &backbone.log.transactions,
        &monitor.backbone_scores,
        &monitor.training.model,
        &seeds,
    )?;
    write_harden_outputs(dir, &monitor.training.model, &harden)?;
    drop(monitor);
    let (log, reports) = run_embed(cfg, &backbone.log, &harden.pool)?;
    drop(backbone.log);
    let mut w = create(&dir.join("embedding_reports.csv"))?;
    write_reports(&reports, &mut w).stage(Stage::Export)?;
    finish(w)?;
    let report = run_analyze(&log, &cfg.horizon())?;
    report.write_all(dir, "generated").stage(Stage::Export)?;
    let summary = write_dataset(dir, &log, cfg)?;
    Ok(PipelineResult {
        dir: dir.to_path_buf(),
        summary,
        hardened: harden.outcome.hardened,
        reports,
        warnings: backbone.warnings,
    })
}
