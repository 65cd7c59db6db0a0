use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use amlsynth_core::anomaly::parse_seed_file;
use amlsynth_core::embedder::write_reports;
use amlsynth_core::model::{Horizon, TransactionLog};
use amlsynth_core::pipeline::{
    export_csv, export_features, import_csv, run_analyze, run_backbone, run_embed, run_harden,
    run_monitor, run_pipeline, stage_seed, summarize, write_harden_outputs, write_profiles,
    write_splits, AttributeTable, FeatureExport, PipelineConfig, PipelineError, SplitMode, Stage,
    StageContext,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "amlsynth",
    version,
    about = "Synthetic transaction graphs with embedded laundering clusters"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Pipeline configuration (TOML); defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the configured one.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Temporal,
    Random,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the normal backbone: transactions.csv, persons.csv, merchants.csv.
    Generate(Common),
    /// Train the reference monitor on a backbone and harden the seed clusters.
    Harden {
        #[command(flatten)]
        common: Common,
        /// Backbone transactions.
        #[arg(long)]
        input: PathBuf,
    },
    /// Embed a cluster file into a backbone up to the target prevalence.
    Embed {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        /// Cluster file, e.g. hardened.seeds from `harden`.
        #[arg(long)]
        clusters: PathBuf,
    },
    /// Write daily graph invariants and tail fits for a transaction file.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// Write train/val/test files at 6:2:2.
    Split {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "temporal")]
        mode: Mode,
    },
    /// Print dataset summary statistics; also writes summary.csv with --out.
    Summarize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// Write per-transaction features with optional profile columns.
    ExportFeatures {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        /// persons.csv from `generate`.
        #[arg(long)]
        persons: Option<PathBuf>,
        /// merchants.csv from `generate`.
        #[arg(long)]
        merchants: Option<PathBuf>,
        /// Share of profile attributes to include, in [0, 1].
        #[arg(long, default_value_t = 1.0)]
        fraction: f64,
        #[arg(long)]
        no_profiles: bool,
    },
    /// Run every stage and write the complete dataset.
    Run(Common),
}

fn load_config(c: &Common) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &c.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.output.dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &PipelineConfig) -> Result<&Path, PipelineError> {
    fs::create_dir_all(&cfg.output.dir).stage(Stage::Export)?;
    Ok(&cfg.output.dir)
}

fn read_log(path: &Path, stage: Stage) -> Result<TransactionLog, PipelineError> {
    import_csv(path).map_err(|e| PipelineError::new(stage, format!("{}: {e}", path.display())))
}

fn read_table(path: &Path) -> Result<AttributeTable, PipelineError> {
    AttributeTable::read(BufReader::new(File::open(path).stage(Stage::Export)?))
        .map_err(|e| PipelineError::new(Stage::Export, format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, PipelineError> {
    Ok(BufWriter::new(File::create(path).stage(Stage::Export)?))
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Generate(c) => {
            let cfg = load_config(&c)?;
            let out = run_backbone(&cfg)?;
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            let dir = out_dir(&cfg)?;
            export_csv(&out.log, &dir.join("transactions.csv")).stage(Stage::Export)?;
            write_profiles(&out.log.profiles, dir).stage(Stage::Export)?;
            println!(
                "{} transactions, {} skipped events",
                out.log.len(),
                out.skipped_events
            );
        }
        Command::Harden { common, input } => {
            let cfg = load_config(&common)?;
            let seeds = cfg.load_seeds()?;
            let log = read_log(&input, Stage::Monitor)?;
            let monitor = run_monitor(&cfg, &log.transactions, &seeds)?;
            let harden = run_harden(
                &cfg,
                &log.transactions,
                &monitor.backbone_scores,
                &monitor.training.model,
                &seeds,
            )?;
            write_harden_outputs(out_dir(&cfg)?, &monitor.training.model, &harden)?;
            for h in &harden.outcome.hardened {
                println!("{}: S {:.4} -> {:.4}", h.cluster.name, h.initial_s, h.s);
            }
            println!("{} clusters in the pool", harden.pool.len());
        }
        Command::Embed {
            common,
            input,
            clusters,
        } => {
            let cfg = load_config(&common)?;
            let text = fs::read_to_string(&clusters).stage(Stage::Embed)?;
            let pool = parse_seed_file(&text).stage(Stage::Embed)?;
            let log = read_log(&input, Stage::Embed)?;
            let (log, reports) = run_embed(&cfg, &log, &pool)?;
            let dir = out_dir(&cfg)?;
            export_csv(&log, &dir.join("transactions.csv")).stage(Stage::Export)?;
            let mut w = create(&dir.join("embedding_reports.csv"))?;
            write_reports(&reports, &mut w).stage(Stage::Export)?;
            w.flush().stage(Stage::Export)?;
            let accepted = reports.iter().filter(|r| r.accepted).count();
            println!(
                "{accepted} of {} instances embedded, {} laundering rows",
                reports.len(),
                log.laundering_count()
            );
        }
        Command::Analyze { common, input } => {
            let cfg = load_config(&common)?;
            let log = read_log(&input, Stage::Analyze)?;
            let horizon = if common.config.is_some() {
                cfg.horizon()
            } else {
                Horizon::covering(&log)
                    .ok_or_else(|| PipelineError::new(Stage::Analyze, "empty log"))?
            };
            let report = run_analyze(&log, &horizon)?;
            report
                .write_all(out_dir(&cfg)?, "generated")
                .stage(Stage::Export)?;
            for (name, m) in report.summary.rows() {
                println!("{name}: {:.4} ± {:.4}", m.mean, m.std);
            }
        }
        Command::Split {
            common,
            input,
            mode,
        } => {
            let cfg = load_config(&common)?;
            let log = read_log(&input, Stage::Export)?;
            let mode = match mode {
                Mode::Temporal => SplitMode::Temporal,
                Mode::Random => SplitMode::Random,
            };
            let s = write_splits(
                &log.transactions,
                mode,
                stage_seed(cfg.seed, "split"),
                out_dir(&cfg)?,
            )
            .stage(Stage::Export)?;
            println!(
                "train {}, val {}, test {}",
                s.train.len(),
                s.val.len(),
                s.test.len()
            );
        }
        Command::Summarize { common, input } => {
            let log = read_log(&input, Stage::Export)?;
            let summary = summarize(&log.transactions);
            println!("{summary}");
            if common.out.is_some() {
                let cfg = load_config(&common)?;
                let mut w = create(&out_dir(&cfg)?.join("summary.csv"))?;
                summary.write_csv(&mut w).stage(Stage::Export)?;
                w.flush().stage(Stage::Export)?;
            }
        }
        Command::ExportFeatures {
            common,
            input,
            persons,
            merchants,
            fraction,
            no_profiles,
        } => {
            let cfg = load_config(&common)?;
            let log = read_log(&input, Stage::Export)?;
            let mut table = match &persons {
                Some(p) => read_table(p)?,
                None => AttributeTable::default(),
            };
            if let Some(m) = &merchants {
                table.absorb(&read_table(m)?);
            }
            let opts = FeatureExport {
                with_profiles: !no_profiles,
                profile_fraction: fraction,
                features: cfg.output.feature_export.features,
            };
            let mut w = create(&out_dir(&cfg)?.join("features.csv"))?;
            export_features(&log.transactions, &table, &opts, &mut w).stage(Stage::Export)?;
            w.flush().stage(Stage::Export)?;
        }
        Command::Run(c) => {
            let cfg = load_config(&c)?;
            let result = run_pipeline(&cfg)?;
            for w in &result.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", result.summary);
            println!("written to {}", result.dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.stage.exit_code() as u8)
        }
    }
}
