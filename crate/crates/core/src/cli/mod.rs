//! Command-line front end.
//!
//! Exit codes: 0 success, 1 invalid invocation or configuration (nothing is
//! written), 2 failure while running. Failures print one line to stderr:
//! `error kind=<kind> exit=<code> message=<JSON string>`.
//!
//! Every artifact directory receives `resolved_config.toml`. The
//! `ROAR_REPORT_DIR` environment variable overrides `paths.report_dir`.

mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::{validate_config, AblateConfig, DataConfig, PathsConfig, RunConfig, StressConfig};

use crate::error::{Result, RoarError};
use crate::fieldsim::{generate_episodes, read_dataset, read_manifest, write_dataset, Episode, MANIFEST_FILE};
use crate::fusion::{RoarModel, Variant};
use crate::numerics::{Checkpoint, ParamStore};
use crate::pipeline::{
    clear_world, model_for, predict_episodes, run_ablation, score_predictions, stress_summary, train, AblationPlan,
    EpochLog, TrainConfig,
};
use crate::util::{sha256_hex, write_atomic, write_atomic_with};

pub const REPORT_DIR_ENV: &str = "ROAR_REPORT_DIR";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";

#[derive(Parser, Debug)]
#[command(
    name = "roar",
    about = "Proactive failure prediction with occlusion-aware recurrent fusion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// TOML config with dotted keys; defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// `key=value` override, repeatable, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// World seed for gen-data, training seed otherwise.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of LiDAR beams.
    #[arg(long)]
    beams: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate episodes into the dataset directory.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Train one variant on the training split.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Score a checkpoint on the held-out split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and score every variant on every seed.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated variant names.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<Variant>,
        /// Comma-separated training seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Inject total occlusion into clear episodes and report false positives.
    Stress {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated numbers of occluded final frames.
        #[arg(long, value_delimiter = ',')]
        k: Vec<usize>,
    },
}

/// A validated command ready to run.
#[derive(Debug)]
pub struct Prepared {
    pub config: RunConfig,
    action: Action,
}

#[derive(Debug)]
enum Action {
    GenData,
    Train,
    Eval { checkpoint: PathBuf },
    Ablate,
    Stress { checkpoint: PathBuf },
}

fn run_dir(config: &RunConfig, variant: Variant, seed: u64) -> PathBuf {
    config.paths.checkpoint_dir.join(format!("{variant}-seed{seed}"))
}

impl Common {
    fn resolve(&self, report_override: Option<&Path>, extra: Vec<String>) -> Result<RunConfig> {
        let text = match &self.config {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| RoarError::Config(vec![format!("config {}: {e}", p.display())]))?,
            None => String::new(),
        };
        let mut overrides = self.overrides.clone();
        if let Some(b) = self.beams {
            overrides.push(format!("world.lidar_beams={b}"));
        }
        overrides.extend(extra);
        if let Some(dir) = report_override {
            let quoted = toml::Value::String(dir.to_string_lossy().into_owned()).to_string();
            overrides.push(format!("paths.report_dir={quoted}"));
        }
        validate_config(&text, &overrides)
    }
}

fn require_dataset(config: &mut RunConfig) -> Result<()> {
    let dir = &config.paths.dataset_dir;
    if !dir.join(MANIFEST_FILE).is_file() {
        return Err(RoarError::Config(vec![format!(
            "dataset {} not found (run gen-data first)",
            dir.display()
        )]));
    }
    config.world = read_manifest(dir)
        .map_err(|e| RoarError::Config(vec![e.to_string()]))?
        .config;
    Ok(())
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(RoarError::Config(vec![format!("{what} {} not found", path.display())]))
    }
}

fn seed_override(common: &Common, key: &str) -> Vec<String> {
    common.seed.map(|s| format!("{key}={s}")).into_iter().collect()
}

fn variant_override(v: Option<Variant>) -> Vec<String> {
    v.map(|v| format!("train.variant={v}")).into_iter().collect()
}

/// Parses arguments and validates everything that can be checked up front.
pub fn prepare<I, T>(argv: I, report_override: Option<&Path>) -> Result<Prepared>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| RoarError::Config(vec![config::one_line(&e.to_string())]))?;
    let (config, action) = match cli.command {
        Command::GenData { common, episodes } => {
            let mut extra = seed_override(&common, "world.rng_seed");
            extra.extend(episodes.map(|n| format!("data.episodes={n}")));
            (common.resolve(report_override, extra)?, Action::GenData)
        }
        Command::Train { common, variant } => {
            let mut extra = seed_override(&common, "train.seed");
            extra.extend(variant_override(variant));
            let mut c = common.resolve(report_override, extra)?;
            require_dataset(&mut c)?;
            (c, Action::Train)
        }
        Command::Eval {
            common,
            variant,
            checkpoint,
        } => {
            let mut extra = seed_override(&common, "train.seed");
            extra.extend(variant_override(variant));
            let mut c = common.resolve(report_override, extra)?;
            require_dataset(&mut c)?;
            let ckpt = checkpoint.unwrap_or_else(|| run_dir(&c, c.train.variant, c.train.seed).join("final.ckpt"));
            require_file(&ckpt, "checkpoint")?;
            (c, Action::Eval { checkpoint: ckpt })
        }
        Command::Ablate {
            common,
            variants,
            seeds,
        } => {
            let mut extra = Vec::new();
            if !variants.is_empty() {
                let names: Vec<String> = variants.iter().map(|v| format!("{:?}", v.name())).collect();
                extra.push(format!("ablate.variants=[{}]", names.join(",")));
            }
            if !seeds.is_empty() {
                let s: Vec<String> = seeds.iter().map(u64::to_string).collect();
                extra.push(format!("ablate.seeds=[{}]", s.join(",")));
            }
            let mut c = common.resolve(report_override, extra)?;
            require_dataset(&mut c)?;
            (c, Action::Ablate)
        }
        Command::Stress {
            common,
            variant,
            checkpoint,
            k,
        } => {
            let mut extra = seed_override(&common, "train.seed");
            extra.extend(variant_override(variant));
            if !k.is_empty() {
                let s: Vec<String> = k.iter().map(usize::to_string).collect();
                extra.push(format!("stress.lengths=[{}]", s.join(",")));
            }
            let c = common.resolve(report_override, extra)?;
            let ckpt = checkpoint.unwrap_or_else(|| run_dir(&c, c.train.variant, c.train.seed).join("final.ckpt"));
            require_file(&ckpt, "checkpoint")?;
            (c, Action::Stress { checkpoint: ckpt })
        }
    };
    if matches!(action, Action::GenData) {
        config.world.validate()?;
    }
    Ok(Prepared { config, action })
}

fn echo_config(dir: &Path, config: &RunConfig) -> Result<()> {
    write_atomic(&dir.join(RESOLVED_CONFIG_FILE), config.to_toml().as_bytes())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| RoarError::format("report", e.to_string()))?;
    write_atomic(path, text.as_bytes())
}

fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<()> {
    write_atomic_with(path, |w| {
        for item in items {
            serde_json::to_writer(&mut *w, item)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

/// SHA-256 of the resolved config with output locations left out.
fn config_hash(config: &RunConfig) -> String {
    let located = RunConfig {
        paths: PathsConfig::default(),
        ..config.clone()
    };
    sha256_hex(located.to_toml().as_bytes())
}

fn split(config: &RunConfig, episodes: Vec<Episode>) -> (Vec<Episode>, Vec<Episode>) {
    let n = config.data.train_count(episodes.len());
    let mut train = episodes;
    let test = train.split_off(n);
    (train, test)
}

fn load_model(config: &RunConfig, path: &Path) -> Result<(RoarModel, ParamStore)> {
    let ckpt = Checkpoint::load(path)?;
    let probe = Episode {
        frames: Vec::new(),
        config: config.world.clone(),
        seed: 0,
    };
    let model = model_for(&config.train, std::slice::from_ref(&probe))?;
    let expected = model.init(0)?;
    let shapes = |s: &ParamStore| {
        s.iter()
            .map(|(n, t)| (n.clone(), t.shape().to_vec()))
            .collect::<Vec<_>>()
    };
    if shapes(&expected) != shapes(&ckpt.params) {
        return Err(RoarError::Precondition(format!(
            "checkpoint {} does not match variant {} with the configured world",
            path.display(),
            config.train.variant
        )));
    }
    Ok((model, ckpt.params))
}

fn progress(e: &EpochLog) -> Result<()> {
    eprintln!(
        "{} seed {} epoch {}: total {:.5} ({:.1}s)",
        e.variant, e.seed, e.epoch, e.loss.total, e.wall_seconds
    );
    Ok(())
}

fn train_one(config: &RunConfig, train_set: &[Episode]) -> Result<PathBuf> {
    let dir = run_dir(config, config.train.variant, config.train.seed);
    let mut log = Vec::new();
    let outcome = train(&config.train, train_set, &mut |e| {
        log.push(e.clone());
        progress(e)
    })?;
    let hash = config_hash(config);
    Checkpoint {
        config_hash: hash.clone(),
        params: outcome.final_params,
        optimizer: Some(outcome.optimizer),
    }
    .save(&dir.join("final.ckpt"))?;
    Checkpoint {
        config_hash: hash,
        params: outcome.best_params,
        optimizer: None,
    }
    .save(&dir.join("best.ckpt"))?;
    write_jsonl(&dir.join("epochs.jsonl"), &log)?;
    echo_config(&dir, config)?;
    Ok(dir)
}

fn stress_episodes(config: &RunConfig) -> Result<Vec<Episode>> {
    let world = crate::fieldsim::WorldConfig {
        rng_seed: config.stress.seed,
        ..clear_world(&config.world)
    };
    generate_episodes(&world, config.stress.episodes)
}

/// Runs a prepared command.
pub fn execute(p: &Prepared) -> Result<()> {
    let c = &p.config;
    match &p.action {
        Action::GenData => {
            let episodes = generate_episodes(&c.world, c.data.episodes)?;
            write_dataset(&c.paths.dataset_dir, &episodes)?;
            echo_config(&c.paths.dataset_dir, c)?;
            eprintln!("wrote {} episodes to {}", episodes.len(), c.paths.dataset_dir.display());
        }
        Action::Train => {
            let (train_set, _) = split(c, read_dataset(&c.paths.dataset_dir)?);
            let dir = train_one(c, &train_set)?;
            eprintln!("checkpoints in {}", dir.display());
        }
        Action::Eval { checkpoint } => {
            let (model, params) = load_model(c, checkpoint)?;
            let (_, test_set) = split(c, read_dataset(&c.paths.dataset_dir)?);
            let preds = predict_episodes(&model, &params, &test_set)?;
            let report = score_predictions(&test_set, &preds)?;
            let dir = c.paths.report_dir.join("eval");
            write_json(&dir.join("eval.json"), &report)?;
            write_jsonl(&dir.join("predictions.jsonl"), &preds)?;
            echo_config(&dir, c)?;
            println!(
                "PR-AUC {:.4}  F1 {:.4}  precision {:.4}  recall {:.4}",
                report.pr_auc, report.f1.f1, report.f1.precision, report.f1.recall
            );
        }
        Action::Ablate => {
            let (train_set, test_set) = split(c, read_dataset(&c.paths.dataset_dir)?);
            let stress_set = if c.stress.lengths.is_empty() {
                Vec::new()
            } else {
                stress_episodes(c)?
            };
            let plan = AblationPlan {
                variants: c.ablate.variants.clone(),
                seeds: c.ablate.seeds.clone(),
                train: c.train.clone(),
                stress_ks: c.stress.lengths.clone(),
                stress_seed: c.stress.seed,
            };
            let mut log: Vec<EpochLog> = Vec::new();
            let hash = config_hash(c);
            let report = run_ablation(
                &train_set,
                &test_set,
                &stress_set,
                &plan,
                &mut |e| {
                    log.push(e.clone());
                    progress(e)
                },
                &mut |outcome, row| {
                    let run = RunConfig {
                        train: TrainConfig {
                            variant: row.variant,
                            seed: row.seed,
                            ..c.train.clone()
                        },
                        ..c.clone()
                    };
                    let dir = run_dir(c, row.variant, row.seed);
                    Checkpoint {
                        config_hash: hash.clone(),
                        params: outcome.final_params.clone(),
                        optimizer: None,
                    }
                    .save(&dir.join("final.ckpt"))?;
                    echo_config(&dir, &run)?;
                    eprintln!("{} seed {}: PR-AUC {:.4}", row.variant, row.seed, row.eval.pr_auc);
                    Ok(())
                },
            )?;
            let dir = c.paths.report_dir.join("ablation");
            write_json(&dir.join("metrics.json"), &report)?;
            write_jsonl(&dir.join("epochs.jsonl"), &log)?;
            echo_config(&dir, c)?;
            for (v, s) in &report.variants {
                println!(
                    "{:<16} mean PR-AUC {:.4}  best {:.4}  mean F1 {:.4}  best F1 {:.4}",
                    v.name(),
                    s.mean_pr_auc,
                    s.best_pr_auc,
                    s.mean_f1,
                    s.best_f1
                );
            }
        }
        Action::Stress { checkpoint } => {
            let (model, params) = load_model(c, checkpoint)?;
            let episodes = stress_episodes(c)?;
            let summaries = c
                .stress
                .lengths
                .iter()
                .map(|&k| stress_summary(&model, &params, &episodes, k, c.stress.seed))
                .collect::<Result<Vec<_>>>()?;
            let dir = c.paths.report_dir.join("stress");
            write_json(&dir.join("stress.json"), &summaries)?;
            echo_config(&dir, c)?;
            for s in &summaries {
                println!(
                    "k={:2}: false-positive rate {:.3}, mean max probability {:.4}",
                    s.k, s.fp_rate, s.mean_max_probability
                );
            }
        }
    }
    Ok(())
}

fn kind(e: &RoarError) -> &'static str {
    match e {
        RoarError::InvalidArgument(_) => "invalid_argument",
        RoarError::Config(_) => "config",
        RoarError::NonFinite(_) => "non_finite",
        RoarError::Divergence(_) => "divergence",
        RoarError::Format { .. } => "format",
        RoarError::Io { .. } => "io",
        RoarError::Precondition(_) => "precondition",
    }
}

fn report_error(e: &RoarError, code: i32) -> i32 {
    let message = serde_json::to_string(&config::one_line(&e.to_string())).expect("string serializes");
    eprintln!("error kind={} exit={code} message={message}", kind(e));
    code
}

/// Runs `argv` (program name first) and returns the process exit code.
pub fn run_command_in<I, T>(argv: I, report_override: Option<&Path>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    if let Err(e) = Cli::try_parse_from(&argv) {
        use clap::error::ErrorKind;
        if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
            let _ = e.print();
            return 0;
        }
    }
    let prepared = match prepare(argv.iter().cloned(), report_override) {
        Ok(p) => p,
        Err(e) => return report_error(&e, 1),
    };
    match execute(&prepared) {
        Ok(()) => 0,
        Err(e) => report_error(&e, 2),
    }
}

/// [`run_command_in`] with the report directory taken from the environment.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let dir = std::env::var_os(REPORT_DIR_ENV)
        .filter(|d| !d.is_empty())
        .map(PathBuf::from);
    run_command_in(argv, dir.as_deref())
}
