//! One training run: directory layout, manifest, metrics and checkpoint.
//!
//! A run directory `run-{hash}-seed{seed}` holds
//! - `config.toml`: the resolved configuration,
//! - `split.json`: labeled and unlabeled sentence indices,
//! - `manifest.jsonl`: a `run` header, one `epoch` record per epoch, an
//!   `alpha` record per candidate and a closing `summary`,
//! - `metrics.csv`: the epoch records flattened for plotting,
//! - `model.ckpt` and `summary.json`.
//!
//! Nothing time-dependent is written, so identical inputs give identical files.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use vsl_core::data::load_embeddings;
use vsl_core::train::{
    train_with, warm_start_train, Checkpoint, EpochRecord, EvalReport, Phase, TrainData,
    TrainOutcome,
};
use vsl_core::{VocabSizes, VslModel};

use crate::config::ExperimentConfig;
use crate::data::{read_raw, PreparedData, RawData};
use crate::error::CliError;

pub const VERSION: &str = concat!("vsl-cli ", env!("CARGO_PKG_VERSION"));

pub const METRICS_HEADER: [&str; 20] = [
    "phase",
    "alpha",
    "epoch",
    "global_step",
    "kl_weight",
    "labeled_batches",
    "unlabeled_batches",
    "loss",
    "classification",
    "elbo",
    "kl",
    "prior_refreshed",
    "dev_accuracy",
    "dev_precision",
    "dev_recall",
    "dev_f1",
    "dev_metric",
    "improved",
    "best_so_far",
    "seed",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub seed: u64,
    pub alpha: f64,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub dev: EvalReport,
    pub labeled: usize,
    pub unlabeled: usize,
    pub stopped_early: bool,
}

pub fn run_dir(config: &ExperimentConfig) -> PathBuf {
    config
        .run
        .output_dir
        .join(format!("run-{}-seed{}", config.hash(), config.train.seed))
}

/// Makes `dir` empty, refusing to touch an existing one unless `overwrite`.
pub fn claim_dir(dir: &Path, overwrite: bool) -> Result<(), CliError> {
    if dir.exists() {
        if !overwrite {
            return Err(CliError::usage(format!(
                "{} already exists; pass --overwrite to replace it",
                dir.display()
            )));
        }
        fs::remove_dir_all(dir).with_context(|| format!("removing {}", dir.display()))?;
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

/// Append-only JSON-lines writer; the file must not exist yet.
pub struct Manifest {
    out: BufWriter<File>,
}

impl Manifest {
    pub fn create(path: &Path) -> anyhow::Result<Self> {
        let file = OpenOptions::new()
            .append(true)
            .create_new(true)
            .open(path)
            .with_context(|| format!("creating {}", path.display()))?;
        Ok(Manifest {
            out: BufWriter::new(file),
        })
    }

    pub fn record(&mut self, value: &serde_json::Value) -> anyhow::Result<()> {
        serde_json::to_writer(&mut self.out, value)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn metrics_row(r: &EpochRecord, best_so_far: f64, seed: u64) -> Vec<String> {
    let spans = r.dev.spans.as_ref();
    vec![
        serde_json::to_value(r.phase)
            .expect("phase")
            .as_str()
            .unwrap_or_default()
            .to_string(),
        r.alpha.to_string(),
        r.epoch.to_string(),
        r.global_step.to_string(),
        r.kl_weight.to_string(),
        r.labeled_batches.to_string(),
        r.unlabeled_batches.to_string(),
        r.loss.to_string(),
        r.classification.to_string(),
        opt(r.elbo),
        opt(r.kl),
        r.prior_refreshed.to_string(),
        r.dev.token_accuracy.to_string(),
        opt(spans.map(|s| s.precision)),
        opt(spans.map(|s| s.recall)),
        opt(spans.map(|s| s.f1)),
        r.dev_metric.to_string(),
        r.improved.to_string(),
        best_so_far.to_string(),
        seed.to_string(),
    ]
}

fn build_model(
    config: &ExperimentConfig,
    data: &PreparedData,
    seed: u64,
) -> Result<VslModel, CliError> {
    let vocabs = &data.corpus.vocabs;
    let sizes = VocabSizes {
        words: vocabs.words.len(),
        chars: vocabs.chars.len(),
        labels: vocabs.labels.len(),
    };
    let word_init = match &config.data.embeddings {
        Some(path) => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
            rng.set_stream(3);
            let e = load_embeddings(path, &vocabs.words, &mut rng)?;
            if e.dim != config.model.word_dim {
                return Err(CliError::usage(format!(
                    "model.word_dim is {} but data.embeddings has dimension {}",
                    config.model.word_dim, e.dim
                )));
            }
            log::info!(
                "embeddings: {} of {} words found",
                e.found,
                vocabs.words.len()
            );
            Some(e.matrix)
        }
        None => None,
    };
    Ok(VslModel::new(&config.model, sizes, word_init, seed)?)
}

/// Trains one configuration (at its `train.seed`) into a fresh run directory.
pub fn run_training(config: &ExperimentConfig, overwrite: bool) -> Result<RunSummary, CliError> {
    let raw = read_raw(&config.data)?;
    run_training_on(config, &raw, overwrite)
}

pub fn run_training_on(
    config: &ExperimentConfig,
    raw: &RawData,
    overwrite: bool,
) -> Result<RunSummary, CliError> {
    let data = raw.prepare(&config.data)?;
    let has_unlabeled = !data.corpus.unlabeled.is_empty();
    let variant = config.model.variant;
    if has_unlabeled && !variant.has_decoder() {
        return Err(CliError::usage(format!(
            "model.variant {variant} cannot use unlabeled data; set data.unlabeled_fraction = 0"
        )));
    }
    if has_unlabeled && config.train.alpha == Some(0.0) {
        return Err(CliError::usage(
            "train.alpha is 0 but unlabeled data is present, which would be ignored",
        ));
    }
    let candidates = config.train.alpha_candidates(has_unlabeled);
    if let Some(p) = config.train.alpha_pretrain {
        if let Some(a) = candidates.iter().find(|&&a| a < p) {
            return Err(CliError::usage(format!(
                "train.alpha_pretrain ({p}) exceeds the candidate alpha {a}"
            )));
        }
    }
    // fail on unusable embeddings before touching the output directory
    let seed = config.train.seed;
    build_model(config, &data, seed)?;

    let dir = run_dir(config);
    claim_dir(&dir, overwrite)?;
    fs::write(dir.join("config.toml"), config.to_toml())?;
    fs::write(
        dir.join("split.json"),
        serde_json::to_vec_pretty(&json!({
            "split": data.corpus.split,
            "unlabeled_pool": raw.pool.len(),
            "unlabeled_kept": data.unlabeled_indices,
        }))
        .context("serializing split")?,
    )?;
    let mut manifest = Manifest::create(&dir.join("manifest.jsonl"))?;
    let vocabs = &data.corpus.vocabs;
    manifest.record(&json!({
        "kind": "run",
        "version": VERSION,
        "seed": seed,
        "config_hash": config.hash(),
        "config": config,
        "checksums": raw.checksums,
        "sizes": {
            "labeled": data.corpus.labeled.len(),
            "unlabeled": data.corpus.unlabeled.len(),
            "dev": data.dev.len(),
            "words": vocabs.words.len(),
            "chars": vocabs.chars.len(),
            "labels": vocabs.labels.len(),
        },
        "alpha_candidates": candidates,
    }))?;
    let mut metrics =
        csv::Writer::from_path(dir.join("metrics.csv")).context("creating metrics.csv")?;
    metrics
        .write_record(METRICS_HEADER)
        .context("writing metrics.csv")?;

    let train_data = TrainData {
        labeled: &data.corpus.labeled,
        unlabeled: &data.corpus.unlabeled,
        dev: &data.dev,
        labels: &vocabs.labels,
    };

    let mut best: Option<(VslModel, TrainOutcome)> = None;
    for &alpha in &candidates {
        let mut best_so_far = f64::NEG_INFINITY;
        let mut observe = |r: &EpochRecord| -> vsl_core::Result<()> {
            best_so_far = best_so_far.max(r.dev_metric);
            let mut rec = serde_json::to_value(r)?;
            rec["kind"] = json!("epoch");
            manifest
                .record(&rec)
                .map_err(|e| vsl_core::Error::InvalidArgument(format!("manifest: {e:#}")))?;
            metrics
                .write_record(metrics_row(r, best_so_far, seed))
                .map_err(|e| vsl_core::Error::InvalidArgument(format!("metrics.csv: {e}")))?;
            Ok(())
        };
        let (model, outcome) = if config.train.alpha_pretrain.is_some() {
            let build = |s: u64| -> vsl_core::Result<VslModel> {
                build_model(config, &data, s)
                    .map_err(|e| vsl_core::Error::InvalidArgument(e.to_string()))
            };
            let (model, ws) =
                warm_start_train(&build, train_data, &config.train, alpha, &mut observe)?;
            manifest.record(&json!({
                "kind": "warm_start",
                "alpha": alpha,
                "pretrain_alpha": ws.pretrain.alpha,
                "pretrain_best_epoch": ws.pretrain.best_epoch,
                "pretrain_best_metric": ws.pretrain.best_metric,
                "inherited_priors": ws.inherited_priors,
            }))?;
            (model, ws.main)
        } else {
            let mut model = build_model(config, &data, seed)?;
            let priors = model.new_prior_store(config.train.refresh_period)?;
            let outcome = train_with(
                &mut model,
                priors,
                train_data,
                &config.train,
                alpha,
                Phase::Main,
                &mut observe,
            )?;
            (model, outcome)
        };
        manifest.record(&json!({
            "kind": "alpha",
            "alpha": alpha,
            "best_epoch": outcome.best_epoch,
            "best_metric": outcome.best_metric,
            "epochs_run": outcome.history.len(),
            "stopped_early": outcome.stopped_early,
        }))?;
        log::info!(
            "alpha {alpha}: best dev {:.4} at epoch {}",
            outcome.best_metric,
            outcome.best_epoch
        );
        if best
            .as_ref()
            .is_none_or(|(_, b)| outcome.best_metric > b.best_metric)
        {
            best = Some((model, outcome));
        }
    }
    metrics.flush().context("writing metrics.csv")?;

    let (model, outcome) = best.expect("at least one alpha candidate");
    let dev_report = outcome
        .history
        .iter()
        .find(|r| r.epoch == outcome.best_epoch && r.phase == Phase::Main)
        .map(|r| r.dev.clone())
        .expect("best epoch is in the history");
    let checkpoint = Checkpoint {
        model,
        vocabs: vocabs.clone(),
        optimizer: outcome.optimizer.clone(),
        priors: outcome.priors.clone(),
        rng: outcome.rng,
        meta: json!({
            "version": VERSION,
            "config": config,
            "alpha": outcome.alpha,
            "best_epoch": outcome.best_epoch,
            "best_metric": outcome.best_metric,
        }),
    };
    checkpoint.save(&dir.join("model.ckpt"))?;
    let summary = RunSummary {
        dir: dir.clone(),
        seed,
        alpha: outcome.alpha,
        best_epoch: outcome.best_epoch,
        best_metric: outcome.best_metric,
        dev: dev_report,
        labeled: data.corpus.labeled.len(),
        unlabeled: data.corpus.unlabeled.len(),
        stopped_early: outcome.stopped_early,
    };
    let mut rec = serde_json::to_value(&summary).context("serializing summary")?;
    rec["kind"] = json!("summary");
    rec["dir"] = json!(dir.file_name().map(|n| n.to_string_lossy().into_owned()));
    manifest.record(&rec)?;
    fs::write(
        dir.join("summary.json"),
        serde_json::to_vec_pretty(&rec).context("serializing summary")?,
    )?;
    Ok(summary)
}

pub fn read_summary(dir: &Path) -> anyhow::Result<RunSummary> {
    let bytes = fs::read(dir.join("summary.json"))
        .with_context(|| format!("reading summary in {}", dir.display()))?;
    let mut summary: RunSummary = serde_json::from_slice(&bytes)?;
    summary.dir = dir.to_path_buf();
    Ok(summary)
}

/// Mean and sample standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
