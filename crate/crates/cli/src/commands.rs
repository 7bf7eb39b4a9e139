//! The four subcommands.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use anyhow::Context;
use serde_json::json;
use vsl_core::analysis::Pca;
use vsl_core::data::is_bioes_label;
use vsl_core::train::{evaluate_spans, evaluate_tokens, Checkpoint};

use crate::config::{DataConfig, ExperimentConfig};
use crate::data::{read_eval_set, read_raw};
use crate::error::CliError;
use crate::run::{claim_dir, mean_sd, read_summary, run_dir, run_training_on, RunSummary};

#[derive(Debug, Clone, Default)]
pub struct TrainArgs {
    pub config: PathBuf,
    pub overrides: Vec<String>,
    /// Consecutive seeds starting at `train.seed`.
    pub seeds: usize,
    pub overwrite: bool,
    pub unlabeled_cap: Option<usize>,
}

fn load_config(
    path: &Path,
    overrides: &[String],
    cap: Option<usize>,
) -> Result<ExperimentConfig, CliError> {
    let mut all = overrides.to_vec();
    if let Some(cap) = cap {
        all.push(format!("data.unlabeled_cap={cap}"));
    }
    ExperimentConfig::load(path, &all)
}

pub fn cmd_train(args: &TrainArgs) -> Result<Vec<RunSummary>, CliError> {
    let config = load_config(&args.config, &args.overrides, args.unlabeled_cap)?;
    let raw = read_raw(&config.data)?;
    let base = config.train.seed;
    let mut summaries = Vec::new();
    for seed in base..base + args.seeds.max(1) as u64 {
        let mut c = config.clone();
        c.train.seed = seed;
        let s = run_training_on(&c, &raw, args.overwrite)?;
        println!(
            "{}: alpha {} best dev {:.4} at epoch {}",
            s.dir.display(),
            s.alpha,
            s.best_metric,
            s.best_epoch
        );
        summaries.push(s);
    }
    if summaries.len() > 1 {
        let metrics: Vec<f64> = summaries.iter().map(|s| s.best_metric).collect();
        let (mean, sd) = mean_sd(&metrics);
        println!("{} seeds: dev {mean:.4} ± {sd:.4}", summaries.len());
    }
    Ok(summaries)
}

fn data_settings(checkpoint: &Checkpoint) -> DataConfig {
    checkpoint
        .meta
        .get("config")
        .and_then(|c| c.get("data"))
        .and_then(|d| serde_json::from_value(d.clone()).ok())
        .unwrap_or_default()
}

#[derive(Debug, Clone, Default)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub word_column: Option<usize>,
    pub label_column: Option<usize>,
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    if !path.is_file() {
        return Err(CliError::usage(format!(
            "--checkpoint: file not found: {}",
            path.display()
        )));
    }
    Ok(Checkpoint::load(path)?)
}

fn eval_settings(checkpoint: &Checkpoint, word: Option<usize>, label: Option<usize>) -> DataConfig {
    let mut d = data_settings(checkpoint);
    d.word_column = word.unwrap_or(d.word_column);
    d.label_column = label.unwrap_or(d.label_column);
    d
}

/// Token accuracy, and span scores when the label set is BIOES.
pub fn cmd_eval(args: &EvalArgs) -> Result<serde_json::Value, CliError> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let settings = eval_settings(&ckpt, args.word_column, args.label_column);
    let sentences = read_eval_set(&args.data, &settings, &ckpt.vocabs)?;
    let labels = &ckpt.vocabs.labels;
    let accuracy = evaluate_tokens(&ckpt.model, &sentences)?;
    let spans = if labels.tokens().iter().all(|l| is_bioes_label(l)) {
        Some(evaluate_spans(&ckpt.model, &sentences, labels)?)
    } else {
        None
    };
    let report = json!({
        "variant": ckpt.model.variant(),
        "sentences": sentences.len(),
        "tokens": sentences.iter().map(|s| s.len()).sum::<usize>(),
        "token_accuracy": accuracy,
        "spans": spans,
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&report).context("serializing report")?
    );
    Ok(report)
}

#[derive(Debug, Clone, Default)]
pub struct ExportArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub output: PathBuf,
    /// Subset of `hidden`, `y`, `z`; empty means all the variant has.
    pub variables: Vec<String>,
    pub word_column: Option<usize>,
    pub label_column: Option<usize>,
}

/// Writes per-token latent means to `output` and their 2-D PCA projection
/// next to it (`<stem>.pca.csv`). Returns both paths.
pub fn cmd_export_latents(args: &ExportArgs) -> Result<(PathBuf, PathBuf), CliError> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let variant = ckpt.model.variant();
    let available: Vec<&str> = ["hidden", "y", "z"]
        .into_iter()
        .filter(|v| match *v {
            "y" => variant.has_y(),
            "z" => variant.has_decoder(),
            _ => true,
        })
        .collect();
    let wanted: Vec<String> = if args.variables.is_empty() {
        available.iter().map(|s| s.to_string()).collect()
    } else {
        args.variables.clone()
    };
    for v in &wanted {
        if !["hidden", "y", "z"].contains(&v.as_str()) {
            return Err(CliError::usage(format!(
                "--variables: unknown variable `{v}` (use hidden, y, z)"
            )));
        }
        if !available.contains(&v.as_str()) {
            return Err(CliError::usage(format!(
                "--variables: {variant} has no latent variable `{v}`"
            )));
        }
    }
    let settings = eval_settings(&ckpt, args.word_column, args.label_column);
    let sentences = read_eval_set(&args.data, &settings, &ckpt.vocabs)?;
    let labels = &ckpt.vocabs.labels;

    // one row of vectors per token, per requested variable
    let mut keys = Vec::new();
    let mut vectors: Vec<Vec<Vec<f64>>> = vec![Vec::new(); wanted.len()];
    for (si, s) in sentences.iter().enumerate() {
        let rec = ckpt.model.latent_means(s)?;
        let gold = s
            .label_ids
            .as_ref()
            .expect("evaluation sentences are labeled");
        for t in 0..s.len() {
            keys.push((si, t, s.words[t].clone(), gold[t], rec.predicted[t]));
        }
        for (k, v) in wanted.iter().enumerate() {
            let rows = match v.as_str() {
                "hidden" => &rec.hidden,
                "y" => rec.y.as_ref().expect("variant has y"),
                _ => rec.z.as_ref().expect("variant has z"),
            };
            vectors[k].extend(rows.iter().cloned());
        }
    }
    let label = |id: usize| labels.token(id).unwrap_or("?").to_string();

    if let Some(parent) = args.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let mut out = csv::Writer::from_path(&args.output)
        .with_context(|| format!("creating {}", args.output.display()))?;
    let mut header: Vec<String> = ["sentence", "position", "word", "gold", "predicted"]
        .map(String::from)
        .to_vec();
    for (k, v) in wanted.iter().enumerate() {
        let dim = vectors[k].first().map_or(0, Vec::len);
        header.extend((0..dim).map(|i| format!("{v}_{i}")));
    }
    out.write_record(&header).context("writing latents")?;
    for (row, (si, t, word, gold, pred)) in keys.iter().enumerate() {
        let mut rec = vec![
            si.to_string(),
            t.to_string(),
            word.clone(),
            label(*gold),
            label(*pred),
        ];
        for vs in &vectors {
            rec.extend(vs[row].iter().map(|x| x.to_string()));
        }
        out.write_record(&rec).context("writing latents")?;
    }
    out.flush().context("writing latents")?;

    let pca_path = args.output.with_extension("pca.csv");
    let mut pca_out = csv::Writer::from_path(&pca_path)
        .with_context(|| format!("creating {}", pca_path.display()))?;
    let fits = vectors
        .iter()
        .map(|vs| Pca::fit(vs, 2))
        .collect::<vsl_core::Result<Vec<_>>>()?;
    let mut header: Vec<String> = ["sentence", "position", "gold", "predicted"]
        .map(String::from)
        .to_vec();
    for (v, fit) in wanted.iter().zip(&fits) {
        header.extend((1..=fit.components.len()).map(|i| format!("{v}_pc{i}")));
        log::info!("{v}: PCA variances {:?}", fit.variances);
    }
    pca_out
        .write_record(&header)
        .context("writing projection")?;
    for (row, (si, t, _, gold, pred)) in keys.iter().enumerate() {
        let mut rec = vec![si.to_string(), t.to_string(), label(*gold), label(*pred)];
        for (vs, fit) in vectors.iter().zip(&fits) {
            rec.extend(fit.project(&vs[row]).iter().map(|x| x.to_string()));
        }
        pca_out.write_record(&rec).context("writing projection")?;
    }
    pca_out.flush().context("writing projection")?;
    println!(
        "{} rows written to {} and {}",
        keys.len(),
        args.output.display(),
        pca_path.display()
    );
    Ok((args.output.clone(), pca_path))
}

#[derive(Debug, Clone, Default)]
pub struct SweepArgs {
    pub config: PathBuf,
    pub overrides: Vec<String>,
    pub overwrite: bool,
    /// Child processes to run at once; 0 or 1 runs in this process.
    pub parallel: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub csv: PathBuf,
    pub runs: Vec<(usize, RunSummary)>,
}

/// One run per `sweep.sizes` entry with the unlabeled pool capped to that
/// size; writes `sweep.csv` with one row per size.
pub fn cmd_sweep_unlabeled(args: &SweepArgs) -> Result<SweepResult, CliError> {
    let config = ExperimentConfig::load(&args.config, &args.overrides)?;
    let sizes = &config.sweep.sizes;
    if sizes.is_empty() {
        return Err(CliError::usage(
            "sweep.sizes must list at least one pool size",
        ));
    }
    let raw = read_raw(&config.data)?;
    let largest = *sizes.iter().max().expect("nonempty");
    if largest > raw.pool.len() {
        return Err(CliError::usage(format!(
            "sweep.sizes: {largest} exceeds the unlabeled pool of {} sentences",
            raw.pool.len()
        )));
    }
    let dir =
        config
            .run
            .output_dir
            .join(format!("sweep-{}-seed{}", config.hash(), config.train.seed));
    claim_dir(&dir, args.overwrite)?;
    let configs: Vec<ExperimentConfig> = sizes
        .iter()
        .map(|&n| {
            let mut c = config.clone();
            c.data.unlabeled_cap = Some(n);
            c.sweep.sizes.clear();
            c
        })
        .collect();

    let mut runs = Vec::with_capacity(sizes.len());
    if args.parallel > 1 {
        let exe = std::env::current_exe().context("locating the vsl executable")?;
        let mut paths = Vec::new();
        for (c, n) in configs.iter().zip(sizes) {
            let p = dir.join(format!("size-{n}.toml"));
            fs::write(&p, c.to_toml())?;
            paths.push(p);
        }
        for chunk in paths.chunks(args.parallel) {
            let children = chunk
                .iter()
                .map(|p| {
                    let mut cmd = Command::new(&exe);
                    cmd.arg("train").arg("--config").arg(p);
                    if args.overwrite {
                        cmd.arg("--overwrite");
                    }
                    cmd.spawn()
                        .with_context(|| format!("starting a run for {}", p.display()))
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            for (mut child, p) in children.into_iter().zip(chunk) {
                let status = child.wait().context("waiting for a sweep run")?;
                if !status.success() {
                    return Err(anyhow::anyhow!(
                        "sweep run for {} failed with {status}",
                        p.display()
                    )
                    .into());
                }
            }
        }
        for (c, &n) in configs.iter().zip(sizes) {
            runs.push((n, read_summary(&run_dir(c))?));
        }
    } else {
        for (c, &n) in configs.iter().zip(sizes) {
            fs::write(dir.join(format!("size-{n}.toml")), c.to_toml())?;
            let s = run_training_on(c, &raw, args.overwrite)?;
            println!("size {n}: dev {:.4} (alpha {})", s.best_metric, s.alpha);
            runs.push((n, s));
        }
    }

    let csv_path = dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&csv_path).context("creating sweep.csv")?;
    w.write_record([
        "size",
        "unlabeled",
        "alpha",
        "best_epoch",
        "dev_metric",
        "run",
    ])
    .context("writing sweep.csv")?;
    for (n, s) in &runs {
        let name = s
            .dir
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default();
        w.write_record([
            n.to_string(),
            s.unlabeled.to_string(),
            s.alpha.to_string(),
            s.best_epoch.to_string(),
            s.best_metric.to_string(),
            name,
        ])
        .context("writing sweep.csv")?;
    }
    w.flush().context("writing sweep.csv")?;
    println!("{}", csv_path.display());
    Ok(SweepResult {
        csv: csv_path,
        runs,
    })
}
