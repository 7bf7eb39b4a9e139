//! Turns the `[data]` section into an encoded corpus.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::Context;
use sha2::{Digest, Sha256};
use vsl_core::data::{
    preprocess_ner, read_conll, subsample_indices, to_bioes, Corpus, RawSentence, Sentence,
    SplitManifest, VocabOptions, Vocabularies,
};

use crate::config::DataConfig;
use crate::error::CliError;

/// Files as read, before the unlabeled cap and vocabulary building.
#[derive(Debug, Clone)]
pub struct RawData {
    pub labeled: Vec<RawSentence>,
    /// Unlabeled candidates: the unlabeled split followed by `data.unlabeled`.
    pub pool: Vec<RawSentence>,
    pub dev: Vec<RawSentence>,
    pub split: SplitManifest,
    /// SHA-256 of every input file, keyed by config field.
    pub checksums: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub corpus: Corpus,
    pub dev: Vec<Sentence>,
    /// Pool positions kept by the unlabeled cap, in pool order.
    pub unlabeled_indices: Vec<usize>,
}

pub fn file_sha256(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Digit replacement on words and BIOES conversion of labels.
pub fn ner_preprocess(sentences: &mut [RawSentence]) -> usize {
    let mut repaired = 0;
    for s in sentences {
        for w in &mut s.words {
            *w = preprocess_ner(w);
        }
        if let Some(labels) = s.labels.as_mut() {
            let (bioes, fixes) = to_bioes(labels);
            *labels = bioes;
            repaired += fixes;
        }
    }
    repaired
}

/// Reads a labeled file with the column layout of `cfg`.
pub fn read_labeled(path: &Path, cfg: &DataConfig) -> anyhow::Result<Vec<RawSentence>> {
    let mut s = read_conll(path, cfg.word_column, Some(cfg.label_column))?;
    if cfg.ner {
        let repaired = ner_preprocess(&mut s);
        if repaired > 0 {
            log::warn!(
                "{}: repaired {repaired} inconsistent IOB transitions",
                path.display()
            );
        }
    }
    Ok(s)
}

pub fn read_raw(cfg: &DataConfig) -> Result<RawData, CliError> {
    let train_path = cfg
        .train
        .as_ref()
        .ok_or_else(|| CliError::usage("data.train: a training file is required"))?;
    let mut checksums = BTreeMap::new();
    checksums.insert("data.train".to_string(), file_sha256(train_path)?);
    let all = read_labeled(train_path, cfg)?;
    if all.is_empty() {
        return Err(CliError::usage(format!(
            "data.train: {} holds no sentences",
            train_path.display()
        )));
    }
    let split = SplitManifest::new(
        all.len(),
        cfg.labeled_fraction,
        cfg.unlabeled_fraction,
        cfg.split_seed,
    )?;
    let (labeled, mut pool) = split.apply(&all)?;
    if labeled.is_empty() {
        return Err(CliError::usage(
            "data.labeled_fraction selects no sentences",
        ));
    }
    if let Some(path) = &cfg.unlabeled {
        checksums.insert("data.unlabeled".to_string(), file_sha256(path)?);
        let mut extra = read_conll(path, cfg.word_column, None).map_err(anyhow::Error::from)?;
        if cfg.ner {
            ner_preprocess(&mut extra);
        }
        pool.extend(extra);
    }
    let dev = match &cfg.dev {
        Some(path) => {
            checksums.insert("data.dev".to_string(), file_sha256(path)?);
            read_labeled(path, cfg)?
        }
        None => Vec::new(),
    };
    if let Some(path) = &cfg.embeddings {
        checksums.insert("data.embeddings".to_string(), file_sha256(path)?);
    }
    Ok(RawData {
        labeled,
        pool,
        dev,
        split,
        checksums,
    })
}

impl RawData {
    /// Applies the unlabeled cap and encodes everything with vocabularies
    /// built from the training sentences.
    pub fn prepare(&self, cfg: &DataConfig) -> Result<PreparedData, CliError> {
        let unlabeled_indices = match cfg.unlabeled_cap {
            Some(cap) if cap > self.pool.len() => {
                return Err(CliError::usage(format!(
                    "data.unlabeled_cap: {cap} exceeds the unlabeled pool of {} sentences",
                    self.pool.len()
                )))
            }
            Some(cap) => {
                let mut idx = subsample_indices(self.pool.len(), cap, cfg.split_seed)?;
                idx.sort_unstable();
                idx
            }
            None => (0..self.pool.len()).collect(),
        };
        let unlabeled: Vec<RawSentence> = unlabeled_indices
            .iter()
            .map(|&i| self.pool[i].clone())
            .collect();
        let options = VocabOptions {
            lowercase: cfg.lowercase,
            min_freq: cfg.min_freq,
        };
        let corpus = Corpus::build(
            &self.labeled,
            &unlabeled,
            &self.dev,
            &options,
            self.split.clone(),
        )?;
        let dev = corpus
            .vocabs
            .encode_all(&self.dev, corpus.num_instances())?;
        Ok(PreparedData {
            corpus,
            dev,
            unlabeled_indices,
        })
    }
}

/// Reads an evaluation file for a trained model.
pub fn read_eval_set(
    path: &Path,
    cfg: &DataConfig,
    vocabs: &Vocabularies,
) -> Result<Vec<Sentence>, CliError> {
    if !path.is_file() {
        return Err(CliError::usage(format!(
            "--data: file not found: {}",
            path.display()
        )));
    }
    let raw = read_labeled(path, cfg)?;
    if raw.is_empty() {
        return Err(CliError::usage(format!(
            "--data: {} holds no sentences",
            path.display()
        )));
    }
    Ok(vocabs.encode_all(&raw, 0)?)
}
