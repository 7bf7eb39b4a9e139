//! Encoded sentences, vocabularies and labeled/unlabeled splits.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::conll::RawSentence;
use crate::data::vocab::Vocab;
use crate::error::{Error, Result};

/// A tokenized sentence mapped to vocabulary ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Sentence {
    pub words: Vec<String>,
    pub word_ids: Vec<usize>,
    pub char_ids: Vec<Vec<usize>>,
    pub label_ids: Option<Vec<usize>>,
    /// Unique within a corpus; keys the learned priors.
    pub instance_index: usize,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.word_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_ids.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.label_ids.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.word_ids.len();
        let label_ok = self.label_ids.as_ref().is_none_or(|l| l.len() == n);
        if n == 0 || self.words.len() != n || self.char_ids.len() != n || !label_ok {
            return Err(Error::invalid(format!(
                "malformed sentence {}: {} words, {} ids, {} char lists",
                self.instance_index,
                self.words.len(),
                n,
                self.char_ids.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabOptions {
    pub lowercase: bool,
    pub min_freq: usize,
}

impl Default for VocabOptions {
    fn default() -> Self {
        VocabOptions {
            lowercase: false,
            min_freq: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabularies {
    pub words: Vocab,
    pub chars: Vocab,
    pub labels: Vocab,
    pub lowercase: bool,
}

impl Vocabularies {
    /// Word and character vocabularies come from `training`; labels from
    /// every labeled sentence in `label_sources`.
    pub fn build<'a>(
        training: impl IntoIterator<Item = &'a RawSentence>,
        label_sources: impl IntoIterator<Item = &'a RawSentence>,
        options: &VocabOptions,
    ) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut order = Vec::new();
        let mut chars = Vocab::with_specials();
        for s in training {
            for w in &s.words {
                let key = if options.lowercase { w.to_lowercase() } else { w.clone() };
                let c = counts.entry(key.clone()).or_insert_with(|| {
                    order.push(key);
                    0
                });
                *c += 1;
                for ch in w.chars() {
                    chars.insert(ch.encode_utf8(&mut [0; 4]));
                }
            }
        }
        let mut words = Vocab::with_specials();
        for w in order {
            if counts[&w] >= options.min_freq {
                words.insert(&w);
            }
        }
        let mut labels = Vocab::empty();
        for s in label_sources {
            for l in s.labels.iter().flatten() {
                labels.insert(l);
            }
        }
        Vocabularies {
            words,
            chars,
            labels,
            lowercase: options.lowercase,
        }
    }

    pub fn word_id(&self, word: &str) -> usize {
        if self.lowercase {
            self.words.id_or_unk(&word.to_lowercase())
        } else {
            self.words.id_or_unk(word)
        }
    }

    pub fn encode(&self, raw: &RawSentence, instance_index: usize) -> Result<Sentence> {
        let label_ids = match &raw.labels {
            None => None,
            Some(ls) => Some(
                ls.iter()
                    .map(|l| {
                        self.labels
                            .id(l)
                            .ok_or_else(|| Error::invalid(format!("label `{l}` missing from the label vocabulary")))
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
        let s = Sentence {
            words: raw.words.clone(),
            word_ids: raw.words.iter().map(|w| self.word_id(w)).collect(),
            char_ids: raw
                .words
                .iter()
                .map(|w| w.chars().map(|c| self.chars.id_or_unk(c.encode_utf8(&mut [0; 4]))).collect())
                .collect(),
            label_ids,
            instance_index,
        };
        s.validate()?;
        Ok(s)
    }

    /// Encodes sentences with consecutive instance indices from `first_index`.
    pub fn encode_all(&self, raws: &[RawSentence], first_index: usize) -> Result<Vec<Sentence>> {
        raws.iter()
            .enumerate()
            .map(|(i, r)| self.encode(r, first_index + i))
            .collect()
    }

    pub fn label_names(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.labels.token(i).unwrap_or("O").to_string())
            .collect()
    }
}

/// Which original sentences went to the labeled and unlabeled subsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub labeled_fraction: f64,
    pub unlabeled_fraction: f64,
    pub total: usize,
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

impl SplitManifest {
    /// Draws disjoint uniform subsets of `round(f * total)` sentences each.
    pub fn new(total: usize, labeled_fraction: f64, unlabeled_fraction: f64, seed: u64) -> Result<Self> {
        let valid = |f: f64| (0.0..=1.0).contains(&f);
        if !valid(labeled_fraction) || !valid(unlabeled_fraction) {
            return Err(Error::invalid("split fractions must lie in [0, 1]"));
        }
        if labeled_fraction + unlabeled_fraction > 1.0 + 1e-12 {
            return Err(Error::invalid(format!(
                "split fractions sum to {} > 1",
                labeled_fraction + unlabeled_fraction
            )));
        }
        let n_lab = (labeled_fraction * total as f64).round() as usize;
        let n_unl = ((unlabeled_fraction * total as f64).round() as usize).min(total - n_lab);
        let mut perm: Vec<usize> = (0..total).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut labeled = perm[..n_lab].to_vec();
        let mut unlabeled = perm[n_lab..n_lab + n_unl].to_vec();
        labeled.sort_unstable();
        unlabeled.sort_unstable();
        Ok(SplitManifest {
            seed,
            labeled_fraction,
            unlabeled_fraction,
            total,
            labeled,
            unlabeled,
        })
    }

    /// The whole input as labeled data.
    pub fn supervised(total: usize) -> Self {
        SplitManifest {
            seed: 0,
            labeled_fraction: 1.0,
            unlabeled_fraction: 0.0,
            total,
            labeled: (0..total).collect(),
            unlabeled: Vec::new(),
        }
    }

    pub fn apply(&self, sentences: &[RawSentence]) -> Result<(Vec<RawSentence>, Vec<RawSentence>)> {
        if sentences.len() != self.total {
            return Err(Error::invalid(format!(
                "split manifest covers {} sentences, got {}",
                self.total,
                sentences.len()
            )));
        }
        let labeled = self.labeled.iter().map(|&i| sentences[i].clone()).collect();
        let unlabeled = self.unlabeled.iter().map(|&i| sentences[i].unlabeled()).collect();
        Ok((labeled, unlabeled))
    }
}

/// First `n` entries of a seeded permutation of `0..total`. Prefixes of the
/// same permutation are nested, so larger caps extend smaller ones.
pub fn subsample_indices(total: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > total {
        return Err(Error::invalid(format!(
            "requested {n} sentences from a pool of {total}"
        )));
    }
    let mut perm: Vec<usize> = (0..total).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    perm.truncate(n);
    Ok(perm)
}

/// Labeled and unlabeled training sentences with shared vocabularies.
/// Labeled instances take indices `0..L`, unlabeled ones `L..L+U`.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub labeled: Vec<Sentence>,
    pub unlabeled: Vec<Sentence>,
    pub vocabs: Vocabularies,
    pub split: SplitManifest,
}

impl Corpus {
    pub fn build(
        labeled: &[RawSentence],
        unlabeled: &[RawSentence],
        extra_label_sources: &[RawSentence],
        options: &VocabOptions,
        split: SplitManifest,
    ) -> Result<Self> {
        if let Some(bad) = labeled.iter().position(|s| s.labels.is_none()) {
            return Err(Error::invalid(format!("labeled sentence {bad} carries no labels")));
        }
        let vocabs = Vocabularies::build(
            labeled.iter().chain(unlabeled),
            labeled.iter().chain(extra_label_sources),
            options,
        );
        let stripped: Vec<RawSentence> = unlabeled.iter().map(RawSentence::unlabeled).collect();
        Ok(Corpus {
            labeled: vocabs.encode_all(labeled, 0)?,
            unlabeled: vocabs.encode_all(&stripped, labeled.len())?,
            vocabs,
            split,
        })
    }

    pub fn training_sentences(&self) -> impl Iterator<Item = &Sentence> {
        self.labeled.iter().chain(&self.unlabeled)
    }

    pub fn num_instances(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }
}

/// Splits `sentences` into labeled and label-stripped unlabeled subsets and
/// builds the corpus vocabularies with default options.
pub fn split_semi_supervised(
    sentences: &[RawSentence],
    labeled_fraction: f64,
    unlabeled_fraction: f64,
    seed: u64,
) -> Result<Corpus> {
    let split = SplitManifest::new(sentences.len(), labeled_fraction, unlabeled_fraction, seed)?;
    let (labeled, unlabeled) = split.apply(sentences)?;
    Corpus::build(&labeled, &unlabeled, sentences, &VocabOptions::default(), split)
}
