//! A small generative tagging corpus for tests and desk-scale experiments.
//!
//! Tags follow a random first-order Markov chain. Each tag owns a
//! Zipf-distributed lexicon whose words share a tag-specific suffix, and a
//! pool of ambiguous words is shared between pairs of tags, so context is
//! needed to tag them.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::conll::RawSentence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_sentences: usize,
    pub num_tags: usize,
    pub words_per_tag: usize,
    pub ambiguous_words: usize,
    /// Probability that a token is drawn from the ambiguous pool.
    pub ambiguity: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_sentences: 50,
            num_tags: 5,
            words_per_tag: 12,
            ambiguous_words: 6,
            ambiguity: 0.2,
            min_len: 4,
            max_len: 12,
            seed: 0,
        }
    }
}

/// The sampled grammar; reusable to draw train/dev/test sets from one source.
#[derive(Debug, Clone)]
pub struct SyntheticGrammar {
    config: SyntheticConfig,
    start: Vec<f64>,
    transitions: Vec<Vec<f64>>,
    lexicon: Vec<Vec<String>>,
    ambiguous: Vec<(String, [usize; 2])>,
}

fn sharpened<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>().powi(3) + 0.01).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

fn draw<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let mut u = rng.random::<f64>() * weights.iter().sum::<f64>();
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

fn stem<R: Rng>(rng: &mut R) -> String {
    const CONSONANTS: &[u8] = b"bcdfghklmnprstvz";
    const VOWELS: &[u8] = b"aeiou";
    let syllables = rng.random_range(1..=3);
    let mut s = String::new();
    for _ in 0..syllables {
        s.push(*CONSONANTS.choose(rng).expect("nonempty") as char);
        s.push(*VOWELS.choose(rng).expect("nonempty") as char);
    }
    s
}

impl SyntheticGrammar {
    pub fn new(config: SyntheticConfig) -> Result<Self> {
        if config.num_tags < 2 || config.words_per_tag == 0 {
            return Err(Error::invalid("synthetic corpus needs at least 2 tags and 1 word per tag"));
        }
        if config.min_len == 0 || config.min_len > config.max_len {
            return Err(Error::invalid("synthetic sentence lengths must satisfy 0 < min <= max"));
        }
        if !(0.0..=1.0).contains(&config.ambiguity) {
            return Err(Error::invalid("ambiguity must lie in [0, 1]"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let k = config.num_tags;
        let start = sharpened(k, &mut rng);
        let transitions = (0..k).map(|_| sharpened(k, &mut rng)).collect();
        // stems never contain `q` or `w`, so suffixes stay tag-specific
        let mut used = std::collections::HashSet::new();
        let mut fresh = |rng: &mut ChaCha8Rng, suffix: &str| loop {
            let w = format!("{}{suffix}", stem(rng));
            if used.insert(w.clone()) {
                return w;
            }
        };
        let lexicon = (0..k)
            .map(|t| {
                let suffix = format!("q{}{}", (b'a' + (t % 26) as u8) as char, t / 26);
                (0..config.words_per_tag).map(|_| fresh(&mut rng, &suffix)).collect()
            })
            .collect();
        let ambiguous = (0..config.ambiguous_words)
            .map(|_| {
                let a = rng.random_range(0..k);
                let b = (a + rng.random_range(1..k)) % k;
                (fresh(&mut rng, "w"), [a, b])
            })
            .collect();
        Ok(SyntheticGrammar {
            config,
            start,
            transitions,
            lexicon,
            ambiguous,
        })
    }

    pub fn tag_name(tag: usize) -> String {
        format!("T{tag}")
    }

    fn word<R: Rng>(&self, tag: usize, rng: &mut R) -> String {
        let pool: Vec<&String> = self
            .ambiguous
            .iter()
            .filter(|(_, tags)| tags.contains(&tag))
            .map(|(w, _)| w)
            .collect();
        if !pool.is_empty() && rng.random::<f64>() < self.config.ambiguity {
            return pool.choose(rng).expect("nonempty").to_string();
        }
        let zipf: Vec<f64> = (0..self.lexicon[tag].len()).map(|r| 1.0 / (r + 1) as f64).collect();
        self.lexicon[tag][draw(&zipf, rng)].clone()
    }

    /// Draws `n` labeled sentences from an independent stream `stream`.
    pub fn sample(&self, n: usize, stream: u64) -> Vec<RawSentence> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(stream + 1);
        (0..n)
            .map(|_| {
                let len = rng.random_range(self.config.min_len..=self.config.max_len);
                let mut tag = draw(&self.start, &mut rng);
                let mut words = Vec::with_capacity(len);
                let mut labels = Vec::with_capacity(len);
                for _ in 0..len {
                    words.push(self.word(tag, &mut rng));
                    labels.push(Self::tag_name(tag));
                    tag = draw(&self.transitions[tag], &mut rng);
                }
                RawSentence {
                    words,
                    labels: Some(labels),
                }
            })
            .collect()
    }
}

/// `config.num_sentences` labeled sentences from a fresh grammar.
pub fn synthetic_corpus(config: &SyntheticConfig) -> Result<Vec<RawSentence>> {
    let n = config.num_sentences;
    Ok(SyntheticGrammar::new(config.clone())?.sample(n, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn shape_and_determinism() {
        let cfg = SyntheticConfig::default();
        let a = synthetic_corpus(&cfg).unwrap();
        assert_eq!(a, synthetic_corpus(&cfg).unwrap());
        assert_eq!(a.len(), 50);
        let tags: HashSet<&String> = a.iter().flat_map(|s| s.labels.as_ref().unwrap()).collect();
        assert!(tags.len() <= 5);
        assert!(a.iter().all(|s| (4..=12).contains(&s.len())));
    }

    #[test]
    fn streams_differ() {
        let g = SyntheticGrammar::new(SyntheticConfig::default()).unwrap();
        assert_ne!(g.sample(5, 0), g.sample(5, 1));
    }

    #[test]
    fn rejects_degenerate_configs() {
        let bad = SyntheticConfig {
            num_tags: 1,
            ..SyntheticConfig::default()
        };
        assert!(SyntheticGrammar::new(bad).is_err());
    }
}
