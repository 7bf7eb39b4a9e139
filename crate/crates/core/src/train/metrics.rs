//! Token accuracy and exact-match span micro-F1.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{bioes_spans, is_bioes_label, Sentence, Span, Vocab};
use crate::error::{Error, Result};
use crate::model::VslModel;

/// Fraction of positions whose predicted label equals the gold label.
pub fn token_accuracy(gold: &[Vec<usize>], pred: &[Vec<usize>]) -> Result<f64> {
    if gold.len() != pred.len() {
        return Err(Error::invalid("gold and predicted corpora differ in size"));
    }
    let mut total = 0usize;
    let mut correct = 0usize;
    for (g, p) in gold.iter().zip(pred) {
        if g.len() != p.len() {
            return Err(Error::invalid("gold and predicted sentences differ in length"));
        }
        total += g.len();
        correct += g.iter().zip(p).filter(|(a, b)| a == b).count();
    }
    if total == 0 {
        return Err(Error::invalid("accuracy of an empty corpus is undefined"));
    }
    Ok(correct as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanScores {
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl SpanScores {
    pub fn from_counts(true_positives: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(true_positives, predicted);
        let recall = ratio(true_positives, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        SpanScores {
            true_positives,
            predicted,
            gold,
            precision,
            recall,
            f1,
        }
    }
}

fn span_counts(gold: &[Span], pred: &[Span]) -> usize {
    let mut remaining: HashMap<&Span, usize> = HashMap::new();
    for s in gold {
        *remaining.entry(s).or_default() += 1;
    }
    pred.iter()
        .filter(|s| match remaining.get_mut(s) {
            Some(n) if *n > 0 => {
                *n -= 1;
                true
            }
            _ => false,
        })
        .count()
}

/// Micro-averaged exact-match `(type, start, end)` span scores over BIOES label strings.
pub fn span_scores<S: AsRef<str>>(gold: &[Vec<S>], pred: &[Vec<S>]) -> Result<SpanScores> {
    if gold.len() != pred.len() {
        return Err(Error::invalid("gold and predicted corpora differ in size"));
    }
    let (mut tp, mut np, mut ng) = (0, 0, 0);
    for (g, p) in gold.iter().zip(pred) {
        if g.len() != p.len() {
            return Err(Error::invalid("gold and predicted sentences differ in length"));
        }
        if let Some(bad) = g.iter().chain(p).find(|l| !is_bioes_label(l.as_ref())) {
            return Err(Error::invalid(format!("`{}` is not a BIOES label", bad.as_ref())));
        }
        let gs = bioes_spans(g);
        let ps = bioes_spans(p);
        tp += span_counts(&gs, &ps);
        np += ps.len();
        ng += gs.len();
    }
    Ok(SpanScores::from_counts(tp, np, ng))
}

/// Predictions for every sentence, computed in parallel on a frozen model.
pub fn predict_all(model: &VslModel, sentences: &[Sentence]) -> Result<Vec<Vec<usize>>> {
    sentences.par_iter().map(|s| model.predict_labels(s)).collect()
}

fn gold_labels(sentences: &[Sentence]) -> Result<Vec<Vec<usize>>> {
    sentences
        .iter()
        .map(|s| {
            s.label_ids
                .clone()
                .ok_or_else(|| Error::invalid(format!("sentence {} has no gold labels", s.instance_index)))
        })
        .collect()
}

pub fn evaluate_tokens(model: &VslModel, sentences: &[Sentence]) -> Result<f64> {
    let gold = gold_labels(sentences)?;
    token_accuracy(&gold, &predict_all(model, sentences)?)
}

pub fn evaluate_spans(model: &VslModel, sentences: &[Sentence], labels: &Vocab) -> Result<SpanScores> {
    let report = evaluate(model, sentences, labels, DevMetric::SpanF1)?;
    Ok(report.spans.expect("span metric requested"))
}

/// Which number drives model selection on the development set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DevMetric {
    Accuracy,
    SpanF1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub token_accuracy: f64,
    pub spans: Option<SpanScores>,
}

impl EvalReport {
    pub fn metric(&self, which: DevMetric) -> f64 {
        match which {
            DevMetric::Accuracy => self.token_accuracy,
            DevMetric::SpanF1 => self.spans.map_or(0.0, |s| s.f1),
        }
    }
}

/// Accuracy always; span scores when `metric` asks for them.
pub fn evaluate(model: &VslModel, sentences: &[Sentence], labels: &Vocab, metric: DevMetric) -> Result<EvalReport> {
    let gold = gold_labels(sentences)?;
    let pred = predict_all(model, sentences)?;
    let token_accuracy = token_accuracy(&gold, &pred)?;
    let spans = match metric {
        DevMetric::Accuracy => None,
        DevMetric::SpanF1 => {
            let names = |ids: &[Vec<usize>]| -> Vec<Vec<&str>> {
                ids.iter()
                    .map(|s| s.iter().map(|&i| labels.token(i).unwrap_or("<invalid>")).collect())
                    .collect()
            };
            Some(span_scores(&names(&gold), &names(&pred))?)
        }
    };
    Ok(EvalReport { token_accuracy, spans })
}
