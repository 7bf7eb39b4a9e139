//! IOB to BIOES conversion and BIOES span decoding.

use serde::{Deserialize, Serialize};

/// A typed entity span covering positions `start..=end`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub kind: String,
    pub start: usize,
    pub end: usize,
}

fn split_tag(label: &str) -> Option<(char, &str)> {
    let mut chars = label.chars();
    let prefix = chars.next()?;
    let rest = chars.as_str();
    let kind = rest.strip_prefix('-')?;
    if kind.is_empty() {
        return None;
    }
    Some((prefix, kind))
}

/// Whether `label` is `O` or one of `B-`, `I-`, `E-`, `S-` followed by a type.
pub fn is_bioes_label(label: &str) -> bool {
    label == "O" || matches!(split_tag(label), Some(('B' | 'I' | 'E' | 'S', _)))
}

/// Recovers spans, counting `I-` tags that had to start a new span.
fn decode<S: AsRef<str>>(labels: &[S]) -> (Vec<Span>, usize) {
    let mut spans = Vec::new();
    let mut open: Option<Span> = None;
    let mut repairs = 0;
    let single = |kind: &str, t: usize| Span { kind: kind.to_string(), start: t, end: t };
    for (t, label) in labels.iter().enumerate() {
        match split_tag(label.as_ref()) {
            Some(('B', kind)) => {
                spans.extend(open.take());
                open = Some(single(kind, t));
            }
            Some(('I', kind)) => match open.as_mut() {
                Some(s) if s.kind == kind => s.end = t,
                _ => {
                    repairs += 1;
                    spans.extend(open.take());
                    open = Some(single(kind, t));
                }
            },
            Some(('E', kind)) => match open.take() {
                Some(mut s) if s.kind == kind => {
                    s.end = t;
                    spans.push(s);
                }
                prev => {
                    spans.extend(prev);
                    spans.push(single(kind, t));
                }
            },
            Some(('S', kind)) => {
                spans.extend(open.take());
                spans.push(single(kind, t));
            }
            _ => spans.extend(open.take()),
        }
    }
    spans.extend(open);
    (spans, repairs)
}

/// Converts IOB1/IOB2 labels to BIOES.
///
/// Returns the converted labels and the number of repairs: an `I-X` that
/// does not continue an `X` entity under IOB2 is treated as an entity start.
/// Labels already in BIOES form pass through unchanged.
pub fn to_bioes<S: AsRef<str>>(labels: &[S]) -> (Vec<String>, usize) {
    let (spans, repairs) = decode(labels);
    let mut out = vec!["O".to_string(); labels.len()];
    for s in spans {
        if s.start == s.end {
            out[s.start] = format!("S-{}", s.kind);
        } else {
            out[s.start] = format!("B-{}", s.kind);
            for label in &mut out[s.start + 1..s.end] {
                *label = format!("I-{}", s.kind);
            }
            out[s.end] = format!("E-{}", s.kind);
        }
    }
    (out, repairs)
}

/// Decodes BIOES labels into spans.
///
/// Ill-formed sequences are repaired deterministically: `B-`, `S-` and any
/// `I-`/`E-` that does not continue the open span start a new span; an open
/// span is closed (and kept) at `E-`, `S-`, `O`, a type change, or the end of
/// the sentence.
pub fn bioes_spans<S: AsRef<str>>(labels: &[S]) -> Vec<Span> {
    decode(labels).0
}
