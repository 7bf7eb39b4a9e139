//! Whitespace-separated column files with blank lines between sentences.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Tokens of one sentence and, when a label column was read, their labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSentence {
    pub words: Vec<String>,
    pub labels: Option<Vec<String>>,
}

impl RawSentence {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn unlabeled(&self) -> RawSentence {
        RawSentence {
            words: self.words.clone(),
            labels: None,
        }
    }
}

pub fn read_conll(path: &Path, word_column: usize, label_column: Option<usize>) -> Result<Vec<RawSentence>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_conll(&text, path, word_column, label_column)
}

/// Parses column text. `-DOCSTART-` lines act as sentence separators.
/// Every non-blank line must have the same number of columns.
pub fn parse_conll(
    text: &str,
    path: &Path,
    word_column: usize,
    label_column: Option<usize>,
) -> Result<Vec<RawSentence>> {
    let needed = word_column.max(label_column.unwrap_or(0)) + 1;
    let mut sentences = Vec::new();
    let mut words = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;

    let mut flush = |words: &mut Vec<String>, labels: &mut Vec<String>| {
        if !words.is_empty() {
            sentences.push(RawSentence {
                words: std::mem::take(words),
                labels: label_column.map(|_| std::mem::take(labels)),
            });
        }
        labels.clear();
    };

    for (lineno, line) in text.lines().enumerate() {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() || cols[0] == "-DOCSTART-" {
            flush(&mut words, &mut labels);
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        match width {
            None => width = Some(cols.len()),
            Some(w) if w != cols.len() => {
                return Err(parse_err(format!(
                    "ragged columns: expected {w}, found {}",
                    cols.len()
                )))
            }
            _ => {}
        }
        if cols.len() < needed {
            return Err(parse_err(format!(
                "need at least {needed} columns, found {}",
                cols.len()
            )));
        }
        words.push(cols[word_column].to_string());
        if let Some(lc) = label_column {
            labels.push(cols[lc].to_string());
        }
    }
    flush(&mut words, &mut labels);
    Ok(sentences)
}

/// Writes `word[\tlabel]` lines with a blank line after each sentence.
pub fn write_conll(path: &Path, sentences: &[RawSentence]) -> Result<()> {
    let mut out = Vec::new();
    for s in sentences {
        for (i, w) in s.words.iter().enumerate() {
            match &s.labels {
                Some(l) => writeln!(out, "{w}\t{}", l[i]),
                None => writeln!(out, "{w}"),
            }
            .expect("writing to a Vec cannot fail");
        }
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Maps every ASCII decimal digit to `0`.
pub fn preprocess_ner(token: &str) -> String {
    token
        .chars()
        .map(|c| if c.is_ascii_digit() { '0' } else { c })
        .collect()
}
