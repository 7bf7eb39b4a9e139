//! Pretrained word vectors in the common text format: an optional
//! `count dim` header, then `token v1 ... vdim` per line.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::data::vocab::Vocab;
use crate::error::{Error, Result};
use crate::nn::{PAD_ID, UNK_ID};
use crate::tensor::Tensor;

/// An initial embedding matrix aligned with a vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainedEmbeddings {
    pub matrix: Tensor,
    pub dim: usize,
    /// Vocabulary rows copied from the file.
    pub found: usize,
    /// Vocabulary rows (besides the specials) drawn from `U(-0.1, 0.1)`.
    pub random_rows: usize,
}

fn is_header(cols: &[&str]) -> bool {
    cols.len() == 2 && cols.iter().all(|c| c.parse::<usize>().is_ok())
}

/// Builds a `vocab.len() x dim` matrix. Rows of tokens present in the file
/// are copied, the others drawn from `U(-0.1, 0.1)`; the unknown row is the
/// mean of the copied vectors and the padding row is zero.
pub fn load_embeddings<R: Rng>(path: &Path, vocab: &Vocab, rng: &mut R) -> Result<PretrainedEmbeddings> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut dim: Option<usize> = None;
    let mut vectors: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
    let mut seen = HashSet::new();
    let mut found = 0;

    for (lineno, line) in text.lines().enumerate() {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        if lineno == 0 && is_header(&cols) {
            let d: usize = cols[1].parse().expect("checked by is_header");
            if d == 0 {
                return Err(err("declared dimension is zero".into()));
            }
            dim = Some(d);
            continue;
        }
        let values = &cols[1..];
        match dim {
            None if values.is_empty() => return Err(err("token without a vector".into())),
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(err(format!("expected {d} values, found {}", values.len())))
            }
            _ => {}
        }
        let token = cols[0];
        let Some(id) = vocab.id(token) else { continue };
        if id == UNK_ID || id == PAD_ID || !seen.insert(id) {
            continue;
        }
        let v = values
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| err(format!("bad value `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        vectors[id] = Some(v);
        found += 1;
    }

    let dim = dim.ok_or_else(|| Error::invalid(format!("{} holds no vectors", path.display())))?;
    if found == 0 {
        log::warn!(
            "no vocabulary token found in {}; all rows are random",
            path.display()
        );
    }
    let mut mean = vec![0.0; dim];
    for v in vectors.iter().flatten() {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x / found as f64;
        }
    }
    let mut data = Vec::with_capacity(vocab.len() * dim);
    let mut random_rows = 0;
    for (id, v) in vectors.into_iter().enumerate() {
        match (id, v) {
            (UNK_ID, _) if found > 0 => data.extend_from_slice(&mean),
            (PAD_ID, _) => data.extend(std::iter::repeat_n(0.0, dim)),
            (_, Some(v)) => data.extend(v),
            (id, None) => {
                if id != UNK_ID {
                    random_rows += 1;
                }
                data.extend((0..dim).map(|_| rng.random_range(-0.1..0.1)));
            }
        }
    }
    Ok(PretrainedEmbeddings {
        matrix: Tensor::new(vec![vocab.len(), dim], data)?,
        dim,
        found,
        random_rows,
    })
}
