//! Absolute (unigram) probability tables: building from raw text, merging,
//! and percent lookups.

use crate::tokenizer::{TokenEncoder, TokenId};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::BufRead;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const DEFAULT_BLOCK_SIZE: usize = 2048;

#[derive(Debug, Error)]
pub enum FreqError {
    #[error("corpus produced no countable tokens")]
    EmptyCorpus,
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("vocabulary sizes differ: {0} vs {1}")]
    ShapeMismatch(usize, usize),
    #[error("invalid merge weights: {0}")]
    InvalidWeights(String),
    #[error("token {id} at position {index} is outside the vocabulary")]
    OutOfVocab { index: usize, id: TokenId },
    #[error("malformed table: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreqTable {
    pub source_tag: String,
    pub vocab_size: usize,
    pub total_tokens: u64,
    pub probs: Vec<f64>,
}

impl FreqTable {
    pub fn from_counts(source_tag: impl Into<String>, counts: &[u64]) -> Result<Self, FreqError> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(FreqError::EmptyCorpus);
        }
        Ok(FreqTable {
            source_tag: source_tag.into(),
            vocab_size: counts.len(),
            total_tokens: total,
            probs: counts.iter().map(|&c| c as f64 / total as f64).collect(),
        })
    }

    pub fn validate(&self) -> Result<(), FreqError> {
        if self.vocab_size == 0 || self.probs.len() != self.vocab_size {
            return Err(FreqError::Format(format!(
                "vocab_size {} with {} probabilities",
                self.vocab_size,
                self.probs.len()
            )));
        }
        if self.probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(FreqError::Format("negative or non-finite probability".into()));
        }
        let sum: f64 = self.probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(FreqError::Format(format!("probabilities sum to {sum}")));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FreqError> {
        let text = std::fs::read_to_string(path).map_err(|source| FreqError::Io {
            path: path.to_owned(),
            source,
        })?;
        let table: FreqTable =
            serde_json::from_str(&text).map_err(|e| FreqError::Format(e.to_string()))?;
        table.validate()?;
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<(), FreqError> {
        let json = serde_json::to_string(self).map_err(|e| FreqError::Format(e.to_string()))?;
        std::fs::write(path, json).map_err(|source| FreqError::Io {
            path: path.to_owned(),
            source,
        })
    }
}

/// Adds the tokens of `line` to `counts`, encoding consecutive blocks of
/// `block_size` characters separately.
pub fn count_line(line: &str, tokenizer: &dyn TokenEncoder, block_size: usize, counts: &mut [u64]) {
    let block_size = block_size.max(1);
    let mut chars = line.char_indices().map(|(i, _)| i).step_by(block_size).peekable();
    while let Some(start) = chars.next() {
        let end = chars.peek().copied().unwrap_or(line.len());
        for id in tokenizer.encode(&line[start..end]) {
            if let Some(slot) = counts.get_mut(id as usize) {
                *slot += 1;
            }
        }
    }
}

fn count_file(path: &Path, tokenizer: &dyn TokenEncoder, block_size: usize) -> Result<Vec<u64>, FreqError> {
    let io_err = |source| FreqError::Io {
        path: path.to_owned(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io_err)?;
    let mut counts = vec![0u64; tokenizer.vocab_size()];
    for line in std::io::BufReader::new(file).lines() {
        count_line(&line.map_err(io_err)?, tokenizer, block_size, &mut counts);
    }
    Ok(counts)
}

/// Counts tokens over every line of every file (line terminators excluded)
/// and normalizes. Files are counted in parallel and reduced by summation.
pub fn build_table<T: TokenEncoder + Sync>(
    source_tag: &str,
    files: &[PathBuf],
    tokenizer: &T,
    block_size: usize,
) -> Result<FreqTable, FreqError> {
    let per_file: Vec<Vec<u64>> = files
        .par_iter()
        .map(|f| count_file(f, tokenizer, block_size))
        .collect::<Result<_, _>>()?;
    let mut counts = vec![0u64; tokenizer.vocab_size()];
    for file_counts in per_file {
        for (c, v) in counts.iter_mut().zip(file_counts) {
            *c += v;
        }
    }
    FreqTable::from_counts(source_tag, &counts)
}

/// Weighted arithmetic mean of tables (equal weights by default),
/// renormalized to sum to one.
pub fn merge_tables(tables: &[FreqTable], weights: Option<&[f64]>) -> Result<FreqTable, FreqError> {
    let first = tables.first().ok_or(FreqError::EmptyCorpus)?;
    for t in tables {
        if t.vocab_size != first.vocab_size || t.probs.len() != first.vocab_size {
            return Err(FreqError::ShapeMismatch(first.vocab_size, t.vocab_size));
        }
    }
    let weights: Vec<f64> = match weights {
        Some(w) => {
            if w.len() != tables.len() {
                return Err(FreqError::InvalidWeights(format!(
                    "{} weights for {} tables",
                    w.len(),
                    tables.len()
                )));
            }
            if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(FreqError::InvalidWeights("weights must be non-negative".into()));
            }
            if w.iter().all(|x| *x == 0.0) {
                return Err(FreqError::InvalidWeights("all weights are zero".into()));
            }
            w.to_vec()
        }
        None => vec![1.0; tables.len()],
    };
    let wsum: f64 = weights.iter().sum();
    let mut probs = vec![0.0; first.vocab_size];
    for (t, w) in tables.iter().zip(&weights) {
        for (p, q) in probs.iter_mut().zip(&t.probs) {
            *p += w * q;
        }
    }
    probs.iter_mut().for_each(|p| *p /= wsum);
    let norm: f64 = probs.iter().sum();
    if norm > 0.0 && norm != 1.0 {
        probs.iter_mut().for_each(|p| *p /= norm);
    }
    let mut tags: Vec<&str> = tables.iter().map(|t| t.source_tag.as_str()).collect();
    tags.dedup();
    Ok(FreqTable {
        source_tag: tags.join("+"),
        vocab_size: first.vocab_size,
        total_tokens: tables.iter().map(|t| t.total_tokens).sum(),
        probs,
    })
}

/// `100 * p[id]` for each token.
pub fn lookup_sequence(table: &FreqTable, token_ids: &[TokenId]) -> Result<Vec<f64>, FreqError> {
    token_ids
        .iter()
        .enumerate()
        .map(|(index, &id)| {
            table
                .probs
                .get(id as usize)
                .map(|p| 100.0 * p)
                .ok_or(FreqError::OutOfVocab { index, id })
        })
        .collect()
}
