//! The model-trace contract consumed by every metric, plus the built-in
//! reference model and the PTRC1 trace-file reader/writer.
//!
//! A [`ModelTrace`] is one teacher-forced pass over `prompt + content`. Only
//! the content positions are kept: row `t` of `out_probs` is the
//! distribution that predicts content token `t`, and `hidden[l][t]` is the
//! layer-`l` state at that position (layer 0 is the embedding layer).

mod ptrc;
mod reference;

pub use ptrc::{read_trace, read_trace_file, write_trace, write_trace_file, TraceHeader, PTRC_MAGIC, PTRC_VERSION};
pub use reference::{ReferenceModel, ReferenceProjector, REFERENCE_DIM, REFERENCE_LAYERS};

use crate::corpus::{build_prompt, Poem};
use crate::numerics::Matrix;
use crate::tokenizer::TokenId;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("token id {id} outside vocabulary of size {vocab}")]
    Vocab { id: TokenId, vocab: usize },
    #[error("content is empty")]
    EmptyContent,
    #[error("reference model needs a non-empty corpus")]
    EmptyCorpus,
    #[error("trace format error: {0}")]
    Format(String),
    #[error("trace dimension error: {0}")]
    Dimension(String),
    #[error("trace invariant violated: {0}")]
    Invariant(String),
    #[error("no trace for poem {0}")]
    MissingTrace(String),
    #[error("projector error: {0}")]
    Projector(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("adapter backend failure: {0}")]
    Backend(String),
}

pub type Result<T> = std::result::Result<T, AdapterError>;

/// Row-sum tolerance for traces produced in memory.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;
/// Row-sum tolerance accepted when reading dumped traces.
pub const FILE_ROW_SUM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelTrace {
    pub model_tag: String,
    pub token_ids: Vec<TokenId>,
    pub content_start: usize,
    pub vocab_size: usize,
    pub layers: usize,
    pub dim: usize,
    /// `T_content x V`, row-major.
    pub out_probs: Vec<f32>,
    /// `(L + 1) x T_content x D`, row-major.
    pub hidden: Vec<f32>,
    /// Character span `[start, end)` of each content token, when the
    /// tokenization is not one token per character.
    pub char_spans: Option<Vec<(usize, usize)>>,
}

impl ModelTrace {
    pub fn content_len(&self) -> usize {
        self.token_ids.len() - self.content_start
    }

    pub fn content_ids(&self) -> &[TokenId] {
        &self.token_ids[self.content_start..]
    }

    pub fn out_row(&self, t: usize) -> &[f32] {
        &self.out_probs[t * self.vocab_size..(t + 1) * self.vocab_size]
    }

    pub fn out_row_f64(&self, t: usize) -> Vec<f64> {
        self.out_row(t).iter().map(|&p| f64::from(p)).collect()
    }

    pub fn hidden_vec(&self, layer: usize, t: usize) -> &[f32] {
        let start = (layer * self.content_len() + t) * self.dim;
        &self.hidden[start..start + self.dim]
    }

    /// Layer `layer` as a `T_content x D` matrix.
    pub fn layer_matrix(&self, layer: usize) -> Matrix {
        let t = self.content_len();
        let start = layer * t * self.dim;
        let data = self.hidden[start..start + t * self.dim]
            .iter()
            .map(|&v| f64::from(v))
            .collect();
        Matrix::new(t, self.dim, data).expect("layer slice has T x D entries")
    }

    /// Character span of content token `t`.
    pub fn char_span(&self, t: usize) -> (usize, usize) {
        match &self.char_spans {
            Some(spans) => spans[t],
            None => (t, t + 1),
        }
    }

    /// Checks every structural invariant, with `tolerance` on row sums.
    pub fn validate(&self, tolerance: f64) -> Result<()> {
        if self.content_start >= self.token_ids.len() {
            return Err(AdapterError::EmptyContent);
        }
        let t = self.content_len();
        if self.vocab_size == 0 || self.dim == 0 {
            return Err(AdapterError::Dimension("V and D must be positive".into()));
        }
        if self.out_probs.len() != t * self.vocab_size {
            return Err(AdapterError::Dimension(format!(
                "out_probs has {} values, expected {}",
                self.out_probs.len(),
                t * self.vocab_size
            )));
        }
        if self.hidden.len() != (self.layers + 1) * t * self.dim {
            return Err(AdapterError::Dimension(format!(
                "hidden has {} values, expected {}",
                self.hidden.len(),
                (self.layers + 1) * t * self.dim
            )));
        }
        if let Some(&id) = self.token_ids.iter().find(|&&id| id as usize >= self.vocab_size) {
            return Err(AdapterError::Vocab {
                id,
                vocab: self.vocab_size,
            });
        }
        if let Some(spans) = &self.char_spans {
            if spans.len() != t {
                return Err(AdapterError::Dimension(format!(
                    "{} char spans for {t} content tokens",
                    spans.len()
                )));
            }
        }
        check_rows(&self.out_probs, self.vocab_size, tolerance, "out_probs")?;
        if self.hidden.iter().any(|v| !v.is_finite()) {
            return Err(AdapterError::Invariant("non-finite hidden state".into()));
        }
        Ok(())
    }
}

pub(crate) fn check_rows(values: &[f32], width: usize, tolerance: f64, what: &str) -> Result<()> {
    for (r, row) in values.chunks(width).enumerate() {
        if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(AdapterError::Invariant(format!("{what} row {r} has an invalid entry")));
        }
        let sum: f64 = row.iter().map(|&p| f64::from(p)).sum();
        if (sum - 1.0).abs() > tolerance {
            return Err(AdapterError::Invariant(format!("{what} row {r} sums to {sum}")));
        }
    }
    Ok(())
}

/// Maps a hidden state to a vocabulary distribution (early exit).
pub trait VocabProjector: Send + Sync {
    /// Distribution for the hidden state at (`layer`, content `position`).
    fn project(&self, layer: usize, position: usize, hidden: &[f32]) -> Result<Vec<f64>>;
}

/// Early-exit distributions read from a trace file, `(L + 1) x T x V`.
#[derive(Debug, Clone)]
pub struct StoredProjector {
    layers: usize,
    positions: usize,
    vocab: usize,
    data: Arc<Vec<f32>>,
}

impl StoredProjector {
    pub fn new(layers: usize, positions: usize, vocab: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != (layers + 1) * positions * vocab {
            return Err(AdapterError::Dimension("early-exit payload size".into()));
        }
        Ok(Self {
            layers,
            positions,
            vocab,
            data: Arc::new(data),
        })
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

impl VocabProjector for StoredProjector {
    fn project(&self, layer: usize, position: usize, _hidden: &[f32]) -> Result<Vec<f64>> {
        if layer > self.layers || position >= self.positions {
            return Err(AdapterError::Projector(format!(
                "no stored distribution at layer {layer}, position {position}"
            )));
        }
        let start = (layer * self.positions + position) * self.vocab;
        Ok(self.data[start..start + self.vocab].iter().map(|&p| f64::from(p)).collect())
    }
}

/// A trace plus whatever early-exit projection is available for it.
pub struct TracedPoem {
    pub trace: ModelTrace,
    pub projector: Option<Box<dyn VocabProjector>>,
}

/// Anything that can produce a trace for a poem.
pub trait TraceSource: Send + Sync {
    fn model_tag(&self) -> &str;
    fn trace_poem(&self, poem: &Poem) -> Result<TracedPoem>;
}

/// Traces previously dumped to `<dir>/<poem_id>.ptrc`.
#[derive(Debug, Clone)]
pub struct TraceDir {
    dir: PathBuf,
    model_tag: String,
}

impl TraceDir {
    pub fn new(dir: impl Into<PathBuf>, model_tag: impl Into<String>) -> Self {
        Self {
            dir: dir.into(),
            model_tag: model_tag.into(),
        }
    }

    pub fn path_for(&self, poem: &Poem) -> PathBuf {
        trace_path(&self.dir, poem)
    }
}

pub fn trace_path(dir: &Path, poem: &Poem) -> PathBuf {
    dir.join(format!("{}.ptrc", poem.id))
}

impl TraceSource for TraceDir {
    fn model_tag(&self) -> &str {
        &self.model_tag
    }

    fn trace_poem(&self, poem: &Poem) -> Result<TracedPoem> {
        let path = self.path_for(poem);
        if !path.exists() {
            return Err(AdapterError::MissingTrace(poem.id.to_string()));
        }
        let (trace, early) = read_trace_file(&path)?;
        Ok(TracedPoem {
            trace,
            projector: early.map(|p| Box::new(p) as Box<dyn VocabProjector>),
        })
    }
}

impl TraceSource for ReferenceModel {
    fn model_tag(&self) -> &str {
        ReferenceModel::model_tag(self)
    }

    fn trace_poem(&self, poem: &Poem) -> Result<TracedPoem> {
        let prompt = build_prompt(poem).map_err(|e| AdapterError::Backend(e.to_string()))?;
        let (trace, projector) = self.trace(&self.encode(&prompt), &self.encode(&poem.content))?;
        Ok(TracedPoem {
            trace,
            projector: Some(Box::new(projector)),
        })
    }
}
