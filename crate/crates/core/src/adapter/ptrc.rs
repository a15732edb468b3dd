//! PTRC1 container: `"PTRC1"`, `u8` version, `u32le` header length, JSON
//! header, then little-endian `f32` payload (`out_probs`, `hidden`, and
//! optionally per-layer early-exit distributions).

use super::{check_rows, AdapterError, ModelTrace, Result, StoredProjector, FILE_ROW_SUM_TOLERANCE};
use crate::tokenizer::TokenId;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const PTRC_MAGIC: &[u8; 5] = b"PTRC1";
pub const PTRC_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub model_tag: String,
    #[serde(rename = "V")]
    pub vocab: usize,
    #[serde(rename = "L")]
    pub layers: usize,
    #[serde(rename = "D")]
    pub dim: usize,
    #[serde(rename = "T_content")]
    pub t_content: usize,
    pub content_start: usize,
    pub token_ids: Vec<TokenId>,
    pub has_early_exit: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub char_spans: Option<Vec<(usize, usize)>>,
    /// Free-form producer metadata (e.g. hidden-state extraction point,
    /// top-k truncation), carried through unchanged.
    #[serde(default, flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn write_trace(trace: &ModelTrace, early_exit: Option<&[f32]>, mut out: impl Write) -> Result<()> {
    let header = TraceHeader {
        model_tag: trace.model_tag.clone(),
        vocab: trace.vocab_size,
        layers: trace.layers,
        dim: trace.dim,
        t_content: trace.content_len(),
        content_start: trace.content_start,
        token_ids: trace.token_ids.clone(),
        has_early_exit: early_exit.is_some(),
        char_spans: trace.char_spans.clone(),
        extra: Default::default(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| AdapterError::Format(e.to_string()))?;
    let mut buf = Vec::with_capacity(10 + json.len() + 4 * (trace.out_probs.len() + trace.hidden.len()));
    buf.extend_from_slice(PTRC_MAGIC);
    buf.push(PTRC_VERSION);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    put_f32s(&mut buf, &trace.out_probs);
    put_f32s(&mut buf, &trace.hidden);
    if let Some(e) = early_exit {
        put_f32s(&mut buf, e);
    }
    out.write_all(&buf).map_err(|e| AdapterError::Backend(e.to_string()))
}

pub fn write_trace_file(path: &Path, trace: &ModelTrace, early_exit: Option<&[f32]>) -> Result<()> {
    let mut buf = Vec::new();
    write_trace(trace, early_exit, &mut buf)?;
    std::fs::write(path, buf).map_err(|source| AdapterError::Io {
        path: path.to_owned(),
        source,
    })
}

fn take_f32s(bytes: &[u8], count: usize, what: &str) -> Result<(Vec<f32>, usize)> {
    let need = count
        .checked_mul(4)
        .ok_or_else(|| AdapterError::Dimension(format!("{what} size overflows")))?;
    if bytes.len() < need {
        return Err(AdapterError::Dimension(format!(
            "{what} needs {need} bytes, {} remain",
            bytes.len()
        )));
    }
    let values = bytes[..need]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((values, need))
}

/// Parses and validates a PTRC1 byte stream.
pub fn read_trace(mut input: impl Read) -> Result<(ModelTrace, Option<StoredProjector>)> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| AdapterError::Backend(e.to_string()))?;
    if bytes.len() < 10 || &bytes[..5] != PTRC_MAGIC {
        return Err(AdapterError::Format("bad magic".into()));
    }
    if bytes[5] != PTRC_VERSION {
        return Err(AdapterError::Format(format!("unsupported version {}", bytes[5])));
    }
    let header_len = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
    let body = &bytes[10..];
    if body.len() < header_len {
        return Err(AdapterError::Dimension("header truncated".into()));
    }
    let header: TraceHeader = serde_json::from_slice(&body[..header_len])
        .map_err(|e| AdapterError::Format(format!("header: {e}")))?;
    if header.token_ids.len() != header.content_start + header.t_content || header.t_content == 0 {
        return Err(AdapterError::Dimension(format!(
            "{} token ids for content_start {} and T_content {}",
            header.token_ids.len(),
            header.content_start,
            header.t_content
        )));
    }
    let mut payload = &body[header_len..];
    let (out_probs, used) = take_f32s(payload, header.t_content * header.vocab, "out_probs")?;
    payload = &payload[used..];
    let hidden_len = (header.layers + 1) * header.t_content * header.dim;
    let (hidden, used) = take_f32s(payload, hidden_len, "hidden")?;
    payload = &payload[used..];
    let early = if header.has_early_exit {
        let n = (header.layers + 1) * header.t_content * header.vocab;
        let (e, used) = take_f32s(payload, n, "early_exit")?;
        payload = &payload[used..];
        check_rows(&e, header.vocab, FILE_ROW_SUM_TOLERANCE, "early_exit")?;
        Some(StoredProjector::new(header.layers, header.t_content, header.vocab, e)?)
    } else {
        None
    };
    if !payload.is_empty() {
        return Err(AdapterError::Dimension(format!("{} trailing payload bytes", payload.len())));
    }
    let trace = ModelTrace {
        model_tag: header.model_tag,
        token_ids: header.token_ids,
        content_start: header.content_start,
        vocab_size: header.vocab,
        layers: header.layers,
        dim: header.dim,
        out_probs,
        hidden,
        char_spans: header.char_spans,
    };
    trace.validate(FILE_ROW_SUM_TOLERANCE)?;
    Ok((trace, early))
}

pub fn read_trace_file(path: &Path) -> Result<(ModelTrace, Option<StoredProjector>)> {
    let file = std::fs::File::open(path).map_err(|source| AdapterError::Io {
        path: path.to_owned(),
        source,
    })?;
    read_trace(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::VocabProjector;

    fn tiny() -> ModelTrace {
        ModelTrace {
            model_tag: "base".into(),
            token_ids: vec![0, 1, 2],
            content_start: 1,
            vocab_size: 3,
            layers: 1,
            dim: 2,
            out_probs: vec![0.5, 0.25, 0.25, 0.0, 1.0, 0.0],
            hidden: vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5, -0.5, 0.5],
            char_spans: None,
        }
    }

    fn bytes(trace: &ModelTrace, early: Option<&[f32]>) -> Vec<u8> {
        let mut buf = Vec::new();
        write_trace(trace, early, &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip() {
        let t = tiny();
        let (back, early) = read_trace(bytes(&t, None).as_slice()).unwrap();
        assert_eq!(back, t);
        assert!(early.is_none());

        let ee: Vec<f32> = [1.0f32 / 3.0; 12].to_vec();
        let (back, early) = read_trace(bytes(&t, Some(&ee)).as_slice()).unwrap();
        assert_eq!(back, t);
        let p = early.unwrap().project(1, 1, &[]).unwrap();
        assert_eq!(p, vec![f64::from(1.0f32 / 3.0); 3]);
    }

    #[test]
    fn truncated_payload_is_a_dimension_error() {
        let mut b = bytes(&tiny(), None);
        b.truncate(b.len() - 3);
        assert!(matches!(read_trace(b.as_slice()), Err(AdapterError::Dimension(_))));
    }

    #[test]
    fn bad_magic_and_version_are_format_errors() {
        let mut b = bytes(&tiny(), None);
        b[0] = b'X';
        assert!(matches!(read_trace(b.as_slice()), Err(AdapterError::Format(_))));
        let mut b = bytes(&tiny(), None);
        b[5] = 2;
        assert!(matches!(read_trace(b.as_slice()), Err(AdapterError::Format(_))));
    }

    #[test]
    fn unnormalized_rows_are_invariant_errors() {
        let mut t = tiny();
        t.out_probs[0] = 0.6;
        assert!(matches!(read_trace(bytes(&t, None).as_slice()), Err(AdapterError::Invariant(_))));
    }
}
