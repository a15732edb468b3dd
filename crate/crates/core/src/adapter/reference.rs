use super::{AdapterError, ModelTrace, Result, VocabProjector, ROW_SUM_TOLERANCE};
use crate::corpus::Poem;
use crate::rng::SplitMix64;
use crate::tokenizer::{CharTokenizer, TokenEncoder, TokenId};
use std::collections::HashMap;
use std::sync::Arc;

pub const REFERENCE_DIM: usize = 16;
pub const REFERENCE_LAYERS: usize = 4;

const SELF_WEIGHT: f64 = 0.7;
const CONTEXT_WEIGHT: f64 = 0.3;

struct Weights {
    vocab: usize,
    /// Bigram successor counts per predecessor token.
    successors: Vec<HashMap<TokenId, u32>>,
    totals: Vec<u64>,
    /// `V x D` token embeddings, shared with the early-exit head.
    embeddings: Vec<f64>,
}

impl Weights {
    fn embedding(&self, id: TokenId) -> &[f64] {
        let s = id as usize * REFERENCE_DIM;
        &self.embeddings[s..s + REFERENCE_DIM]
    }

    /// Add-one smoothed `P(next | prev)`.
    fn bigram_row(&self, prev: Option<TokenId>) -> Vec<f64> {
        let v = self.vocab as f64;
        match prev {
            Some(p) => {
                let denom = self.totals[p as usize] as f64 + v;
                let mut row = vec![1.0 / denom; self.vocab];
                for (&next, &c) in &self.successors[p as usize] {
                    row[next as usize] = (f64::from(c) + 1.0) / denom;
                }
                row
            }
            None => vec![1.0 / v; self.vocab],
        }
    }
}

/// Deterministic stand-in language model: character tokenizer, add-one
/// bigram output head, seeded embeddings and a causal-mean mixing stack of
/// [`REFERENCE_LAYERS`] layers.
#[derive(Clone)]
pub struct ReferenceModel {
    seed: u64,
    tag: String,
    tokenizer: CharTokenizer,
    weights: Arc<Weights>,
}

impl std::fmt::Debug for ReferenceModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReferenceModel")
            .field("seed", &self.seed)
            .field("vocab", &self.weights.vocab)
            .finish()
    }
}

/// Coordinates in `[-1, 1)` from SplitMix64 seeded with `seed ^ token`.
pub(crate) fn embedding_for(seed: u64, token: TokenId) -> [f64; REFERENCE_DIM] {
    let mut rng = SplitMix64::new(seed ^ u64::from(token));
    std::array::from_fn(|_| rng.next_signed())
}

fn unit(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

impl ReferenceModel {
    pub fn new<'a>(seed: u64, corpus: impl IntoIterator<Item = &'a Poem>) -> Result<Self> {
        let poems: Vec<&Poem> = corpus.into_iter().collect();
        if poems.is_empty() {
            return Err(AdapterError::EmptyCorpus);
        }
        let tokenizer = CharTokenizer::from_poems(poems.iter().copied());
        let vocab = tokenizer.vocab_size();
        let mut successors = vec![HashMap::new(); vocab];
        let mut totals = vec![0u64; vocab];
        for poem in &poems {
            let ids = tokenizer.encode(&poem.content);
            for w in ids.windows(2) {
                *successors[w[0] as usize].entry(w[1]).or_insert(0) += 1;
                totals[w[0] as usize] += 1;
            }
        }
        let embeddings = (0..vocab as TokenId).flat_map(|t| embedding_for(seed, t)).collect();
        Ok(ReferenceModel {
            seed,
            tag: "reference".into(),
            tokenizer,
            weights: Arc::new(Weights {
                vocab,
                successors,
                totals,
                embeddings,
            }),
        })
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = tag.into();
        self
    }

    pub fn model_tag(&self) -> &str {
        &self.tag
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tokenizer(&self) -> &CharTokenizer {
        &self.tokenizer
    }

    pub fn vocab_size(&self) -> usize {
        self.weights.vocab
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        self.tokenizer.encode(text)
    }

    /// Add-one smoothed bigram distribution following `prev`.
    pub fn bigram_row(&self, prev: TokenId) -> Vec<f64> {
        self.weights.bigram_row(Some(prev))
    }

    /// Hidden stack over a full token sequence: `(L + 1) x n x D`, with
    /// `h[l][i] = unit(0.7 h[l-1][i] + 0.3 mean(h[l-1][0..=i]))`.
    pub fn hidden_states(&self, ids: &[TokenId]) -> Vec<Vec<[f64; REFERENCE_DIM]>> {
        let mut layers = Vec::with_capacity(REFERENCE_LAYERS + 1);
        layers.push(
            ids.iter()
                .map(|&id| {
                    let mut e = [0.0; REFERENCE_DIM];
                    e.copy_from_slice(self.weights.embedding(id));
                    e
                })
                .collect::<Vec<_>>(),
        );
        for l in 1..=REFERENCE_LAYERS {
            let prev = &layers[l - 1];
            let mut running = [0.0; REFERENCE_DIM];
            let mut next = Vec::with_capacity(prev.len());
            for (i, h) in prev.iter().enumerate() {
                for (r, x) in running.iter_mut().zip(h) {
                    *r += x;
                }
                let count = (i + 1) as f64;
                let mut out = [0.0; REFERENCE_DIM];
                for d in 0..REFERENCE_DIM {
                    out[d] = SELF_WEIGHT * h[d] + CONTEXT_WEIGHT * (running[d] / count);
                }
                unit(&mut out);
                next.push(out);
            }
            layers.push(next);
        }
        layers
    }

    /// Teacher-forced pass over `prompt_ids ++ content_ids`.
    pub fn trace(&self, prompt_ids: &[TokenId], content_ids: &[TokenId]) -> Result<(ModelTrace, ReferenceProjector)> {
        if content_ids.is_empty() {
            return Err(AdapterError::EmptyContent);
        }
        let vocab = self.weights.vocab;
        if let Some(&id) = prompt_ids
            .iter()
            .chain(content_ids)
            .find(|&&id| id as usize >= vocab)
        {
            return Err(AdapterError::Vocab { id, vocab });
        }
        let token_ids: Vec<TokenId> = prompt_ids.iter().chain(content_ids).copied().collect();
        let start = prompt_ids.len();
        let t_content = content_ids.len();

        let mut out_probs = Vec::with_capacity(t_content * vocab);
        for t in 0..t_content {
            let prev = (start + t).checked_sub(1).map(|i| token_ids[i]);
            out_probs.extend(self.weights.bigram_row(prev).into_iter().map(|p| p as f32));
        }

        let stack = self.hidden_states(&token_ids);
        let mut hidden = Vec::with_capacity((REFERENCE_LAYERS + 1) * t_content * REFERENCE_DIM);
        for layer in &stack {
            for h in &layer[start..] {
                hidden.extend(h.iter().map(|&x| x as f32));
            }
        }

        let trace = ModelTrace {
            model_tag: self.tag.clone(),
            token_ids,
            content_start: start,
            vocab_size: vocab,
            layers: REFERENCE_LAYERS,
            dim: REFERENCE_DIM,
            out_probs,
            hidden,
            char_spans: None,
        };
        trace.validate(ROW_SUM_TOLERANCE)?;
        let projector = ReferenceProjector {
            weights: Arc::clone(&self.weights),
            final_rows: Arc::new(trace.out_probs.clone()),
        };
        Ok((trace, projector))
    }
}

/// Early-exit head of the reference model: `softmax(E h)` with the tied
/// embedding matrix below the top layer, and the trace's own output rows at
/// the top layer.
pub struct ReferenceProjector {
    weights: Arc<Weights>,
    final_rows: Arc<Vec<f32>>,
}

impl VocabProjector for ReferenceProjector {
    fn project(&self, layer: usize, position: usize, hidden: &[f32]) -> Result<Vec<f64>> {
        let v = self.weights.vocab;
        if layer == REFERENCE_LAYERS {
            let row = self
                .final_rows
                .get(position * v..(position + 1) * v)
                .ok_or_else(|| AdapterError::Projector(format!("position {position} out of range")))?;
            return Ok(row.iter().map(|&p| f64::from(p)).collect());
        }
        if layer > REFERENCE_LAYERS || hidden.len() != REFERENCE_DIM {
            return Err(AdapterError::Projector(format!(
                "layer {layer} with a {}-dimensional state",
                hidden.len()
            )));
        }
        let logits: Vec<f64> = self
            .weights
            .embeddings
            .chunks(REFERENCE_DIM)
            .map(|row| row.iter().zip(hidden).map(|(w, &h)| w * f64::from(h)).sum())
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        Ok(exps.into_iter().map(|e| e / total).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Genre;

    fn poem(content: &str, brk: usize) -> Poem {
        Poem::new(Genre::Ci, "t", Some("c".into()), content, None, Vec::new(), Some(brk)).unwrap()
    }

    #[test]
    fn embeddings_follow_the_seeded_stream() {
        let mut rng = SplitMix64::new(7 ^ 3);
        let first = rng.next_signed();
        assert_eq!(embedding_for(7, 3)[0], first);
    }

    #[test]
    fn same_inputs_same_trace() {
        let corpus = [poem("春风又绿江南岸", 3), poem("明月何时照我还", 4)];
        let a = ReferenceModel::new(7, &corpus).unwrap();
        let b = ReferenceModel::new(7, &corpus).unwrap();
        let ids = a.encode("春风明月");
        let (ta, _) = a.trace(&a.encode("题"), &ids).unwrap();
        let (tb, _) = b.trace(&b.encode("题"), &ids).unwrap();
        assert_eq!(ta, tb);
        let (tc, _) = ReferenceModel::new(8, &corpus).unwrap().trace(&[], &ids).unwrap();
        assert_ne!(ta.hidden, tc.hidden);
    }

    #[test]
    fn empty_corpus_and_content_are_rejected() {
        assert!(matches!(ReferenceModel::new(1, &[]), Err(AdapterError::EmptyCorpus)));
        let m = ReferenceModel::new(1, &[poem("一二三", 1)]).unwrap();
        assert!(matches!(m.trace(&[1], &[]), Err(AdapterError::EmptyContent)));
        assert!(matches!(m.trace(&[], &[99]), Err(AdapterError::Vocab { id: 99, .. })));
    }

    #[test]
    fn bigram_rows_are_normalized() {
        let m = ReferenceModel::new(1, &[poem("一二一三一二", 2)]).unwrap();
        for id in 0..m.vocab_size() as TokenId {
            let s: f64 = m.bigram_row(id).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        // "一" is followed by 二 twice and 三 once: (2 + 1) / (3 + V)
        let yi = m.tokenizer().token('一');
        let er = m.tokenizer().token('二');
        assert!((m.bigram_row(yi)[er as usize] - 3.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn first_layer_of_single_token_is_embedding_direction() {
        let m = ReferenceModel::new(3, &[poem("山水", 1)]).unwrap();
        let id = m.tokenizer().token('山');
        let stack = m.hidden_states(&[id]);
        let mut e = stack[0][0];
        unit(&mut e);
        for (a, b) in stack[1][0].iter().zip(&e) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn projector_reproduces_final_distribution() {
        let m = ReferenceModel::new(11, &[poem("白日依山尽黄河入海流", 5)]).unwrap();
        let (trace, proj) = m.trace(&m.encode("登楼"), &m.encode("白日依山尽")).unwrap();
        for t in 0..trace.content_len() {
            let top = proj.project(REFERENCE_LAYERS, t, trace.hidden_vec(REFERENCE_LAYERS, t)).unwrap();
            assert_eq!(top, trace.out_row_f64(t));
            let mid = proj.project(1, t, trace.hidden_vec(1, t)).unwrap();
            assert!((mid.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
