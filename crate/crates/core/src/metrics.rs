//! Per-poem metrics computed from one model trace.

use crate::adapter::{ModelTrace, TracedPoem, VocabProjector};
use crate::corpus::{Poem, PoemId, Segment};
use crate::freqtab::{lookup_sequence, FreqError, FreqTable};
use crate::numerics::{self, adf_test, cosine_distance, entropy, jsd, kl, AdfDecision, AdfResult, Matrix, NumericsError, KL_EPSILON};
use crate::store::MetricValue;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("metric needs at least two content positions")]
    SinglePosition,
    #[error("projector error: {0}")]
    Projector(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Freq(#[from] FreqError),
    #[error("{metric}: {source}")]
    InMetric {
        metric: &'static str,
        #[source]
        source: Box<MetricError>,
    },
}

pub type Result<T> = std::result::Result<T, MetricError>;

trait WithMetric<T> {
    fn metric(self, name: &'static str) -> Result<T>;
}

impl<T, E: Into<MetricError>> WithMetric<T> for std::result::Result<T, E> {
    fn metric(self, name: &'static str) -> Result<T> {
        self.map_err(|e| MetricError::InMetric {
            metric: name,
            source: Box::new(e.into()),
        })
    }
}

/// Hidden dimension up to which covariance and Gram matrices are kept whole.
pub const FULL_MATRIX_MAX_DIM: usize = 64;

#[derive(Debug, Clone, Copy, Default)]
pub struct MetricsOptions {
    /// Keep full D x D matrices even above [`FULL_MATRIX_MAX_DIM`].
    pub full_matrices: bool,
}

/// Per-layer feature matrices, either whole or as `[mean, max, frobenius]`.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerMatrices {
    Full(Vec<Matrix>),
    Summary(Vec<[f64; 3]>),
}

impl LayerMatrices {
    fn build(mats: Vec<Matrix>, full: bool) -> Self {
        if full {
            return LayerMatrices::Full(mats);
        }
        LayerMatrices::Summary(
            mats.iter()
                .map(|m| {
                    let v = m.as_slice();
                    let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
                    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let fro = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    [mean, max, fro]
                })
                .collect(),
        )
    }

    fn to_value(&self) -> MetricValue {
        match self {
            LayerMatrices::Full(mats) => MetricValue::Nested(
                mats.iter()
                    .map(|m| MetricValue::Nested(m.row_iter().map(|r| MetricValue::Array(r.to_vec())).collect()))
                    .collect(),
            ),
            LayerMatrices::Summary(s) => {
                MetricValue::Nested(s.iter().map(|x| MetricValue::Array(x.to_vec())).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoemMetrics {
    pub poem_id: PoemId,
    pub model_tag: String,
    pub ppl_whole: f64,
    pub ppl_segments: Vec<f64>,
    pub entropy_seq: Vec<f64>,
    /// `None` when the series is too short or degenerate for the test.
    pub entropy_adf: Option<AdfResult>,
    /// Mean entropy over each segment's positions.
    pub entropy_segments: Vec<f64>,
    pub abs_prob_seq: Vec<f64>,
    pub prob_kld_seq: Vec<f64>,
    pub hd_dist: Vec<f64>,
    /// `(L + 1) x T`; `None` when the trace carries no early-exit head.
    pub early_exit_jsd: Option<Vec<Vec<f64>>>,
    pub hd_abs_cov: LayerMatrices,
    pub hd_gram: LayerMatrices,
}

/// Metric names written to the store for a poem.
pub mod names {
    pub const PPL_WHOLE: &str = "ppl_whole";
    pub const PPL_SEGMENTS: &str = "ppl_segments";
    pub const ENTROPY_SEQ: &str = "entropy_seq";
    pub const ENTROPY_ADF: &str = "entropy_adf";
    pub const ENTROPY_SEGMENTS: &str = "entropy_segments";
    pub const ABS_PROB_SEQ: &str = "abs_prob_seq";
    pub const PROB_KLD_SEQ: &str = "prob_kld_seq";
    pub const HD_DIST: &str = "hd_dist";
    pub const EARLY_EXIT_JSD: &str = "early_exit_jsd";
    pub const HD_ABS_COV: &str = "hd_abs_cov";
    pub const HD_GRAM: &str = "hd_gram";
}

fn flat(v: &[f64]) -> MetricValue {
    MetricValue::Array(v.to_vec())
}

/// `[statistic, lags_used, 1 if the unit root is rejected else 0]`, or an
/// empty array when the test was not applicable.
pub fn adf_to_array(r: Option<&AdfResult>) -> Vec<f64> {
    match r {
        Some(r) => vec![
            r.statistic,
            r.lags_used as f64,
            if r.decision_5pct == AdfDecision::RejectUnitRoot { 1.0 } else { 0.0 },
        ],
        None => Vec::new(),
    }
}

impl PoemMetrics {
    pub fn to_entries(&self) -> BTreeMap<String, MetricValue> {
        use names::*;
        let mut m = BTreeMap::new();
        m.insert(PPL_WHOLE.into(), flat(&[self.ppl_whole]));
        m.insert(PPL_SEGMENTS.into(), flat(&self.ppl_segments));
        m.insert(ENTROPY_SEQ.into(), flat(&self.entropy_seq));
        m.insert(ENTROPY_ADF.into(), flat(&adf_to_array(self.entropy_adf.as_ref())));
        m.insert(ENTROPY_SEGMENTS.into(), flat(&self.entropy_segments));
        m.insert(ABS_PROB_SEQ.into(), flat(&self.abs_prob_seq));
        m.insert(PROB_KLD_SEQ.into(), flat(&self.prob_kld_seq));
        m.insert(HD_DIST.into(), flat(&self.hd_dist));
        if let Some(rows) = &self.early_exit_jsd {
            m.insert(
                EARLY_EXIT_JSD.into(),
                MetricValue::Nested(rows.iter().map(|r| flat(r)).collect()),
            );
        }
        m.insert(HD_ABS_COV.into(), self.hd_abs_cov.to_value());
        m.insert(HD_GRAM.into(), self.hd_gram.to_value());
        m
    }
}

/// Content-token positions owned by each segment. A token belongs to the
/// segment containing the first character of its span.
pub fn segment_positions(trace: &ModelTrace, segments: &[Segment]) -> Result<Vec<Vec<usize>>> {
    let t = trace.content_len();
    if trace.char_spans.is_none() {
        let chars = segments.last().map_or(0, |s| s.end);
        if chars != t {
            return Err(MetricError::Alignment(format!(
                "{t} content tokens for {chars} characters and no character spans"
            )));
        }
    }
    let mut owned = vec![Vec::new(); segments.len()];
    for pos in 0..t {
        let (start, _) = trace.char_span(pos);
        if let Some(s) = segments.iter().position(|s| s.contains(start)) {
            owned[s].push(pos);
        }
    }
    if let Some(i) = owned.iter().position(Vec::is_empty) {
        return Err(MetricError::Alignment(format!("segment {i} maps to no tokens")));
    }
    Ok(owned)
}

fn gold_nll(trace: &ModelTrace, pos: usize) -> f64 {
    let gold = trace.content_ids()[pos] as usize;
    -f64::from(trace.out_row(pos)[gold]).ln()
}

/// Whole-poem and per-segment perplexity, each segment scored in the single
/// teacher-forced pass (full preceding context).
pub fn perplexity(trace: &ModelTrace, segments: &[Segment]) -> Result<(f64, Vec<f64>)> {
    let owned = segment_positions(trace, segments)?;
    let nll: Vec<f64> = (0..trace.content_len()).map(|p| gold_nll(trace, p)).collect();
    let whole = (nll.iter().sum::<f64>() / nll.len() as f64).exp();
    let per_segment = owned
        .iter()
        .map(|pos| (pos.iter().map(|&p| nll[p]).sum::<f64>() / pos.len() as f64).exp())
        .collect();
    Ok((whole, per_segment))
}

fn normalized_row(trace: &ModelTrace, t: usize) -> Vec<f64> {
    let row = trace.out_row_f64(t);
    let s: f64 = row.iter().sum();
    row.into_iter().map(|p| p / s).collect()
}

/// Per-position output entropy (rows renormalized in f64) and the ADF test
/// over it. The test is reported as not applicable for short or degenerate
/// series.
pub fn entropy_sequence(trace: &ModelTrace) -> (Vec<f64>, Option<AdfResult>) {
    let seq: Vec<f64> = (0..trace.content_len())
        .map(|t| entropy(&normalized_row(trace, t)))
        .collect();
    let adf = adf_test(&seq, None).ok();
    (seq, adf)
}

pub fn abs_prob_sequence(trace: &ModelTrace, table: &FreqTable) -> Result<Vec<f64>> {
    Ok(lookup_sequence(table, trace.content_ids())?)
}

/// `KL(out_probs[t] || table)` per position, in nats.
pub fn prob_kld_sequence(trace: &ModelTrace, table: &FreqTable) -> Result<Vec<f64>> {
    if table.vocab_size != trace.vocab_size {
        return Err(NumericsError::ShapeMismatch(format!(
            "table vocabulary {} vs trace vocabulary {}",
            table.vocab_size, trace.vocab_size
        ))
        .into());
    }
    (0..trace.content_len())
        .map(|t| Ok(kl(&trace.out_row_f64(t), &table.probs, KL_EPSILON)?))
        .collect()
}

fn mean_pairwise_cosine(m: &Matrix) -> Result<f64> {
    let t = m.rows();
    let mut acc = 0.0;
    for i in 0..t {
        for j in (i + 1)..t {
            acc += cosine_distance(m.row(i), m.row(j))?;
        }
    }
    Ok(acc / (t * (t - 1) / 2) as f64)
}

/// Mean cosine distance over all unordered position pairs, per layer.
pub fn hidden_distances(trace: &ModelTrace) -> Result<Vec<f64>> {
    if trace.content_len() < 2 {
        return Err(MetricError::SinglePosition);
    }
    (0..=trace.layers)
        .map(|l| mean_pairwise_cosine(&trace.layer_matrix(l)))
        .collect()
}

/// `jsd(project(h[l][t]), out_probs[t])` for every layer and position.
pub fn early_exit_jsd(trace: &ModelTrace, projector: &dyn VocabProjector) -> Result<Vec<Vec<f64>>> {
    let finals: Vec<Vec<f64>> = (0..trace.content_len()).map(|t| trace.out_row_f64(t)).collect();
    (0..=trace.layers)
        .map(|l| {
            finals
                .iter()
                .enumerate()
                .map(|(t, fin)| {
                    let early = projector
                        .project(l, t, trace.hidden_vec(l, t))
                        .map_err(|e| MetricError::Projector(e.to_string()))?;
                    Ok(jsd(&early, fin)?)
                })
                .collect()
        })
        .collect()
}

/// Elementwise absolute feature covariance per layer (population, `1/T`).
pub fn hidden_abs_cov(trace: &ModelTrace) -> Result<Vec<Matrix>> {
    let t = trace.content_len();
    if t < 2 {
        return Err(MetricError::SinglePosition);
    }
    Ok((0..=trace.layers)
        .map(|l| {
            let cov = trace.layer_matrix(l).centered().gram(t as f64);
            let (r, c) = cov.shape();
            Matrix::new(r, c, cov.as_slice().iter().map(|v| v.abs()).collect()).expect("same shape")
        })
        .collect())
}

/// `X^T X / T` per layer.
pub fn hidden_gram(trace: &ModelTrace) -> Vec<Matrix> {
    let t = trace.content_len() as f64;
    (0..=trace.layers).map(|l| trace.layer_matrix(l).gram(t)).collect()
}

/// Every per-poem metric for one trace.
pub fn compute_all(poem: &Poem, traced: &TracedPoem, table: &FreqTable, opts: MetricsOptions) -> Result<PoemMetrics> {
    let trace = &traced.trace;
    let (ppl_whole, ppl_segments) = perplexity(trace, &poem.segments).metric(names::PPL_SEGMENTS)?;
    let (entropy_seq, entropy_adf) = entropy_sequence(trace);
    let owned = segment_positions(trace, &poem.segments).metric(names::ENTROPY_SEGMENTS)?;
    let entropy_segments = owned
        .iter()
        .map(|pos| pos.iter().map(|&p| entropy_seq[p]).sum::<f64>() / pos.len() as f64)
        .collect();
    let abs_prob_seq = abs_prob_sequence(trace, table).metric(names::ABS_PROB_SEQ)?;
    let prob_kld_seq = prob_kld_sequence(trace, table).metric(names::PROB_KLD_SEQ)?;
    let hd_dist = hidden_distances(trace).metric(names::HD_DIST)?;
    let early = match &traced.projector {
        Some(p) => Some(early_exit_jsd(trace, p.as_ref()).metric(names::EARLY_EXIT_JSD)?),
        None => None,
    };
    let full = opts.full_matrices || trace.dim <= FULL_MATRIX_MAX_DIM;
    let hd_abs_cov = LayerMatrices::build(hidden_abs_cov(trace).metric(names::HD_ABS_COV)?, full);
    let hd_gram = LayerMatrices::build(hidden_gram(trace), full);
    Ok(PoemMetrics {
        poem_id: poem.id.clone(),
        model_tag: trace.model_tag.clone(),
        ppl_whole,
        ppl_segments,
        entropy_seq,
        entropy_adf,
        entropy_segments,
        abs_prob_seq,
        prob_kld_seq,
        hd_dist,
        early_exit_jsd: early,
        hd_abs_cov,
        hd_gram,
    })
}

/// Smallest eigenvalue of a symmetric matrix (for PSD checks).
pub fn min_eigenvalue(m: &Matrix) -> Result<f64> {
    let (vals, _) = numerics::symmetric_eigen(m)?;
    Ok(vals.last().copied().unwrap_or(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::ReferenceModel;
    use crate::corpus::Genre;
    use std::f64::consts::LN_2;

    /// Trace with explicit rows and hidden states (one layer above the
    /// embedding layer).
    fn synthetic(ids: Vec<u32>, vocab: usize, rows: Vec<Vec<f32>>, hidden: Vec<Vec<Vec<f32>>>) -> ModelTrace {
        let dim = hidden[0][0].len();
        ModelTrace {
            model_tag: "synthetic".into(),
            token_ids: ids,
            content_start: 0,
            vocab_size: vocab,
            layers: hidden.len() - 1,
            dim,
            out_probs: rows.concat(),
            hidden: hidden.concat().concat(),
            char_spans: None,
        }
    }

    fn segs(bounds: &[(usize, usize)]) -> Vec<Segment> {
        bounds.iter().map(|&(start, end)| Segment { start, end }).collect()
    }

    fn unit_hidden(t: usize) -> Vec<Vec<Vec<f32>>> {
        vec![(0..t).map(|i| vec![1.0, i as f32 + 1.0]).collect(); 2]
    }

    #[test]
    fn uniform_model_has_perplexity_v() {
        let rows = vec![vec![0.1f32; 10]; 4];
        let t = synthetic(vec![1, 2, 3, 4], 10, rows, unit_hidden(4));
        let (whole, per) = perplexity(&t, &segs(&[(0, 2), (2, 4)])).unwrap();
        assert!((whole - 10.0).abs() < 1e-5);
        assert_eq!(per.len(), 2);
    }

    #[test]
    fn certain_model_has_perplexity_one() {
        let rows = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let t = synthetic(vec![1, 0], 2, rows, unit_hidden(2));
        let (whole, per) = perplexity(&t, &segs(&[(0, 1), (1, 2)])).unwrap();
        assert_eq!(whole, 1.0);
        assert_eq!(per, vec![1.0, 1.0]);
    }

    #[test]
    fn bigram_perplexity_by_hand() {
        // Corpus 甲乙甲丙: vocab {unk, 甲, 乙, 丙} (V = 4).
        // Successors of 甲: 乙 once, 丙 once (total 2); of 乙: 甲 once.
        let corpus = [Poem::new(Genre::Ci, "t", Some("c".into()), "甲乙甲丙", None, Vec::new(), Some(2)).unwrap()];
        let m = ReferenceModel::new(42, &corpus).unwrap();
        let (trace, _) = m.trace(&m.encode("题"), &m.encode("甲乙甲")).unwrap();
        // P(甲|unk) = 1/4, P(乙|甲) = 2/6, P(甲|乙) = 2/5
        let want = (-(0.25f64.ln() + (2.0f64 / 6.0).ln() + 0.4f64.ln()) / 3.0).exp();
        let (whole, _) = perplexity(&trace, &segs(&[(0, 1), (1, 3)])).unwrap();
        assert!((whole - want).abs() < 1e-6, "{whole} vs {want}");
    }

    #[test]
    fn segment_with_no_tokens_is_an_alignment_error() {
        let mut t = synthetic(vec![0, 1], 2, vec![vec![0.5, 0.5]; 2], unit_hidden(2));
        t.char_spans = Some(vec![(0, 2), (2, 4)]);
        assert!(matches!(
            perplexity(&t, &segs(&[(0, 1), (1, 2), (2, 4)])),
            Err(MetricError::Alignment(_))
        ));
        t.char_spans = None;
        assert!(matches!(perplexity(&t, &segs(&[(0, 3)])), Err(MetricError::Alignment(_))));
    }

    #[test]
    fn entropy_sequence_examples() {
        let onehot = synthetic(vec![0; 9], 3, vec![vec![0.0, 1.0, 0.0]; 9], unit_hidden(9));
        let (seq, adf) = entropy_sequence(&onehot);
        assert_eq!(seq, vec![0.0; 9]);
        assert!(adf.is_none());
        let uniform = synthetic(vec![0; 9], 4, vec![vec![0.25; 4]; 9], unit_hidden(9));
        let (seq, adf) = entropy_sequence(&uniform);
        assert!(seq.iter().all(|h| (h - 4f64.ln()).abs() < 1e-12));
        assert!(adf.is_none());
    }

    #[test]
    fn prob_kld_examples() {
        let table = FreqTable::from_counts("t", &[1, 1]).unwrap();
        let same = synthetic(vec![0, 1], 2, vec![vec![0.5, 0.5]; 2], unit_hidden(2));
        assert_eq!(prob_kld_sequence(&same, &table).unwrap(), vec![0.0, 0.0]);
        let onehot = synthetic(vec![0], 2, vec![vec![1.0, 0.0]], vec![vec![vec![1.0]]; 2]);
        assert!((prob_kld_sequence(&onehot, &table).unwrap()[0] - LN_2).abs() < 1e-12);
        // Moving mass to the rarer token raises the divergence:
        // KL([1,0] || [0.8,0.2]) = ln 1.25 < KL([0,1] || [0.8,0.2]) = ln 5.
        let skewed = FreqTable::from_counts("t", &[4, 1]).unwrap();
        let common = prob_kld_sequence(&onehot, &skewed).unwrap()[0];
        let rare_trace = synthetic(vec![1], 2, vec![vec![0.0, 1.0]], vec![vec![vec![1.0]]; 2]);
        let rare = prob_kld_sequence(&rare_trace, &skewed).unwrap()[0];
        assert!((common - 1.25f64.ln()).abs() < 1e-9 && (rare - 5f64.ln()).abs() < 1e-9);
        assert!(rare > common);
        assert!(prob_kld_sequence(&onehot, &FreqTable::from_counts("t", &[1, 1, 1]).unwrap()).is_err());
        assert_eq!(abs_prob_sequence(&same, &FreqTable::from_counts("t", &[1, 19]).unwrap()).unwrap(), vec![5.0, 95.0]);
    }

    #[test]
    fn hidden_distance_examples() {
        let same = synthetic(vec![0, 0], 1, vec![vec![1.0]; 2], vec![vec![vec![1.0, 2.0]; 2]; 2]);
        assert!(hidden_distances(&same).unwrap().iter().all(|d| d.abs() < 1e-12));
        let ortho = synthetic(vec![0, 0], 1, vec![vec![1.0]; 2], vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]; 2]);
        assert_eq!(hidden_distances(&ortho).unwrap(), vec![1.0, 1.0]);
        let single = synthetic(vec![0], 1, vec![vec![1.0]], vec![vec![vec![1.0, 0.0]]; 2]);
        assert!(matches!(hidden_distances(&single), Err(MetricError::SinglePosition)));

        // Three positions: brute force over the three pairs.
        let pts = vec![vec![1.0f32, 0.5, -0.2], vec![-0.3, 0.8, 0.1], vec![0.4, 0.4, 0.9]];
        let t = synthetic(vec![0; 3], 1, vec![vec![1.0]; 3], vec![pts.clone(), pts.clone()]);
        let f = |i: usize, j: usize| {
            let a: Vec<f64> = pts[i].iter().map(|&x| f64::from(x)).collect();
            let b: Vec<f64> = pts[j].iter().map(|&x| f64::from(x)).collect();
            let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            1.0 - dot / (na * nb)
        };
        let want = (f(0, 1) + f(0, 2) + f(1, 2)) / 3.0;
        assert!((hidden_distances(&t).unwrap()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn covariance_and_gram_examples() {
        let constant = synthetic(vec![0; 3], 1, vec![vec![1.0]; 3], vec![vec![vec![0.3, -0.2]; 3]; 2]);
        assert!(hidden_abs_cov(&constant).unwrap()[0].as_slice().iter().all(|v| *v == 0.0));
        let pair = synthetic(vec![0; 2], 1, vec![vec![1.0]; 2], vec![vec![vec![1.0, 0.0], vec![-1.0, 0.0]]; 2]);
        assert_eq!(hidden_abs_cov(&pair).unwrap()[0].as_slice(), &[1.0, 0.0, 0.0, 0.0]);
        let basis = synthetic(vec![0; 2], 1, vec![vec![1.0]; 2], vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]; 2]);
        assert_eq!(hidden_gram(&basis)[0].as_slice(), &[0.5, 0.0, 0.0, 0.5]);
        let scaled = synthetic(vec![0; 2], 1, vec![vec![1.0]; 2], vec![vec![vec![3.0, 0.0], vec![0.0, 3.0]]; 2]);
        assert_eq!(hidden_gram(&scaled)[0].as_slice(), &[4.5, 0.0, 0.0, 4.5]);
    }

    #[test]
    fn early_exit_bounds() {
        struct Disjoint;
        impl VocabProjector for Disjoint {
            fn project(&self, _: usize, _: usize, _: &[f32]) -> crate::adapter::Result<Vec<f64>> {
                Ok(vec![0.0, 1.0])
            }
        }
        let t = synthetic(vec![0, 0], 2, vec![vec![1.0, 0.0]; 2], unit_hidden(2));
        let j = early_exit_jsd(&t, &Disjoint).unwrap();
        assert!(j.iter().flatten().all(|v| (v - LN_2).abs() < 1e-12));
    }
}
