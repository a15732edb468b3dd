//! Anthology-level aggregation of stored metrics.

mod report;

pub use report::{emit_report, render, Manifest, ManifestEntry, Report, ReportFormat};

use crate::corpus::{Anthology, Corpus, Genre, PoemId};
use crate::numerics::{dtw, gini, mean_std, percentile, NumericsError};
use crate::pairwise::{sample_pairs, PairError};
use crate::rng::SplitMix64;
use crate::store::{Store, StoreError};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SummaryError {
    #[error("no data for {0}")]
    NoData(String),
    #[error("unknown anthology `{0}`")]
    UnknownAnthology(String),
    #[error("{anthology}: poem {poem} has {got} segments, expected {expected}")]
    Segments {
        anthology: String,
        poem: PoemId,
        got: usize,
        expected: usize,
    },
    #[error("{0} is not a layered metric")]
    NotLayered(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Pair(#[from] PairError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, SummaryError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub avg: f64,
    pub std: f64,
    pub pc10: f64,
    pub pc50: f64,
    pub pc90: f64,
    pub n: usize,
}

impl Stats {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(SummaryError::NoData("empty sample".into()));
        }
        let (avg, std) = mean_std(values)?;
        Ok(Stats {
            avg,
            std,
            pc10: percentile(values, 10.0)?,
            pc50: percentile(values, 50.0)?,
            pc90: percentile(values, 90.0)?,
            n: values.len(),
        })
    }

    pub const LABELS: [&'static str; 6] = ["avg", "std", "pc10", "pc50", "pc90", "n"];

    pub fn values(&self) -> [f64; 6] {
        [self.avg, self.std, self.pc10, self.pc50, self.pc90, self.n as f64]
    }
}

/// How one poem's metric array collapses to the values entering the stats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reducer {
    PoemMean,
    PoemSum,
    /// Every element of every poem, weighting poems by length.
    Concat,
}

/// Metrics summarized per anthology, each with its reducer.
pub const SUMMARY_METRICS: &[(&str, Reducer)] = &[
    ("ppl_whole", Reducer::PoemMean),
    ("entropy_seq", Reducer::PoemMean),
    ("abs_prob_seq", Reducer::PoemMean),
    ("prob_kld_seq", Reducer::PoemMean),
    ("hd_dist", Reducer::PoemMean),
];

pub const LAYERED_METRICS: &[&str] = &["hd_dist", "early_exit_jsd"];

fn lookup<'a>(corpus: &'a Corpus, name: &str) -> Result<&'a Anthology> {
    corpus
        .anthology(name)
        .ok_or_else(|| SummaryError::UnknownAnthology(name.to_owned()))
}

pub fn anthology_stats(store: &Store, anthology: &Anthology, model_tag: &str, metric: &str, reducer: Reducer) -> Result<Stats> {
    let scan = store.scan(anthology, model_tag, metric)?;
    let mut values = Vec::new();
    for (_, v) in &scan.items {
        let flat = v.flatten();
        match reducer {
            Reducer::PoemMean if !flat.is_empty() => values.push(flat.iter().sum::<f64>() / flat.len() as f64),
            Reducer::PoemMean => {}
            Reducer::PoemSum => values.push(flat.iter().sum()),
            Reducer::Concat => values.extend(flat),
        }
    }
    if values.is_empty() {
        return Err(SummaryError::NoData(format!("{metric} in {}", anthology.name)));
    }
    Stats::of(&values)
}

/// Mean per-segment entropy and perplexity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentProfile {
    pub entropy: Vec<f64>,
    pub ppl: Vec<f64>,
}

fn segment_means(store: &Store, anthology: &Anthology, model_tag: &str, metric: &str, expected: usize) -> Result<Vec<f64>> {
    let scan = store.scan(anthology, model_tag, metric)?;
    if scan.items.is_empty() {
        return Err(SummaryError::NoData(format!("{metric} in {}", anthology.name)));
    }
    let mut acc = vec![0.0; expected];
    for (id, v) in &scan.items {
        let flat = v.flatten();
        if flat.len() != expected {
            return Err(SummaryError::Segments {
                anthology: anthology.name.clone(),
                poem: id.clone(),
                got: flat.len(),
                expected,
            });
        }
        acc.iter_mut().zip(&flat).for_each(|(a, x)| *a += x);
    }
    let n = scan.items.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

/// Per-couplet (Qilv) or per-section (Ci) means over the anthology.
pub fn segment_profile(store: &Store, anthology: &Anthology, model_tag: &str) -> Result<SegmentProfile> {
    let expected = anthology.genre.segment_count();
    Ok(SegmentProfile {
        entropy: segment_means(store, anthology, model_tag, "entropy_segments", expected)?,
        ppl: segment_means(store, anthology, model_tag, "ppl_segments", expected)?,
    })
}

/// Mean over poems of each layer's value, as `(layer, value)` points.
/// `early_exit_jsd` is first averaged over positions within each poem.
pub fn layer_profile(store: &Store, anthology: &Anthology, model_tag: &str, metric: &str) -> Result<Vec<(usize, f64)>> {
    if !LAYERED_METRICS.contains(&metric) {
        return Err(SummaryError::NotLayered(metric.to_owned()));
    }
    let scan = store.scan(anthology, model_tag, metric)?;
    let mut sums: Vec<f64> = Vec::new();
    for (id, v) in &scan.items {
        let per_layer: Vec<f64> = match v.as_rows() {
            Some(rows) => rows
                .iter()
                .map(|r| r.iter().sum::<f64>() / r.len().max(1) as f64)
                .collect(),
            None => v.flatten(),
        };
        if sums.is_empty() {
            sums = vec![0.0; per_layer.len()];
        } else if sums.len() != per_layer.len() {
            return Err(SummaryError::NoData(format!(
                "{metric}: poem {id} has {} layers, others {}",
                per_layer.len(),
                sums.len()
            )));
        }
        sums.iter_mut().zip(&per_layer).for_each(|(s, x)| *s += x);
    }
    if scan.items.is_empty() {
        return Err(SummaryError::NoData(format!("{metric} in {}", anthology.name)));
    }
    let n = scan.items.len() as f64;
    Ok(sums.into_iter().enumerate().map(|(l, s)| (l, s / n)).collect())
}

/// Gini coefficient of the character counts pooled over the anthology.
pub fn anthology_gini(corpus: &Corpus, anthology: &Anthology) -> Result<f64> {
    let mut counts: HashMap<char, u64> = HashMap::new();
    for poem in corpus.anthology_poems(anthology) {
        for c in poem.content.chars() {
            *counts.entry(c).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(SummaryError::NoData(format!("characters in {}", anthology.name)));
    }
    let values: Vec<f64> = counts.values().map(|&c| c as f64).collect();
    Ok(gini(&values)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnthologySummary {
    pub anthology: String,
    pub model_tag: String,
    pub genre: Genre,
    pub per_metric: BTreeMap<String, Stats>,
    pub segment_profile: SegmentProfile,
    /// metric -> `(layer, mean)` points
    pub layer_profile: BTreeMap<String, Vec<(usize, f64)>>,
    pub gini: f64,
}

/// Everything reported for one anthology. Metrics no poem carries are left
/// out; an anthology with no computed poems is an error.
pub fn summarize_anthology(store: &Store, corpus: &Corpus, name: &str, model_tag: &str) -> Result<AnthologySummary> {
    let anthology = lookup(corpus, name)?;
    let mut per_metric = BTreeMap::new();
    for &(metric, reducer) in SUMMARY_METRICS {
        match anthology_stats(store, anthology, model_tag, metric, reducer) {
            Ok(s) => {
                per_metric.insert(metric.to_owned(), s);
            }
            Err(SummaryError::NoData(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if per_metric.is_empty() {
        return Err(SummaryError::NoData(format!("{name} under model `{model_tag}`")));
    }
    let mut layer = BTreeMap::new();
    for &metric in LAYERED_METRICS {
        match layer_profile(store, anthology, model_tag, metric) {
            Ok(curve) => {
                layer.insert(metric.to_owned(), curve);
            }
            Err(SummaryError::NoData(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(AnthologySummary {
        anthology: name.to_owned(),
        model_tag: model_tag.to_owned(),
        genre: anthology.genre,
        per_metric,
        segment_profile: segment_profile(store, anthology, model_tag)?,
        layer_profile: layer,
        gini: anthology_gini(corpus, anthology)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtwComparison {
    pub anthology_a: String,
    pub anthology_b: String,
    pub model_tag: String,
    pub pairs: usize,
    pub seed: u64,
    pub inner_a: Stats,
    pub inner_b: Stats,
    pub outer: Stats,
}

fn entropy_of(store: &Store, cache: &mut HashMap<PoemId, Vec<f64>>, id: &PoemId, model_tag: &str) -> Result<Vec<f64>> {
    if let Some(v) = cache.get(id) {
        return Ok(v.clone());
    }
    let seq = store
        .get(id)?
        .and_then(|r| r.metric(model_tag, "entropy_seq").map(|v| v.flatten()))
        .ok_or_else(|| SummaryError::NoData(format!("entropy_seq for {id}")))?;
    cache.insert(id.clone(), seq.clone());
    Ok(seq)
}

/// Entropy-sequence DTW over `n` sampled pairs within `a`, within `b`, and
/// across the two. The three samples use seeds drawn from one stream
/// started at `seed`.
pub fn dtw_comparison(
    store: &Store,
    corpus: &Corpus,
    a: &str,
    b: &str,
    n: usize,
    seed: u64,
    model_tag: &str,
) -> Result<DtwComparison> {
    let anth_a = lookup(corpus, a)?;
    let anth_b = lookup(corpus, b)?;
    let mut seeds = SplitMix64::new(seed);
    let mut cache = HashMap::new();
    let mut sample = |pairs: Vec<(PoemId, PoemId)>| -> Result<Stats> {
        let mut values = Vec::with_capacity(pairs.len());
        for (x, y) in pairs {
            let sx = entropy_of(store, &mut cache, &x, model_tag)?;
            let sy = entropy_of(store, &mut cache, &y, model_tag)?;
            values.push(dtw(&sx, &sy)?);
        }
        Stats::of(&values)
    };
    let inner_a = sample(sample_pairs(&anth_a.poem_ids, &anth_a.poem_ids, true, n, seeds.next_u64())?)?;
    let inner_b = sample(sample_pairs(&anth_b.poem_ids, &anth_b.poem_ids, true, n, seeds.next_u64())?)?;
    let outer = sample(sample_pairs(&anth_a.poem_ids, &anth_b.poem_ids, false, n, seeds.next_u64())?)?;
    Ok(DtwComparison {
        anthology_a: a.to_owned(),
        anthology_b: b.to_owned(),
        model_tag: model_tag.to_owned(),
        pairs: n,
        seed,
        inner_a,
        inner_b,
        outer,
    })
}

/// Recomputes every stat in `summary` from the store and returns the largest
/// absolute deviation.
pub fn verify_summary(store: &Store, corpus: &Corpus, summary: &AnthologySummary) -> Result<f64> {
    let fresh = summarize_anthology(store, corpus, &summary.anthology, &summary.model_tag)?;
    let mut worst: f64 = 0.0;
    let mut cmp = |x: &[f64], y: &[f64]| {
        if x.len() != y.len() {
            worst = f64::INFINITY;
        }
        for (p, q) in x.iter().zip(y) {
            worst = worst.max((p - q).abs());
        }
    };
    if fresh.per_metric.keys().ne(summary.per_metric.keys()) {
        return Ok(f64::INFINITY);
    }
    for (k, s) in &summary.per_metric {
        cmp(&s.values(), &fresh.per_metric[k].values());
    }
    cmp(&summary.segment_profile.entropy, &fresh.segment_profile.entropy);
    cmp(&summary.segment_profile.ppl, &fresh.segment_profile.ppl);
    for (k, curve) in &summary.layer_profile {
        let other: Vec<f64> = fresh.layer_profile.get(k).map_or(Vec::new(), |c| c.iter().map(|p| p.1).collect());
        cmp(&curve.iter().map(|p| p.1).collect::<Vec<_>>(), &other);
    }
    cmp(&[summary.gini], &[fresh.gini]);
    Ok(worst)
}
