//! Poem-vs-poem similarity metrics and seeded pair sampling.

use crate::adapter::ModelTrace;
use crate::corpus::PoemId;
use crate::metrics::entropy_sequence;
use crate::numerics::{dtw, frechet_gaussian, mse, pca, ssim, wasserstein_ot, Matrix, NumericsError};
use crate::rng::SplitMix64;
use crate::store::MetricValue;
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PairError {
    #[error("pair pool of {pool} is smaller than the {requested} pairs requested")]
    NotEnoughPoems { requested: usize, pool: usize },
    #[error("layer {layer} outside 0..={layers}")]
    Layer { layer: usize, layers: usize },
    #[error("{metric}: {source}")]
    Numerics {
        metric: &'static str,
        #[source]
        source: NumericsError,
    },
}

pub type Result<T> = std::result::Result<T, PairError>;

fn in_metric(metric: &'static str) -> impl Fn(NumericsError) -> PairError {
    move |source| PairError::Numerics { metric, source }
}

pub const DEFAULT_K: usize = 4;
pub const DEFAULT_PAIRS: usize = 200;

/// Initial, medial and terminal hidden layers: `{1, ceil(L/2), L}`.
pub fn default_layers(layers: usize) -> Vec<usize> {
    let mut out = vec![1.min(layers), layers.div_ceil(2), layers];
    out.dedup();
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairMetrics {
    /// The smaller id of the two.
    pub id_a: PoemId,
    pub id_b: PoemId,
    pub model_tag: String,
    pub entropy_dtw: f64,
    pub emb_wmd: f64,
    pub emb_fd: f64,
    pub pca_mse: Vec<f64>,
    pub pca_ssim: Vec<f64>,
    pub k_components: usize,
    pub pca_layers: Vec<usize>,
}

impl PairMetrics {
    pub fn to_entries(&self) -> BTreeMap<String, MetricValue> {
        let mut m = BTreeMap::new();
        let mut put = |name: &str, v: Vec<f64>| {
            m.insert(name.to_owned(), MetricValue::Array(v));
        };
        put("entropy_dtw", vec![self.entropy_dtw]);
        put("emb_wmd", vec![self.emb_wmd]);
        put("emb_fd", vec![self.emb_fd]);
        put("pca_mse", self.pca_mse.clone());
        put("pca_ssim", self.pca_ssim.clone());
        put("k_components", vec![self.k_components as f64]);
        put("pca_layers", self.pca_layers.iter().map(|&l| l as f64).collect());
        m
    }
}

pub fn entropy_dtw(seq_a: &[f64], seq_b: &[f64]) -> Result<f64> {
    dtw(seq_a, seq_b).map_err(in_metric("entropy_dtw"))
}

fn gaussian_moments(m: &Matrix) -> (Vec<f64>, Matrix) {
    let mean = m.column_means();
    let cov = m.centered().gram(m.rows() as f64);
    (mean, cov)
}

/// Word mover's distance between the final-layer point clouds and the
/// Fréchet distance between their Gaussian moments.
pub fn embedding_similarity(a: &ModelTrace, b: &ModelTrace) -> Result<(f64, f64)> {
    let xa = a.layer_matrix(a.layers);
    let xb = b.layer_matrix(b.layers);
    let wmd = wasserstein_ot(&xa, &xb).map_err(in_metric("emb_wmd"))?;
    let (mu_a, cov_a) = gaussian_moments(&xa);
    let (mu_b, cov_b) = gaussian_moments(&xb);
    let fd = frechet_gaussian(&mu_a, &cov_a, &mu_b, &cov_b).map_err(in_metric("emb_fd"))?;
    Ok((wmd, fd))
}

fn unit_rows(m: &Matrix) -> Matrix {
    let rows: Vec<Vec<f64>> = m
        .row_iter()
        .map(|r| {
            let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            r.iter().map(|x| if n > 0.0 { x / n } else { *x }).collect()
        })
        .collect();
    Matrix::from_rows(&rows).expect("rectangular")
}

/// Per selected layer, MSE and SSIM between the two poems' top-`k`
/// principal component matrices.
pub fn pca_similarity(a: &ModelTrace, b: &ModelTrace, k: usize, layers: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
    let top = a.layers.min(b.layers);
    let mut mses = Vec::with_capacity(layers.len());
    let mut ssims = Vec::with_capacity(layers.len());
    for &l in layers {
        if l > top {
            return Err(PairError::Layer { layer: l, layers: top });
        }
        let ca = unit_rows(&pca(&a.layer_matrix(l), k).map_err(in_metric("pca"))?.components);
        let cb = unit_rows(&pca(&b.layer_matrix(l), k).map_err(in_metric("pca"))?.components);
        mses.push(mse(&ca, &cb).map_err(in_metric("pca_mse"))?);
        ssims.push(ssim(&ca, &cb).map_err(in_metric("pca_ssim"))?);
    }
    Ok((mses, ssims))
}

/// All pair metrics. Arguments are put in id order first, so the result does
/// not depend on which poem is passed first.
pub fn compute_pair(
    a: (&PoemId, &ModelTrace),
    b: (&PoemId, &ModelTrace),
    k: usize,
    layers: &[usize],
) -> Result<PairMetrics> {
    let ((id_a, ta), (id_b, tb)) = if a.0 <= b.0 { (a, b) } else { (b, a) };
    let (ent_a, _) = entropy_sequence(ta);
    let (ent_b, _) = entropy_sequence(tb);
    let (emb_wmd, emb_fd) = embedding_similarity(ta, tb)?;
    let (pca_mse, pca_ssim) = pca_similarity(ta, tb, k, layers)?;
    Ok(PairMetrics {
        id_a: id_a.clone(),
        id_b: id_b.clone(),
        model_tag: ta.model_tag.clone(),
        entropy_dtw: entropy_dtw(&ent_a, &ent_b)?,
        emb_wmd,
        emb_fd,
        pca_mse,
        pca_ssim,
        k_components: k,
        pca_layers: layers.to_vec(),
    })
}

/// Draws `n` distinct indices from `0..pool` (partial Fisher-Yates over a
/// sparse permutation).
struct SparseShuffle {
    rng: SplitMix64,
    pool: u64,
    drawn: u64,
    swapped: HashMap<u64, u64>,
}

impl SparseShuffle {
    fn new(pool: u64, seed: u64) -> Self {
        SparseShuffle {
            rng: SplitMix64::new(seed),
            pool,
            drawn: 0,
            swapped: HashMap::new(),
        }
    }
}

impl Iterator for SparseShuffle {
    type Item = u64;

    fn next(&mut self) -> Option<u64> {
        if self.drawn == self.pool {
            return None;
        }
        let i = self.drawn;
        let j = i + self.rng.next_below(self.pool - i);
        let at_j = *self.swapped.get(&j).unwrap_or(&j);
        let at_i = *self.swapped.get(&i).unwrap_or(&i);
        self.swapped.insert(j, at_i);
        self.drawn += 1;
        Some(at_j)
    }
}

/// Unordered pair `(i, j)`, `i < j`, at lexicographic index `k`.
fn triangular(mut k: u64, m: u64) -> (usize, usize) {
    let mut i = 0;
    while k >= m - 1 - i {
        k -= m - 1 - i;
        i += 1;
    }
    (i as usize, (i + 1 + k) as usize)
}

fn sorted_unique(ids: &[PoemId]) -> Vec<&PoemId> {
    let mut v: Vec<&PoemId> = ids.iter().collect();
    v.sort();
    v.dedup();
    v
}

/// `n` distinct pairs, seeded. With `same` set the pairs are drawn within
/// `a` (unordered, never a poem with itself); otherwise each pair is one
/// poem of `a` and one of `b`, skipping poems that appear in both.
pub fn sample_pairs(a: &[PoemId], b: &[PoemId], same: bool, n: usize, seed: u64) -> Result<Vec<(PoemId, PoemId)>> {
    let a = sorted_unique(a);
    if same {
        let m = a.len() as u64;
        let pool = m * m.saturating_sub(1) / 2;
        if (n as u64) > pool {
            return Err(PairError::NotEnoughPoems { requested: n, pool: pool as usize });
        }
        return Ok(SparseShuffle::new(pool, seed)
            .take(n)
            .map(|k| {
                let (i, j) = triangular(k, m);
                (a[i].clone(), a[j].clone())
            })
            .collect());
    }
    let b = sorted_unique(b);
    let shared = a.iter().filter(|id| b.binary_search(id).is_ok()).count();
    let pool = (a.len() * b.len() - shared) as u64;
    if (n as u64) > pool {
        return Err(PairError::NotEnoughPoems { requested: n, pool: pool as usize });
    }
    let cols = b.len() as u64;
    Ok(SparseShuffle::new(pool + shared as u64, seed)
        .map(|k| (a[(k / cols) as usize], b[(k % cols) as usize]))
        .filter(|(x, y)| x != y)
        .take(n)
        .map(|(x, y)| (x.clone(), y.clone()))
        .collect())
}
