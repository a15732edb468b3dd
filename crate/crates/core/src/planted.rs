//! Synthetic poems and traces with known structure, for checking that the
//! summaries recover it.

use crate::adapter::ModelTrace;
use crate::corpus::{Genre, Poem, QILV_CHARS};
use crate::rng::SplitMix64;

/// A Qilv poem of distinct-ish CJK characters, unique per `index`.
pub fn synthetic_qilv(index: u32, tags: &[&str]) -> Poem {
    let content: String = (0..QILV_CHARS as u32)
        .map(|i| char::from_u32(0x4E00 + (index * 131 + i * 7) % 0x5000).expect("CJK range"))
        .collect();
    Poem::new(
        Genre::Qilv,
        format!("拟作{index}"),
        None,
        &content,
        None,
        tags.iter().map(|t| (*t).to_owned()),
        None,
    )
    .expect("56 characters")
}

/// A two-section Ci poem of `len` characters.
pub fn synthetic_ci(index: u32, len: usize, tags: &[&str]) -> Poem {
    let content: String = (0..len as u32)
        .map(|i| char::from_u32(0x4E00 + (index * 173 + i * 11) % 0x5000).expect("CJK range"))
        .collect();
    Poem::new(
        Genre::Ci,
        format!("拟词{index}"),
        Some("浣溪沙".into()),
        &content,
        None,
        tags.iter().map(|t| (*t).to_owned()),
        Some(len / 2),
    )
    .expect("two sections")
}

fn random_unit(rng: &mut SplitMix64, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.next_signed()).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Trace whose output distribution is sharply peaked on the gold token
/// inside segment `low_segment` of `poem` and near-uniform elsewhere, so
/// entropy dips on that segment.
pub fn low_entropy_trace(poem: &Poem, low_segment: usize, vocab: usize, seed: u64) -> ModelTrace {
    let t = poem.char_len();
    let mut rng = SplitMix64::new(seed);
    let ids: Vec<u32> = (0..t).map(|_| 1 + rng.next_below(vocab as u64 - 1) as u32).collect();
    let seg = poem.segments[low_segment];
    let mut out = Vec::with_capacity(t * vocab);
    for (pos, &gold) in ids.iter().enumerate() {
        let mut row: Vec<f64> = (0..vocab).map(|_| 1.0 + 0.2 * rng.next_f64()).collect();
        if seg.contains(pos) {
            let rest: f64 = row.iter().sum::<f64>() - row[gold as usize];
            row[gold as usize] = 30.0 * rest;
        }
        let s: f64 = row.iter().sum();
        out.extend(row.iter().map(|p| (p / s) as f32));
    }
    ModelTrace {
        model_tag: "planted".into(),
        token_ids: ids,
        content_start: 0,
        vocab_size: vocab,
        layers: 2,
        dim: 4,
        out_probs: out,
        hidden: (0..3 * t * 4).map(|_| rng.next_signed() as f32).collect(),
        char_spans: None,
    }
}

/// Trace whose hidden states spread out layer by layer:
/// `h[l][t] = cos(a_l) e0 + sin(a_l) u_t` with `u_t` unit vectors orthogonal
/// to `e0` and `a_l` increasing in `l`. The mean pairwise cosine distance at
/// layer `l` is `sin(a_l)^2` times that of the `u_t`, so it increases with
/// depth.
pub fn diverging_layers_trace(poem: &Poem, layers: usize, dim: usize, seed: u64) -> ModelTrace {
    let t = poem.char_len();
    let mut rng = SplitMix64::new(seed);
    let dirs: Vec<Vec<f64>> = (0..t).map(|_| random_unit(&mut rng, dim - 1)).collect();
    let mut hidden = Vec::with_capacity((layers + 1) * t * dim);
    for l in 0..=layers {
        let angle = 0.1 + 1.3 * l as f64 / layers as f64;
        for d in &dirs {
            hidden.push(angle.cos() as f32);
            hidden.extend(d.iter().map(|x| (angle.sin() * x) as f32));
        }
    }
    let vocab = 8;
    let ids: Vec<u32> = (0..t).map(|_| rng.next_below(vocab as u64) as u32).collect();
    ModelTrace {
        model_tag: "planted".into(),
        token_ids: ids,
        content_start: 0,
        vocab_size: vocab,
        layers,
        dim,
        out_probs: vec![1.0 / vocab as f32; t * vocab],
        hidden,
        char_spans: None,
    }
}
