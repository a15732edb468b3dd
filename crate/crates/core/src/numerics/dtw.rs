use super::{NumericsError, Result};

/// Unwindowed dynamic time warping with `|a_i - b_j|` cost and the symmetric
/// match/insert/delete step set. Returns the total (unnormalized) path cost.
pub fn dtw(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(NumericsError::EmptySeries);
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut curr = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &ai in a {
        curr[0] = f64::INFINITY;
        for (j, &bj) in b.iter().enumerate() {
            let best = prev[j].min(prev[j + 1]).min(curr[j]);
            curr[j + 1] = (ai - bj).abs() + best;
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    Ok(prev[m])
}
