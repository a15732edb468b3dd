use super::{NumericsError, Result};

/// Gini coefficient `sum_i sum_j |c_i - c_j| / (2 n sum c)`.
///
/// Evaluated through the sorted closed form
/// `sum_i (2i - n + 1) c_(i)` for the pairwise absolute-difference total.
pub fn gini(counts: &[f64]) -> Result<f64> {
    let total: f64 = counts.iter().sum();
    if counts.is_empty() || total <= 0.0 {
        return Err(NumericsError::AllZero);
    }
    let mut sorted = counts.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let half_pairs: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, c)| (2.0 * i as f64 - n + 1.0) * c)
        .sum();
    Ok((half_pairs / (n * total)).max(0.0))
}

/// Percentile with linear interpolation between order statistics at rank
/// `(n - 1) p / 100`.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(NumericsError::EmptySeries);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&sorted, p))
}

pub(crate) fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let rank = (sorted.len() - 1) as f64 * p.clamp(0.0, 100.0) / 100.0;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(NumericsError::EmptySeries);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gini_double_sum(c: &[f64]) -> f64 {
        let total: f64 = c.iter().sum();
        let mut acc = 0.0;
        for a in c {
            for b in c {
                acc += (a - b).abs();
            }
        }
        acc / (2.0 * c.len() as f64 * total)
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&[1.0, 1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert!((gini(&[3.0, 1.0]).unwrap() - 0.25).abs() < 1e-12);
        assert!((gini(&[1.0, 0.0, 0.0, 0.0]).unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(gini(&[0.0, 0.0]), Err(NumericsError::AllZero));
    }

    #[test]
    fn percentile_examples() {
        assert_eq!(percentile(&[3.0, 1.0, 2.0], 50.0).unwrap(), 2.0);
        let eleven: Vec<f64> = (0..=10).map(f64::from).collect();
        assert!((percentile(&eleven, 10.0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(percentile(&[4.5], 90.0).unwrap(), 4.5);
        assert_eq!(percentile(&[], 50.0), Err(NumericsError::EmptySeries));
    }

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[2.0, 2.0, 2.0]).unwrap(), (2.0, 0.0));
        assert_eq!(mean_std(&[1.0, 3.0]).unwrap(), (2.0, 1.0));
        assert!(mean_std(&[]).is_err());
    }

    proptest! {
        #[test]
        fn gini_matches_double_sum_and_bounds(c in prop::collection::vec(0u32..50, 1..20), scale in 0.1f64..10.0) {
            let c: Vec<f64> = c.into_iter().map(f64::from).collect();
            prop_assume!(c.iter().sum::<f64>() > 0.0);
            let g = gini(&c).unwrap();
            prop_assert!((g - gini_double_sum(&c)).abs() < 1e-12);
            prop_assert!(g >= 0.0 && g <= 1.0 - 1.0 / c.len() as f64 + 1e-12);
            let scaled: Vec<f64> = c.iter().map(|x| x * scale).collect();
            prop_assert!((gini(&scaled).unwrap() - g).abs() < 1e-12);
        }

        #[test]
        fn percentiles_are_ordered(v in prop::collection::vec(-100.0f64..100.0, 1..40)) {
            let p10 = percentile(&v, 10.0).unwrap();
            let p50 = percentile(&v, 50.0).unwrap();
            let p90 = percentile(&v, 90.0).unwrap();
            prop_assert!(p10 <= p50 && p50 <= p90);
        }
    }
}
