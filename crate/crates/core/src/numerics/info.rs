use super::{NumericsError, Result};

/// Floor applied to the second argument of [`kl`].
pub const KL_EPSILON: f64 = 1e-10;

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

/// `KL(p || q)` in nats. Terms with `p_i = 0` are skipped and `q_i` is
/// floored at `epsilon`.
pub fn kl(p: &[f64], q: &[f64], epsilon: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(NumericsError::ShapeMismatch(format!(
            "kl over lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    Ok(p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi.max(epsilon)).ln())
        .sum())
}

/// Jensen-Shannon divergence in nats, clamped to its analytic range
/// `[0, ln 2]` to absorb rounding.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(NumericsError::ShapeMismatch(format!(
            "jsd over lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    // m_i >= p_i / 2 > 0 wherever p_i > 0, so the epsilon floor never engages.
    let left = kl(p, &m, 0.0)?;
    let right = kl(q, &m, 0.0)?;
    Ok((0.5 * left + 0.5 * right).clamp(0.0, std::f64::consts::LN_2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    #[test]
    fn entropy_examples() {
        assert!((entropy(&[0.25; 4]) - 4f64.ln()).abs() < 1e-12);
        assert_eq!(entropy(&[0.0, 1.0, 0.0]), 0.0);
        // -(0.5 ln 0.5 + 2 * 0.25 ln 0.25) = 1.5 ln 2
        assert!((entropy(&[0.5, 0.25, 0.25]) - 1.039_720_770_839_917_9).abs() < 1e-12);
    }

    #[test]
    fn kl_examples() {
        let p = [0.1, 0.2, 0.7];
        assert_eq!(kl(&p, &p, KL_EPSILON).unwrap(), 0.0);
        assert!((kl(&[1.0, 0.0], &[0.5, 0.5], KL_EPSILON).unwrap() - LN_2).abs() < 1e-12);
        let floored = kl(&[1.0, 0.0], &[0.0, 1.0], KL_EPSILON).unwrap();
        assert!((floored - 23.025_850_929_940_457).abs() < 1e-9);
        assert!(kl(&[1.0], &[0.5, 0.5], KL_EPSILON).is_err());
    }

    #[test]
    fn jsd_examples() {
        let p = [0.3, 0.7];
        assert_eq!(jsd(&p, &p).unwrap(), 0.0);
        assert!((jsd(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - LN_2).abs() < 1e-12);
        assert!(jsd(&p, &[1.0]).is_err());
    }

    fn dist(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, n).prop_filter_map("nonzero mass", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn entropy_is_bounded(p in dist(6)) {
            let h = entropy(&p);
            prop_assert!(h >= 0.0 && h <= 6f64.ln() + 1e-12);
        }

        #[test]
        fn kl_is_nonnegative(p in dist(5), q in dist(5)) {
            prop_assert!(kl(&p, &q, KL_EPSILON).unwrap() >= -1e-12);
        }

        #[test]
        fn jsd_is_symmetric_and_bounded(p in dist(5), q in dist(5)) {
            let a = jsd(&p, &q).unwrap();
            let b = jsd(&q, &p).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!((0.0..=LN_2).contains(&a));
        }
    }
}
