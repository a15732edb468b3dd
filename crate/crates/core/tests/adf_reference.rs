//! ADF statistics against frozen values from statsmodels' `adfuller`
//! (`regression="c"`, `autolag="AIC"`, same `maxlag`), and Monte Carlo
//! size/power checks.

use verse_lens::numerics::{adf_test, AdfDecision};
use verse_lens::rng::SplitMix64;

fn normal(rng: &mut SplitMix64) -> f64 {
    let u1 = rng.next_f64();
    let u2 = rng.next_f64();
    (-2.0 * (1.0 - u1).ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn series(seed: u64, n: usize, walk: bool) -> Vec<f64> {
    let mut rng = SplitMix64::new(seed);
    let mut acc = 0.0;
    (0..n)
        .map(|_| {
            let e = normal(&mut rng);
            if walk {
                acc += e;
                acc
            } else {
                e
            }
        })
        .collect()
}

// (seed, n, random walk, statistic, lags used)
const STATSMODELS: [(u64, usize, bool, f64, usize); 10] = [
    (1, 200, false, -13.776785184383497, 0),
    (2, 200, false, -14.456684477183249, 0),
    (3, 200, false, -14.553521377768876, 0),
    (4, 56, false, -5.271698563825059, 0),
    (5, 120, false, -8.83766797021036, 1),
    (6, 200, true, -1.6011519364154598, 0),
    (7, 200, true, -1.1875508446478054, 0),
    (8, 200, true, -3.499259631886684, 3),
    (9, 56, true, -0.15173445941854688, 0),
    (10, 120, true, -2.0997458750556564, 0),
];

#[test]
fn matches_statsmodels_spot_checks() {
    for (seed, n, walk, want, lags) in STATSMODELS {
        let r = adf_test(&series(seed, n, walk), None).unwrap();
        assert!(
            (r.statistic - want).abs() < 0.05,
            "seed {seed}: {} vs {want}",
            r.statistic
        );
        assert_eq!(r.lags_used, lags, "seed {seed}");
    }
}

#[test]
fn white_noise_rejects_and_random_walk_does_not() {
    let mut rejected = 0;
    let mut kept = 0;
    for draw in 0..100u64 {
        let noise = adf_test(&series(1_000 + draw, 200, false), None).unwrap();
        if noise.decision_5pct == AdfDecision::RejectUnitRoot {
            rejected += 1;
        }
        let walk = adf_test(&series(5_000 + draw, 200, true), None).unwrap();
        if walk.decision_5pct == AdfDecision::FailToReject {
            kept += 1;
        }
    }
    assert!(rejected >= 95, "white noise rejected {rejected}/100");
    assert!(kept >= 85, "random walk kept {kept}/100");
}
