use super::{NumericsError, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Asymptotic 5% critical value for the constant-only ADF regression
/// (MacKinnon).
pub const ADF_CRITICAL_5PCT: f64 = -2.86;

const MIN_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdfDecision {
    RejectUnitRoot,
    FailToReject,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdfResult {
    pub statistic: f64,
    pub lags_used: usize,
    pub decision_5pct: AdfDecision,
}

/// `floor(12 (n / 100)^(1/4))`.
pub fn default_max_lag(n: usize) -> usize {
    (12.0 * (n as f64 / 100.0).powf(0.25)).floor() as usize
}

struct Fit {
    coef: DVector<f64>,
    ssr: f64,
    cov_unscaled: DMatrix<f64>,
    nobs: usize,
}

fn ols(y: &DVector<f64>, x: &DMatrix<f64>) -> Option<Fit> {
    let xtx = x.transpose() * x;
    let chol = xtx.cholesky()?;
    let coef = chol.solve(&(x.transpose() * y));
    let resid = y - x * &coef;
    Some(Fit {
        coef,
        ssr: resid.norm_squared(),
        cov_unscaled: chol.inverse(),
        nobs: y.len(),
    })
}

/// Design for `dx_t = a + g x_{t-1} + sum_{i<=lags} b_i dx_{t-i}` over the
/// last `nobs` differences. Columns: level, lagged differences, constant.
fn design(x: &[f64], dx: &[f64], lags: usize, nobs: usize) -> (DVector<f64>, DMatrix<f64>) {
    let start = dx.len() - nobs;
    let y = DVector::from_iterator(nobs, dx[start..].iter().copied());
    let cols = lags + 2;
    let m = DMatrix::from_fn(nobs, cols, |r, c| {
        let t = start + r; // dx index; dx[t] = x[t+1] - x[t]
        match c {
            0 => x[t],
            c if c <= lags => dx[t - c],
            _ => 1.0,
        }
    });
    (y, m)
}

fn aic(fit: &Fit) -> f64 {
    let n = fit.nobs as f64;
    let llf = -n / 2.0 * ((2.0 * std::f64::consts::PI).ln() + (fit.ssr / n).ln() + 1.0);
    -2.0 * llf + 2.0 * fit.coef.len() as f64
}

/// Augmented Dickey-Fuller test, constant and no trend, lag order chosen by
/// AIC over `0..=max_lag` on a common sample and then refit on the full
/// available sample.
pub fn adf_test(x: &[f64], max_lag: Option<usize>) -> Result<AdfResult> {
    let n = x.len();
    if n < MIN_LEN {
        return Err(NumericsError::SeriesTooShort { needed: MIN_LEN, got: n });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::DegenerateSeries("non-finite value"));
    }
    if x.iter().all(|&v| v == x[0]) {
        return Err(NumericsError::DegenerateSeries("constant series"));
    }
    // Keep enough observations for the widest regression.
    let cap = (n / 2).saturating_sub(2);
    let max_lag = max_lag.unwrap_or_else(|| default_max_lag(n)).min(cap);

    let dx: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let common = dx.len() - max_lag;
    let mut best: Option<(f64, usize)> = None;
    for lags in 0..=max_lag {
        let (y, m) = design(x, &dx, lags, common);
        let Some(fit) = ols(&y, &m) else { continue };
        let score = aic(&fit);
        if best.is_none_or(|(b, _)| score < b) {
            best = Some((score, lags));
        }
    }
    let (_, lags) = best.ok_or(NumericsError::DegenerateSeries("singular regression"))?;

    let (y, m) = design(x, &dx, lags, dx.len() - lags);
    let fit = ols(&y, &m).ok_or(NumericsError::DegenerateSeries("singular regression"))?;
    let dof = fit.nobs as f64 - fit.coef.len() as f64;
    let sigma2 = fit.ssr / dof;
    let se = (sigma2 * fit.cov_unscaled[(0, 0)]).sqrt();
    if !(se > 0.0) || !se.is_finite() {
        return Err(NumericsError::DegenerateSeries("zero residual variance"));
    }
    let statistic = fit.coef[0] / se;
    Ok(AdfResult {
        statistic,
        lags_used: lags,
        decision_5pct: if statistic < ADF_CRITICAL_5PCT {
            AdfDecision::RejectUnitRoot
        } else {
            AdfDecision::FailToReject
        },
    })
}
