//! Evaluation metrics: MAE, RMSE, MAPE, and the asymmetric PHM score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pair(y_hat: &[f64], y: &[f64]) -> Result<()> {
    if y_hat.len() != y.len() || y_hat.is_empty() {
        return Err(Error::invalid(format!(
            "metrics want equal nonempty lengths, got {} and {}",
            y_hat.len(),
            y.len()
        )));
    }
    Ok(())
}

pub fn metric_mae(y_hat: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(y_hat, y)?;
    Ok(y_hat.iter().zip(y).map(|(p, t)| (p - t).abs()).sum::<f64>() / y.len() as f64)
}

pub fn metric_rmse(y_hat: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(y_hat, y)?;
    let mse = y_hat
        .iter()
        .zip(y)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / y.len() as f64;
    Ok(mse.sqrt())
}

/// Percent error; only meaningful for targets bounded away from zero (SOH).
/// RUL targets hit 0, so callers must not request MAPE there.
pub fn metric_mape(y_hat: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(y_hat, y)?;
    if y.iter().any(|&t| t == 0.0) {
        return Err(Error::invalid("MAPE undefined for zero targets"));
    }
    Ok(100.0 / y.len() as f64
        * y_hat
            .iter()
            .zip(y)
            .map(|(p, t)| ((p - t) / t).abs())
            .sum::<f64>())
}

/// Which direction draws which exponential branch. `Paper` is the formula as
/// printed (e = y − ŷ; e < 0 → /13, e ≥ 0 → /10); `Classic` is the
/// conventional C-MAPSS form (d = ŷ − y; early (d < 0) → /13, late → /10).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScoreConvention {
    #[default]
    Paper,
    Classic,
}

pub fn metric_phm_score(y_hat: &[f64], y: &[f64], convention: ScoreConvention) -> Result<f64> {
    check_pair(y_hat, y)?;
    Ok(y_hat
        .iter()
        .zip(y)
        .map(|(&p, &t)| {
            let e = match convention {
                ScoreConvention::Paper => t - p,
                ScoreConvention::Classic => p - t,
            };
            if e < 0.0 {
                (-e / 13.0).exp() - 1.0
            } else {
                (e / 10.0).exp() - 1.0
            }
        })
        .sum())
}
