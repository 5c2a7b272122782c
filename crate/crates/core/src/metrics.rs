//! MAPE, RMSE and R² on inverse-normalized predictions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::ScalingParams;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("prediction and actual lengths differ ({pred} vs {actual})")]
    LengthMismatch { pred: usize, actual: usize },
    #[error("metrics need at least {needed} points, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("actual value at index {0} is zero; MAPE undefined")]
    ZeroActual(usize),
    #[error("actual series is constant; R² undefined")]
    ConstantActual,
}

/// The three indicators computed on one prediction/actual pair, in price
/// units (MAPE in percent).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mape: f64,
    pub rmse: f64,
    pub r2: f64,
}

fn check_lengths(pred: &[f64], actual: &[f64], needed: usize) -> Result<(), MetricsError> {
    if pred.len() != actual.len() {
        return Err(MetricsError::LengthMismatch {
            pred: pred.len(),
            actual: actual.len(),
        });
    }
    if pred.len() < needed {
        return Err(MetricsError::TooFew {
            needed,
            got: pred.len(),
        });
    }
    Ok(())
}

/// Mean absolute percentage error: `100 · mean(|pred - actual| / |actual|)`.
pub fn mape(pred: &[f64], actual: &[f64]) -> Result<f64, MetricsError> {
    check_lengths(pred, actual, 1)?;
    let mut acc = 0.0;
    for (i, (&p, &a)) in pred.iter().zip(actual).enumerate() {
        if a == 0.0 {
            return Err(MetricsError::ZeroActual(i));
        }
        acc += (p - a).abs() / a.abs();
    }
    Ok(100.0 * acc / pred.len() as f64)
}

/// Root of the mean squared error.
pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64, MetricsError> {
    check_lengths(pred, actual, 1)?;
    let acc: f64 = pred
        .iter()
        .zip(actual)
        .map(|(&p, &a)| (p - a) * (p - a))
        .sum();
    Ok((acc / pred.len() as f64).sqrt())
}

/// Coefficient of determination: `1 - SS_res / SS_tot`.
pub fn r2(pred: &[f64], actual: &[f64]) -> Result<f64, MetricsError> {
    check_lengths(pred, actual, 2)?;
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_tot: f64 = actual.iter().map(|&a| (a - mean) * (a - mean)).sum();
    if ss_tot == 0.0 {
        return Err(MetricsError::ConstantActual);
    }
    let ss_res: f64 = pred
        .iter()
        .zip(actual)
        .map(|(&p, &a)| (a - p) * (a - p))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Inverse-normalizes both vectors, then computes all three indicators.
pub fn evaluate(
    pred_scaled: &[f64],
    actual_scaled: &[f64],
    scaling: &ScalingParams,
) -> Result<EvalReport, MetricsError> {
    let pred: Vec<f64> = pred_scaled.iter().map(|&v| scaling.inverse_scale(v)).collect();
    let actual: Vec<f64> = actual_scaled
        .iter()
        .map(|&v| scaling.inverse_scale(v))
        .collect();
    Ok(EvalReport {
        mape: mape(&pred, &actual)?,
        rmse: rmse(&pred, &actual)?,
        r2: r2(&pred, &actual)?,
    })
}
