//! Learning-rate control from the relative improvement of a dev metric.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrAction {
    Keep,
    Halve,
    Stop,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Thresholds {
    pub halve: f64,
    pub stop: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            halve: 0.004,
            stop: 0.0005,
        }
    }
}

/// Relative improvement `(prev − curr) / prev` of the last two entries.
pub fn relative_improvement(history: &[f64]) -> Result<f64> {
    let [.., prev, curr] = history else {
        return Err(Error::Contract(format!(
            "schedule needs at least two epochs of history, got {}",
            history.len()
        )));
    };
    if prev.is_nan() || *prev <= 0.0 {
        return Err(Error::Contract(format!("previous dev metric {prev} is not positive")));
    }
    Ok((prev - curr) / prev)
}

/// Decide from the dev-metric history (lower is better). Pure.
pub fn lr_schedule(history: &[f64], thresholds: Thresholds) -> Result<LrAction> {
    let r = relative_improvement(history)?;
    Ok(if r < thresholds.stop {
        LrAction::Stop
    } else if r < thresholds.halve {
        LrAction::Halve
    } else {
        LrAction::Keep
    })
}
