//! Standalone loss evaluations (no gradient recording).

use crate::error::{Error, Result};
use crate::neuralcore::tape::cross_entropy_value;

const LOG_CLAMP: f64 = 1e-12;

/// Binary cross-entropy `−Σ (y*·log y + (1−y*)·log(1−y))`, with log
/// arguments clamped at 1e-12 so exact 0/1 predictions stay finite.
pub fn bce_loss(y: &[f64], y_star: &[f64]) -> Result<f64> {
    if y.len() != y_star.len() {
        return Err(Error::Validation(format!(
            "bce_loss length mismatch: {} predictions vs {} targets",
            y.len(),
            y_star.len()
        )));
    }
    for (&p, &t) in y.iter().zip(y_star) {
        if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain(format!(
                "bce_loss operands must lie in [0,1], got prediction {p} target {t}"
            )));
        }
    }
    let mut total = 0.0;
    for (&p, &t) in y.iter().zip(y_star) {
        total -= t * p.max(LOG_CLAMP).ln() + (1.0 - t) * (1.0 - p).max(LOG_CLAMP).ln();
    }
    Ok(total)
}

/// Negative log-softmax of `scores` at `target`, stabilized by
/// max-subtraction.
pub fn cross_entropy(scores: &[f64], target: usize) -> Result<f64> {
    if target >= scores.len() {
        return Err(Error::Validation(format!(
            "cross_entropy target {target} out of range for {} classes",
            scores.len()
        )));
    }
    Ok(cross_entropy_value(scores, target))
}
