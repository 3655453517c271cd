use crate::error::{Error, Result};
use crate::frame::Frame;

/// Mean squared error over all channel values scaled to `[0, 1]`.
pub fn mse(x: &Frame, y: &Frame) -> Result<f64> {
    if x.dimensions() != y.dimensions() {
        return Err(Error::invalid(format!(
            "cannot compare {}x{} with {}x{}",
            x.width(),
            x.height(),
            y.width(),
            y.height()
        )));
    }
    let sum: f64 = x
        .pixels()
        .iter()
        .zip(y.pixels())
        .map(|(&a, &b)| {
            let d = a as f64 / 255.0 - b as f64 / 255.0;
            d * d
        })
        .sum();
    Ok(sum / x.pixels().len() as f64)
}

/// Mean squared error over already-normalized values.
pub fn mse_values(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::invalid(format!(
            "value lists must be non-empty and equal length, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64)
}

/// Fraction of successful trials.
pub fn success_rate(outcomes: &[bool]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::invalid("success rate needs at least one outcome"));
    }
    Ok(outcomes.iter().filter(|&&s| s).count() as f64 / outcomes.len() as f64)
}
