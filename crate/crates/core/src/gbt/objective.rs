//! Softmax log-loss objective: per-class gradients and hessians.

use crate::error::{Error, Result};
use crate::tensor::softmax_slice;

/// First and second derivative of the loss with respect to one raw score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradHess {
    pub grad: f64,
    pub hess: f64,
}

/// Gradient and hessian of the multiclass log-loss at the given raw scores.
///
/// With p = softmax(raw): grad_c = p_c - [c == label], hess_c = p_c (1 - p_c)
/// (the diagonal of the softmax hessian). Gradients over the classes sum to
/// zero and every hessian lies in [0, 1/4].
pub fn softmax_grad_hess(raw_scores: &[f64], label: usize) -> Result<Vec<GradHess>> {
    if raw_scores.len() < 2 {
        return Err(Error::InvalidData(format!(
            "need at least 2 classes, got {}",
            raw_scores.len()
        )));
    }
    if label >= raw_scores.len() {
        return Err(Error::InvalidLabel(format!(
            "label {} out of range for {} classes",
            label,
            raw_scores.len()
        )));
    }
    if let Some(i) = raw_scores.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("raw score {} is {}", i, raw_scores[i])));
    }
    let probs = softmax_slice(raw_scores);
    Ok(probs
        .iter()
        .enumerate()
        .map(|(c, &p)| GradHess {
            grad: p - if c == label { 1.0 } else { 0.0 },
            hess: p * (1.0 - p),
        })
        .collect())
}

/// Multiclass log-loss of one sample from raw scores: -ln(softmax(raw)[label]).
pub fn log_loss_from_raw(raw_scores: &[f64], label: usize) -> f64 {
    let probs = softmax_slice(raw_scores);
    -probs[label].max(1e-300).ln()
}
