//! Plain cross-entropy over unconstrained logits; the classification
//! baseline the margin variants are compared against.

use super::{check_label, cross_entropy, CosineLoss};
use crate::error::{Error, Result};

pub fn plain_softmax_loss(logits: &[f64], label: usize) -> Result<CosineLoss> {
    check_label(logits.len(), label)?;
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("softmax logit".into()));
    }
    let (value, mut grad) = cross_entropy(logits, label);
    grad[label] -= 1.0;
    if !value.is_finite() {
        return Err(Error::NonFinite("softmax value".into()));
    }
    Ok(CosineLoss {
        value,
        grad,
        grad_bias: 0.0,
    })
}
