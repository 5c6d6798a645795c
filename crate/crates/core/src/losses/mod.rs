//! Forward values and analytic gradients for every training objective:
//! plain softmax, margin-softmax variants, the two prototypical metric
//! losses, and the pair-wise binary-classification loss on the hypersphere.
//!
//! All functions are pure; gradient accumulation across a batch is the
//! caller's job.

mod check;
mod margin;
mod proto;
mod softmax;
mod sphere2;

pub use check::{max_grad_check_error, CheckTarget, GRAD_CHECK_EPS};
pub use margin::{margin_softmax_loss, MarginSoftmaxParams};
pub use proto::{angular_prototypical_loss, prototypical_loss, ProtoBatch, ProtoLoss};
pub use softmax::plain_softmax_loss;
pub use sphere2::{sphereface2_loss, sphereface2_term, BinaryTerm, MarginType, SphereFace2Params};

use crate::error::{Error, Result};

/// Loss value plus gradients for a per-sample objective over a length-K
/// score vector (cosines or logits) and an optional scalar bias.
#[derive(Debug, Clone)]
pub struct CosineLoss {
    pub value: f64,
    /// Gradient w.r.t. the input scores, same length as the input.
    pub grad: Vec<f64>,
    /// Gradient w.r.t. the shared scalar bias; zero for bias-free losses.
    pub grad_bias: f64,
}

/// `log(1 + exp(x))` in the branchless stable form.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Logistic sigmoid, the derivative of [`softplus`].
pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-log softmax(z)[y]` and the softmax probabilities, computed in the
/// target-shifted form. Never forms `lse - z[y]` explicitly: that
/// subtraction rounds a near-zero loss away against a large max.
pub(crate) fn cross_entropy(z: &[f64], y: usize) -> (f64, Vec<f64>) {
    let zy = z[y];
    let mut shift = 0.0f64;
    for (j, &v) in z.iter().enumerate() {
        if j != y {
            shift = shift.max(v - zy);
        }
    }
    let value = if shift == 0.0 {
        // Target logit dominates; ln_1p keeps losses down to ~1e-300 exact.
        z.iter()
            .enumerate()
            .filter(|(j, _)| *j != y)
            .map(|(_, v)| (v - zy).exp())
            .sum::<f64>()
            .ln_1p()
    } else {
        let mut s = (-shift).exp();
        for (j, &v) in z.iter().enumerate() {
            if j != y {
                s += (v - zy - shift).exp();
            }
        }
        shift + s.ln()
    };
    let lse = zy + value;
    let probs = z.iter().map(|v| (v - lse).exp()).collect();
    (value, probs)
}

const GMAP_DOMAIN_TOL: f64 = 1e-9;

/// Similarity-adjustment map `g(z) = 2((z+1)/2)^t - 1` with its derivative.
///
/// Strictly increasing on (-1, 1) for `t >= 1`, with fixed points at both
/// ends; `t = 1` is the identity.
pub fn g_map(z: f64, t: f64) -> Result<(f64, f64)> {
    if t < 1.0 {
        return Err(Error::Domain(format!("g_map exponent t={t} must be >= 1")));
    }
    if !(-1.0 - GMAP_DOMAIN_TOL..=1.0 + GMAP_DOMAIN_TOL).contains(&z) {
        return Err(Error::Domain(format!("g_map input z={z} outside [-1, 1]")));
    }
    let zc = z.clamp(-1.0, 1.0);
    let half = (zc + 1.0) / 2.0;
    let value = 2.0 * half.powf(t) - 1.0;
    let deriv = if t == 1.0 {
        1.0
    } else {
        t * half.powf(t - 1.0)
    };
    Ok((value, deriv))
}

pub(crate) fn check_label(len: usize, label: usize) -> Result<()> {
    if len == 0 {
        return Err(Error::Domain("empty score vector".into()));
    }
    if label >= len {
        return Err(Error::Domain(format!(
            "label {label} out of range for {len} classes"
        )));
    }
    Ok(())
}

pub(crate) fn check_cosines(cosines: &[f64]) -> Result<()> {
    for (i, &c) in cosines.iter().enumerate() {
        if !c.is_finite() {
            return Err(Error::NonFinite(format!("cosine at index {i}")));
        }
        if !(-1.0 - GMAP_DOMAIN_TOL..=1.0 + GMAP_DOMAIN_TOL).contains(&c) {
            return Err(Error::Domain(format!(
                "cosine {c} at index {i} outside [-1, 1]"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g_map_fixed_points() {
        for t in [1.0, 2.0, 3.0, 4.7, 10.0] {
            let (at_one, _) = g_map(1.0, t).unwrap();
            let (at_minus_one, _) = g_map(-1.0, t).unwrap();
            assert!((at_one - 1.0).abs() <= 1e-12);
            assert!((at_minus_one + 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn g_map_hand_value() {
        // 2 * (0.5)^3 - 1 = -0.75
        let (v, _) = g_map(0.0, 3.0).unwrap();
        assert!((v + 0.75).abs() <= 1e-15);
    }

    #[test]
    fn g_map_t_one_is_identity() {
        for z in [-1.0, -0.3, 0.0, 0.5, 1.0] {
            let (v, d) = g_map(z, 1.0).unwrap();
            assert!((v - z).abs() <= 1e-12);
            assert!((d - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn g_map_strictly_increasing() {
        for t in [1.0, 1.5, 2.0, 3.0, 4.0] {
            let mut prev = g_map(-0.999, t).unwrap().0;
            let mut z = -0.999 + 0.013;
            while z < 1.0 {
                let cur = g_map(z, t).unwrap().0;
                assert!(cur > prev, "g not increasing at z={z}, t={t}");
                prev = cur;
                z += 0.013;
            }
        }
    }

    #[test]
    fn g_map_domain_errors() {
        assert!(g_map(1.1, 2.0).is_err());
        assert!(g_map(0.0, 0.5).is_err());
    }

    #[test]
    fn softplus_matches_naive_in_safe_range() {
        for x in [-30.0f64, -2.0, -0.1, 0.0, 0.1, 2.0, 30.0] {
            let naive = (1.0 + x.exp()).ln();
            assert!((softplus(x) - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn softplus_survives_large_arguments() {
        assert!((softplus(800.0) - 800.0).abs() < 1e-9);
        assert_eq!(softplus(-800.0), 0.0);
    }

    #[test]
    fn logistic_is_softplus_derivative() {
        for x in [-5.0, -1.0, 0.0, 0.4, 3.0] {
            let eps = 1e-6;
            let numeric = (softplus(x + eps) - softplus(x - eps)) / (2.0 * eps);
            assert!((logistic(x) - numeric).abs() < 1e-9);
        }
    }
}
