//! Pair-wise binary-classification loss on the hypersphere.
//!
//! A sample with label `y` among `K` classes is scored by `K` independent
//! one-vs-rest logistic classifiers: one positive term for class `y`, and
//! `K - 1` negative terms. A weight `lambda` rebalances the two sides, a
//! shared scalar bias acts as a universal decision threshold, `s` scales
//! cosines, `m` is the margin, and the `g` map reshapes the similarity
//! distribution.

use super::{check_cosines, check_label, g_map, logistic, softplus, CosineLoss};
use crate::error::{Error, Result};
use crate::numeric::clamp_cosine;
use std::f64::consts::PI;

/// Where the margin is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginType {
    /// Additive on the adjusted similarity: positive score `g(cos th) - m`.
    C,
    /// Additive inside the angle: positive score `g(cos(th + m))`.
    A,
    /// Both: positive score `g(cos(th + m)) - m`.
    M,
}

impl MarginType {
    pub fn as_str(&self) -> &'static str {
        match self {
            MarginType::C => "C",
            MarginType::A => "A",
            MarginType::M => "M",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "C" | "c" => Ok(MarginType::C),
            "A" | "a" => Ok(MarginType::A),
            "M" | "m" => Ok(MarginType::M),
            other => Err(Error::InvalidConfig(format!(
                "unknown margin type '{other}' (expected C, A or M)"
            ))),
        }
    }
}

/// Full hyperparameter record for the binary-classification loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereFace2Params {
    /// Positive/negative balance weight in [0, 1].
    pub lambda: f64,
    /// Similarity-adjustment exponent, >= 1.
    pub t: f64,
    /// Cosine scale, > 0.
    pub s: f64,
    /// Margin in [0, 1).
    pub m: f64,
    /// Initial value for the learnable shared bias.
    pub bias_init: f64,
    pub margin_type: MarginType,
}

impl Default for SphereFace2Params {
    /// The canonical setting: lambda 0.7, t 3, s 32, m 0.2, additive margin.
    fn default() -> Self {
        SphereFace2Params {
            lambda: 0.7,
            t: 3.0,
            s: 32.0,
            m: 0.2,
            bias_init: 0.0,
            margin_type: MarginType::C,
        }
    }
}

impl SphereFace2Params {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig(format!(
                "lambda={} outside [0, 1]",
                self.lambda
            )));
        }
        if self.t < 1.0 {
            return Err(Error::InvalidConfig(format!("t={} must be >= 1", self.t)));
        }
        if self.s <= 0.0 {
            return Err(Error::InvalidConfig(format!("s={} must be > 0", self.s)));
        }
        if !(0.0..1.0).contains(&self.m) {
            return Err(Error::InvalidConfig(format!("m={} outside [0, 1)", self.m)));
        }
        if !self.bias_init.is_finite() {
            return Err(Error::NonFinite("bias_init".into()));
        }
        Ok(())
    }
}

/// One binary classifier's contribution, with its partial derivatives.
#[derive(Debug, Clone, Copy)]
pub struct BinaryTerm {
    pub value: f64,
    pub grad_cosine: f64,
    pub grad_bias: f64,
}

/// Margin-shifted similarity for a positive (target) classifier, with its
/// derivative w.r.t. the raw cosine.
fn positive_score(cosine: f64, params: &SphereFace2Params) -> Result<(f64, f64)> {
    match params.margin_type {
        MarginType::C => {
            let (g, dg) = g_map(cosine, params.t)?;
            Ok((g - params.m, dg))
        }
        MarginType::A | MarginType::M => {
            // Arc margin: warp the angle, saturating at pi so the pressure
            // toward the target never flips sign at antipodal angles.
            let c = clamp_cosine(cosine);
            let theta = c.acos();
            let shifted = theta + params.m;
            let (warped, dwarped_dcos) = if shifted < PI {
                (shifted.cos(), shifted.sin() / theta.sin())
            } else {
                (-1.0, 0.0)
            };
            let (g, dg) = g_map(warped, params.t)?;
            let score = if params.margin_type == MarginType::M {
                g - params.m
            } else {
                g
            };
            Ok((score, dg * dwarped_dcos))
        }
    }
}

/// Contribution of a single one-vs-rest classifier.
///
/// The full loss is the plain sum of `K` of these, so permuting the
/// non-target classes permutes gradients with no cross coupling.
pub fn sphereface2_term(
    cosine: f64,
    is_target: bool,
    params: &SphereFace2Params,
    bias: f64,
) -> Result<BinaryTerm> {
    params.validate()?;
    check_cosines(std::slice::from_ref(&cosine))?;
    if is_target {
        let (score, dscore) = positive_score(cosine, params)?;
        let arg = -params.s * score - bias;
        let slope = params.lambda * logistic(arg);
        Ok(BinaryTerm {
            value: params.lambda * softplus(arg),
            grad_cosine: -slope * params.s * dscore,
            grad_bias: -slope,
        })
    } else {
        let (g, dg) = g_map(cosine, params.t)?;
        let arg = params.s * (g + params.m) + bias;
        let slope = (1.0 - params.lambda) * logistic(arg);
        Ok(BinaryTerm {
            value: (1.0 - params.lambda) * softplus(arg),
            grad_cosine: slope * params.s * dg,
            grad_bias: slope,
        })
    }
}

/// Loss over all `K` classifiers for one sample, with gradients w.r.t. the
/// cosine vector and the shared bias.
pub fn sphereface2_loss(
    cosines: &[f64],
    label: usize,
    params: &SphereFace2Params,
    bias: f64,
) -> Result<CosineLoss> {
    params.validate()?;
    check_label(cosines.len(), label)?;
    check_cosines(cosines)?;
    if !bias.is_finite() {
        return Err(Error::NonFinite("bias".into()));
    }
    let mut value = 0.0;
    let mut grad = vec![0.0; cosines.len()];
    let mut grad_bias = 0.0;
    for (j, &c) in cosines.iter().enumerate() {
        let term = sphereface2_term(c, j == label, params, bias)?;
        value += term.value;
        grad[j] = term.grad_cosine;
        grad_bias += term.grad_bias;
    }
    if !value.is_finite() {
        return Err(Error::NonFinite("sphereface2 loss value".into()));
    }
    Ok(CosineLoss {
        value,
        grad,
        grad_bias,
    })
}
