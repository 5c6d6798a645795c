//! Margin-softmax family: multi-class cross-entropy over scaled cosines
//! where the target logit is warped to `psi(th) = cos(m1 th + m2) - m3`.
//!
//! `(m1, m2, m3) = (4, 0, 0)`, `(1, 0.2, 0)` and `(1, 0, 0.2)` are the
//! angular, additive-angular and additive-cosine margins respectively;
//! `(1, 0, 0)` reduces to plain softmax on scaled cosines.

use super::{check_cosines, check_label, cross_entropy, CosineLoss};
use crate::error::{Error, Result};
use crate::numeric::clamp_cosine;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginSoftmaxParams {
    /// Angular multiplier, >= 1.
    pub m1: f64,
    /// Additive angle, >= 0.
    pub m2: f64,
    /// Additive cosine, >= 0.
    pub m3: f64,
    /// Logit scale, > 0.
    pub s: f64,
}

impl MarginSoftmaxParams {
    pub fn plain(s: f64) -> Self {
        MarginSoftmaxParams {
            m1: 1.0,
            m2: 0.0,
            m3: 0.0,
            s,
        }
    }

    /// Angular margin (multiplicative on the angle).
    pub fn angular(m1: f64, s: f64) -> Self {
        MarginSoftmaxParams {
            m1,
            m2: 0.0,
            m3: 0.0,
            s,
        }
    }

    /// Additive-angular margin.
    pub fn additive_angular(m2: f64, s: f64) -> Self {
        MarginSoftmaxParams {
            m1: 1.0,
            m2,
            m3: 0.0,
            s,
        }
    }

    /// Additive-cosine margin.
    pub fn additive_cosine(m3: f64, s: f64) -> Self {
        MarginSoftmaxParams {
            m1: 1.0,
            m2: 0.0,
            m3,
            s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m1 < 1.0 {
            return Err(Error::InvalidConfig(format!("m1={} must be >= 1", self.m1)));
        }
        if self.m2 < 0.0 || self.m3 < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "m2={} and m3={} must be >= 0",
                self.m2, self.m3
            )));
        }
        if self.s <= 0.0 {
            return Err(Error::InvalidConfig(format!("s={} must be > 0", self.s)));
        }
        Ok(())
    }

    /// `psi(acos(c))` and its derivative w.r.t. `c`.
    fn warp(&self, c: f64) -> (f64, f64) {
        if self.m1 == 1.0 && self.m2 == 0.0 {
            // No angular component: psi(th) = cos th - m3 directly, which
            // keeps the (1,0,0) case bit-comparable to plain softmax.
            (c - self.m3, 1.0)
        } else {
            let cc = clamp_cosine(c);
            let theta = cc.acos();
            let angle = self.m1 * theta + self.m2;
            let psi = angle.cos() - self.m3;
            let dpsi = self.m1 * angle.sin() / theta.sin();
            (psi, dpsi)
        }
    }
}

/// Cross-entropy with the target logit margin-warped, plus gradients w.r.t.
/// the cosines.
pub fn margin_softmax_loss(
    cosines: &[f64],
    label: usize,
    params: &MarginSoftmaxParams,
) -> Result<CosineLoss> {
    params.validate()?;
    check_label(cosines.len(), label)?;
    check_cosines(cosines)?;

    let (psi, dpsi) = params.warp(cosines[label]);
    let logits: Vec<f64> = cosines
        .iter()
        .enumerate()
        .map(|(j, &c)| {
            if j == label {
                params.s * psi
            } else {
                params.s * c
            }
        })
        .collect();
    let (value, probs) = cross_entropy(&logits, label);
    if !value.is_finite() {
        return Err(Error::NonFinite("margin softmax value".into()));
    }

    let mut grad = vec![0.0; cosines.len()];
    for (j, g) in grad.iter_mut().enumerate() {
        if j == label {
            *g = (probs[j] - 1.0) * params.s * dpsi;
        } else {
            *g = probs[j] * params.s;
        }
    }
    Ok(CosineLoss {
        value,
        grad,
        grad_bias: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::plain_softmax_loss;
    use crate::numeric::grad_check;
    use crate::rng::Rng;

    #[test]
    fn symmetric_two_class_is_log_two() {
        let p = MarginSoftmaxParams::plain(1.0);
        let out = margin_softmax_loss(&[0.37, 0.37], 0, &p).unwrap();
        assert!((out.value - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn additive_angular_hand_value() {
        // Target cosine 1, one negative at 0: loss = log(1 + e^{s(0 - cos m2)}).
        let p = MarginSoftmaxParams::additive_angular(0.2, 32.0);
        let out = margin_softmax_loss(&[1.0, 0.0], 0, &p).unwrap();
        let expected = (32.0 * (0.0 - (0.2f64).cos())).exp().ln_1p();
        assert!(
            (out.value - expected).abs() / expected < 1e-3,
            "value {} vs {expected}",
            out.value
        );
        assert!(out.value < 1e-12);
    }

    #[test]
    fn zero_margins_reduce_to_plain_softmax() {
        let mut rng = Rng::from_seed(3);
        for _ in 0..50 {
            let k = 2 + rng.index(9);
            let cosines: Vec<f64> = (0..k).map(|_| rng.uniform_in(-0.99, 0.99)).collect();
            let label = rng.index(k);
            let s = rng.uniform_in(1.0, 32.0);
            let p = MarginSoftmaxParams::plain(s);
            let a = margin_softmax_loss(&cosines, label, &p).unwrap();
            let scaled: Vec<f64> = cosines.iter().map(|c| c * s).collect();
            let b = plain_softmax_loss(&scaled, label).unwrap();
            assert!((a.value - b.value).abs() <= 1e-12);
            for (ga, gb) in a.grad.iter().zip(&b.grad) {
                assert!((ga - gb * s).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_for_all_variants() {
        let mut rng = Rng::from_seed(41);
        let variants = [
            MarginSoftmaxParams::angular(4.0, 32.0),
            MarginSoftmaxParams::additive_angular(0.2, 32.0),
            MarginSoftmaxParams::additive_cosine(0.2, 32.0),
            MarginSoftmaxParams::plain(16.0),
        ];
        for trial in 0..120 {
            let p = variants[trial % variants.len()];
            let k = 2 + rng.index(9);
            let cosines: Vec<f64> = (0..k).map(|_| rng.uniform_in(-0.9, 0.9)).collect();
            let label = rng.index(k);
            let out = margin_softmax_loss(&cosines, label, &p).unwrap();
            let err = grad_check(
                |c| margin_softmax_loss(c, label, &p).unwrap().value,
                &cosines,
                &out.grad,
                1e-5,
            )
            .unwrap();
            assert!(err <= 1e-6, "grad err {err} on trial {trial} ({p:?})");
        }
    }

    #[test]
    fn loss_is_nonnegative() {
        let mut rng = Rng::from_seed(8);
        for _ in 0..200 {
            let p = MarginSoftmaxParams::additive_angular(rng.uniform_in(0.0, 0.4), 24.0);
            let k = 2 + rng.index(6);
            let cosines: Vec<f64> = (0..k).map(|_| rng.uniform_in(-0.99, 0.99)).collect();
            let out = margin_softmax_loss(&cosines, rng.index(k), &p).unwrap();
            assert!(out.value >= 0.0);
        }
    }

    #[test]
    fn rejects_invalid_params() {
        let p = MarginSoftmaxParams {
            m1: 0.5,
            m2: 0.0,
            m3: 0.0,
            s: 32.0,
        };
        assert!(margin_softmax_loss(&[0.5, 0.2], 0, &p).is_err());
    }
}
