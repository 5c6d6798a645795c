//! Classical SGD with momentum and weight decay, plus the hypersphere
//! projection applied to classifier rows after each step.

use super::{Encoder, EncoderGrads, Head, HeadGrads};
use crate::error::{Error, Result};
use crate::numeric::norm;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// One update: `v <- momentum v + grad + wd p; p <- p - lr v`.
pub fn sgd_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    cfg: &SgdConfig,
) -> Result<()> {
    debug_assert_eq!(params.len(), grads.len());
    debug_assert_eq!(params.len(), velocity.len());
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = cfg.momentum * *v + *g + cfg.weight_decay * *p;
        *p -= cfg.lr * *v;
        if !p.is_finite() {
            return Err(Error::NonFinite("parameter after SGD step".into()));
        }
    }
    Ok(())
}

pub fn step_encoder(
    encoder: &mut Encoder,
    grads: &EncoderGrads,
    velocity: &mut EncoderGrads,
    cfg: &SgdConfig,
) -> Result<()> {
    for ((layer, (gw, gb)), (vw, vb)) in encoder
        .layers_mut()
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut velocity.layers)
    {
        sgd_step(layer.weights.data_mut(), gw.data(), vw.data_mut(), cfg)?;
        sgd_step(&mut layer.bias, gb, vb, cfg)?;
    }
    Ok(())
}

/// Head update; hypersphere class rows are re-projected onto the unit
/// sphere afterwards, and the pairwise scale is clamped positive.
pub fn step_head(
    head: &mut Head,
    grads: &HeadGrads,
    velocity: &mut HeadGrads,
    cfg: &SgdConfig,
) -> Result<()> {
    match head {
        Head::Hypersphere { weights, bias } => {
            let gw = grads
                .weights
                .as_ref()
                .expect("hypersphere grads carry weights");
            let vw = velocity.weights.as_mut().expect("velocity mirrors grads");
            sgd_step(weights.data_mut(), gw.data(), vw.data_mut(), cfg)?;
            let mut b = [*bias];
            sgd_step(&mut b, &grads.bias, &mut velocity.bias, cfg)?;
            *bias = b[0];
            for r in 0..weights.rows() {
                let row = weights.row_mut(r);
                let n = norm(row);
                if n <= crate::numeric::ZERO_NORM_THRESHOLD {
                    return Err(Error::ZeroVector);
                }
                for v in row.iter_mut() {
                    *v /= n;
                }
            }
        }
        Head::Affine { weights, bias } => {
            let gw = grads.weights.as_ref().expect("affine grads carry weights");
            let vw = velocity.weights.as_mut().expect("velocity mirrors grads");
            sgd_step(weights.data_mut(), gw.data(), vw.data_mut(), cfg)?;
            sgd_step(bias, &grads.bias, &mut velocity.bias, cfg)?;
        }
        Head::PairwiseScale { scale, bias } => {
            let mut sb = [*scale, *bias];
            sgd_step(&mut sb, &grads.bias, &mut velocity.bias, cfg)?;
            *scale = sb[0].max(1e-6);
            *bias = sb[1];
        }
        Head::None => {}
    }
    Ok(())
}
