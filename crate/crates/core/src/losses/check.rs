//! Randomized finite-difference verification harness shared by the CLI
//! `grad-check` command and the acceptance suite.
//!
//! Each trial samples a fresh input (and, for the binary-classification
//! loss, fresh hyperparameters), evaluates the analytic gradient of every
//! differentiable input, and compares against central differences.

use super::{
    angular_prototypical_loss, margin_softmax_loss, plain_softmax_loss, prototypical_loss,
    sphereface2_loss, MarginSoftmaxParams, MarginType, ProtoBatch, SphereFace2Params,
};
use crate::error::{Error, Result};
use crate::numeric::grad_check;
use crate::rng::Rng;

pub const GRAD_CHECK_EPS: f64 = 1e-5;

/// Which loss a gradient-check run exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckTarget {
    Softmax,
    ASoftmax,
    AmSoftmax,
    AamSoftmax,
    Prototypical,
    AngularPrototypical,
    SphereFace2C,
    SphereFace2A,
    SphereFace2M,
}

impl CheckTarget {
    pub const ALL: [CheckTarget; 9] = [
        CheckTarget::Softmax,
        CheckTarget::ASoftmax,
        CheckTarget::AmSoftmax,
        CheckTarget::AamSoftmax,
        CheckTarget::Prototypical,
        CheckTarget::AngularPrototypical,
        CheckTarget::SphereFace2C,
        CheckTarget::SphereFace2A,
        CheckTarget::SphereFace2M,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CheckTarget::Softmax => "softmax",
            CheckTarget::ASoftmax => "a-softmax",
            CheckTarget::AmSoftmax => "am-softmax",
            CheckTarget::AamSoftmax => "aam-softmax",
            CheckTarget::Prototypical => "prototypical",
            CheckTarget::AngularPrototypical => "angular-prototypical",
            CheckTarget::SphereFace2C => "sphereface2",
            CheckTarget::SphereFace2A => "sphereface2-a",
            CheckTarget::SphereFace2M => "sphereface2-m",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        CheckTarget::ALL
            .iter()
            .find(|t| t.as_str() == s)
            .copied()
            .ok_or_else(|| Error::InvalidConfig(format!("unknown grad-check loss '{s}'")))
    }
}

/// Cosines kept inside +-0.9: the angular warps are differentiable on
/// (-1, 1) but their higher derivatives blow up toward the endpoints,
/// which central differences at eps = 1e-5 would resolve poorly.
fn sample_cosines(rng: &mut Rng, k: usize) -> Vec<f64> {
    (0..k).map(|_| rng.uniform_in(-0.9, 0.9)).collect()
}

fn sphere_params(rng: &mut Rng, margin_type: MarginType, canonical: bool) -> SphereFace2Params {
    if canonical {
        return SphereFace2Params {
            margin_type,
            ..SphereFace2Params::default()
        };
    }
    SphereFace2Params {
        lambda: rng.uniform_in(0.05, 0.95),
        t: rng.uniform_in(1.0, 4.0),
        s: rng.uniform_in(4.0, 48.0),
        m: rng.uniform_in(0.0, 0.3),
        bias_init: 0.0,
        margin_type,
    }
}

fn check_cosine_loss<F>(rng: &mut Rng, f: F) -> Result<f64>
where
    F: Fn(&[f64], usize) -> Result<super::CosineLoss>,
{
    let k = 2 + rng.index(11);
    let cosines = sample_cosines(rng, k);
    let label = rng.index(k);
    let out = f(&cosines, label)?;
    grad_check(
        |c| f(c, label).expect("perturbed input stays valid").value,
        &cosines,
        &out.grad,
        GRAD_CHECK_EPS,
    )
}

fn check_sphereface2(rng: &mut Rng, margin_type: MarginType, trial: usize) -> Result<f64> {
    let params = sphere_params(rng, margin_type, trial.is_multiple_of(10));
    let bias = rng.uniform_in(-0.5, 0.5);
    let k = 2 + rng.index(11);
    let cosines = sample_cosines(rng, k);
    let label = rng.index(k);
    let out = sphereface2_loss(&cosines, label, &params, bias)?;
    let cos_err = grad_check(
        |c| {
            sphereface2_loss(c, label, &params, bias)
                .expect("perturbed cosines stay valid")
                .value
        },
        &cosines,
        &out.grad,
        GRAD_CHECK_EPS,
    )?;
    let bias_err = grad_check(
        |b| {
            sphereface2_loss(&cosines, label, &params, b[0])
                .expect("perturbed bias stays valid")
                .value
        },
        &[bias],
        &[out.grad_bias],
        GRAD_CHECK_EPS,
    )?;
    Ok(cos_err.max(bias_err))
}

fn random_proto_batch(rng: &mut Rng) -> ProtoBatch {
    let n = 2 + rng.index(4);
    let m = 2 + rng.index(3);
    let d = 3 + rng.index(8);
    let data: Vec<f64> = (0..n * m * d).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    ProtoBatch::new(n, m, d, data).expect("sampled dims satisfy batch preconditions")
}

fn check_prototypical(rng: &mut Rng) -> Result<f64> {
    let batch = random_proto_batch(rng);
    let (n, m, d) = (batch.speakers(), batch.utts_per_speaker(), batch.dim());
    let data: Vec<f64> = (0..n)
        .flat_map(|i| (0..m).flat_map(move |u| (0..d).map(move |t| (i, u, t))))
        .map(|(i, u, t)| batch.embedding(i, u)[t])
        .collect();
    let out = prototypical_loss(&batch)?;
    grad_check(
        |x| {
            let b = ProtoBatch::new(n, m, d, x.to_vec()).expect("shape preserved");
            prototypical_loss(&b)
                .expect("perturbed batch stays valid")
                .value
        },
        &data,
        &out.grad_embeddings,
        GRAD_CHECK_EPS,
    )
}

fn check_angular_prototypical(rng: &mut Rng) -> Result<f64> {
    let batch = random_proto_batch(rng);
    let (n, m, d) = (batch.speakers(), batch.utts_per_speaker(), batch.dim());
    let data: Vec<f64> = (0..n)
        .flat_map(|i| (0..m).flat_map(move |u| (0..d).map(move |t| (i, u, t))))
        .map(|(i, u, t)| batch.embedding(i, u)[t])
        .collect();
    let scale = rng.uniform_in(0.5, 12.0);
    let bias = rng.uniform_in(-2.0, 2.0);
    let out = angular_prototypical_loss(&batch, scale, bias)?;
    let emb_err = grad_check(
        |x| {
            let b = ProtoBatch::new(n, m, d, x.to_vec()).expect("shape preserved");
            angular_prototypical_loss(&b, scale, bias)
                .expect("perturbed batch stays valid")
                .value
        },
        &data,
        &out.grad_embeddings,
        GRAD_CHECK_EPS,
    )?;
    let scalar_err = grad_check(
        |wb| {
            angular_prototypical_loss(&batch, wb[0], wb[1])
                .expect("perturbed scalars stay valid")
                .value
        },
        &[scale, bias],
        &[out.grad_scale, out.grad_bias],
        GRAD_CHECK_EPS,
    )?;
    Ok(emb_err.max(scalar_err))
}

/// Runs `trials` random configurations of one loss and returns the worst
/// relative error between analytic and central-difference gradients.
pub fn max_grad_check_error(target: CheckTarget, trials: usize, seed: u64) -> Result<f64> {
    let mut rng = Rng::from_seed(seed).split(target.as_str());
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let err = match target {
            CheckTarget::Softmax => {
                // Plain softmax takes unconstrained logits; widen the range.
                let k = 2 + rng.index(11);
                let logits: Vec<f64> = (0..k).map(|_| rng.uniform_in(-4.0, 4.0)).collect();
                let label = rng.index(k);
                let out = plain_softmax_loss(&logits, label)?;
                grad_check(
                    |z| {
                        plain_softmax_loss(z, label)
                            .expect("logits stay finite")
                            .value
                    },
                    &logits,
                    &out.grad,
                    GRAD_CHECK_EPS,
                )?
            }
            CheckTarget::ASoftmax => {
                let p = MarginSoftmaxParams::angular(4.0, 32.0);
                check_cosine_loss(&mut rng, |c, y| margin_softmax_loss(c, y, &p))?
            }
            CheckTarget::AmSoftmax => {
                let p = MarginSoftmaxParams::additive_cosine(0.2, 32.0);
                check_cosine_loss(&mut rng, |c, y| margin_softmax_loss(c, y, &p))?
            }
            CheckTarget::AamSoftmax => {
                let p = MarginSoftmaxParams::additive_angular(0.2, 32.0);
                check_cosine_loss(&mut rng, |c, y| margin_softmax_loss(c, y, &p))?
            }
            CheckTarget::Prototypical => check_prototypical(&mut rng)?,
            CheckTarget::AngularPrototypical => check_angular_prototypical(&mut rng)?,
            CheckTarget::SphereFace2C => check_sphereface2(&mut rng, MarginType::C, trial)?,
            CheckTarget::SphereFace2A => check_sphereface2(&mut rng, MarginType::A, trial)?,
            CheckTarget::SphereFace2M => check_sphereface2(&mut rng, MarginType::M, trial)?,
        };
        worst = worst.max(err);
    }
    Ok(worst)
}
