//! Trainable pieces: a small tanh MLP encoder whose outputs are pinned to
//! the unit sphere, and the per-loss classifier heads.

mod checkpoint;
mod optimizer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use optimizer::{sgd_step, step_encoder, step_head, SgdConfig};

use crate::error::{Error, Result};
use crate::numeric::{dot, norm, Matrix};
use crate::rng::Rng;

/// Allowed drift of a supposedly-unit row before cosine computations refuse
/// to treat dot products as cosines.
pub const NORM_DRIFT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// out x in.
    pub weights: Matrix,
    /// Length out.
    pub bias: Vec<f64>,
    /// Hidden layers squash with tanh; the final projection is linear.
    pub tanh: bool,
}

/// MLP with L2-normalized output rows. An encoder with no layers is the
/// identity followed by normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    input_dim: usize,
    embed_dim: usize,
    layers: Vec<DenseLayer>,
}

/// Per-layer activations cached by the forward pass for backprop.
pub struct EncoderCache {
    /// activations[0] is the input; activations[l + 1] the output of layer l.
    activations: Vec<Matrix>,
    /// Pre-normalization outputs and their norms.
    prenorm: Matrix,
    norms: Vec<f64>,
}

/// Gradient (or momentum) buffers shaped like the encoder parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub layers: Vec<(Matrix, Vec<f64>)>,
}

impl Encoder {
    /// Builds `input -> hidden... -> embed` with tanh on hidden layers and
    /// uniform +-sqrt(6 / (fan_in + fan_out)) weight init.
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        embed_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if input_dim == 0 || embed_dim == 0 || hidden.contains(&0) {
            return Err(Error::InvalidConfig(
                "encoder layer sizes must be positive".into(),
            ));
        }
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(embed_dim);
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut weights = Matrix::zeros(fan_out, fan_in);
            for v in weights.data_mut() {
                *v = rng.uniform_in(-bound, bound);
            }
            layers.push(DenseLayer {
                weights,
                bias: vec![0.0; fan_out],
                tanh: true,
            });
        }
        if let Some(last) = layers.last_mut() {
            last.tanh = false;
        }
        Ok(Encoder {
            input_dim,
            embed_dim,
            layers,
        })
    }

    /// Layerless pass-through (normalization only); input and embedding
    /// dimensions coincide.
    pub fn identity(dim: usize) -> Self {
        Encoder {
            input_dim: dim,
            embed_dim: dim,
            layers: Vec::new(),
        }
    }

    pub fn from_layers(input_dim: usize, embed_dim: usize, layers: Vec<DenseLayer>) -> Self {
        Encoder {
            input_dim,
            embed_dim,
            layers,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    /// Maps a batch of feature rows to unit embeddings, keeping the cache
    /// needed by [`backward`](Self::backward).
    pub fn forward(&self, features: &Matrix) -> Result<(Matrix, EncoderCache)> {
        if features.cols() != self.input_dim {
            return Err(Error::Domain(format!(
                "encoder expects {} input columns, got {}",
                self.input_dim,
                features.cols()
            )));
        }
        if !features.data().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("encoder input".into()));
        }
        let batch = features.rows();
        let mut activations = vec![features.clone()];
        for layer in &self.layers {
            let prev = activations.last().expect("at least the input is present");
            let out_dim = layer.weights.rows();
            let mut out = Matrix::zeros(batch, out_dim);
            for r in 0..batch {
                let x = prev.row(r);
                for o in 0..out_dim {
                    let z = dot(layer.weights.row(o), x) + layer.bias[o];
                    out.set(r, o, if layer.tanh { z.tanh() } else { z });
                }
            }
            activations.push(out);
        }
        let prenorm = activations.last().expect("output present").clone();
        let mut embeddings = Matrix::zeros(batch, self.embed_dim);
        let mut norms = Vec::with_capacity(batch);
        for r in 0..batch {
            let v = prenorm.row(r);
            let n = norm(v);
            if !n.is_finite() {
                return Err(Error::NonFinite("encoder pre-normalization output".into()));
            }
            if n <= crate::numeric::ZERO_NORM_THRESHOLD {
                return Err(Error::ZeroVector);
            }
            for (j, x) in v.iter().enumerate() {
                embeddings.set(r, j, x / n);
            }
            norms.push(n);
        }
        Ok((
            embeddings,
            EncoderCache {
                activations,
                prenorm,
                norms,
            },
        ))
    }

    /// Backpropagates dL/d(embeddings) to parameter gradients.
    pub fn backward(&self, cache: &EncoderCache, grad_embeddings: &Matrix) -> EncoderGrads {
        let batch = grad_embeddings.rows();
        // Through the normalization: g_v = (g_y - (g_y . y) y) / |v|.
        let mut grad = Matrix::zeros(batch, self.embed_dim);
        for r in 0..batch {
            let v = cache.prenorm.row(r);
            let n = cache.norms[r];
            let gy = grad_embeddings.row(r);
            let y: Vec<f64> = v.iter().map(|x| x / n).collect();
            let gy_dot_y = dot(gy, &y);
            for j in 0..self.embed_dim {
                grad.set(r, j, (gy[j] - gy_dot_y * y[j]) / n);
            }
        }
        let mut out = EncoderGrads {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    (
                        Matrix::zeros(l.weights.rows(), l.weights.cols()),
                        vec![0.0; l.bias.len()],
                    )
                })
                .collect(),
        };
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.activations[l];
            let output = &cache.activations[l + 1];
            let in_dim = layer.weights.cols();
            let mut grad_prev = Matrix::zeros(batch, in_dim);
            let (gw, gb) = &mut out.layers[l];
            for r in 0..batch {
                for (o, gbo) in gb.iter_mut().enumerate() {
                    let mut gz = grad.get(r, o);
                    if layer.tanh {
                        let a = output.get(r, o);
                        gz *= 1.0 - a * a;
                    }
                    if gz == 0.0 {
                        continue;
                    }
                    *gbo += gz;
                    let wrow = layer.weights.row(o);
                    let xrow = input.row(r);
                    let grow = gw.row_mut(o);
                    for i in 0..in_dim {
                        grow[i] += gz * xrow[i];
                    }
                    let prev = grad_prev.row_mut(r);
                    for i in 0..in_dim {
                        prev[i] += gz * wrow[i];
                    }
                }
            }
            grad = grad_prev;
        }
        out
    }

    pub fn zero_grads(&self) -> EncoderGrads {
        EncoderGrads {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    (
                        Matrix::zeros(l.weights.rows(), l.weights.cols()),
                        vec![0.0; l.bias.len()],
                    )
                })
                .collect(),
        }
    }
}

/// Classifier head paired with a loss family.
#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    /// Unit-norm class rows plus one shared scalar bias (used by the
    /// binary-classification loss; margin softmax ignores the bias).
    Hypersphere { weights: Matrix, bias: f64 },
    /// Unconstrained affine logits for the plain softmax baseline.
    Affine { weights: Matrix, bias: Vec<f64> },
    /// Learnable (scale, bias) scalars for the angular prototypical loss.
    PairwiseScale { scale: f64, bias: f64 },
    /// Prototypical loss has no head parameters.
    None,
}

/// Gradient (or momentum) buffers shaped like a head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub weights: Option<Matrix>,
    pub bias: Vec<f64>,
}

impl Head {
    /// Class rows drawn standard normal then normalized onto the sphere.
    pub fn hypersphere(classes: usize, dim: usize, bias_init: f64, rng: &mut Rng) -> Result<Self> {
        let mut weights = Matrix::zeros(classes, dim);
        for r in 0..classes {
            let row: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            let unit = crate::numeric::l2_normalize(&row)?;
            weights.row_mut(r).copy_from_slice(unit.as_slice());
        }
        Ok(Head::Hypersphere {
            weights,
            bias: bias_init,
        })
    }

    /// Standard-normal rows scaled by 1/sqrt(dim), zero bias.
    pub fn affine(classes: usize, dim: usize, rng: &mut Rng) -> Self {
        let mut weights = Matrix::zeros(classes, dim);
        let scale = 1.0 / (dim as f64).sqrt();
        for v in weights.data_mut() {
            *v = rng.normal() * scale;
        }
        Head::Affine {
            weights,
            bias: vec![0.0; classes],
        }
    }

    pub fn zero_grads(&self) -> HeadGrads {
        match self {
            Head::Hypersphere { weights, .. } => HeadGrads {
                weights: Some(Matrix::zeros(weights.rows(), weights.cols())),
                bias: vec![0.0],
            },
            Head::Affine { weights, bias } => HeadGrads {
                weights: Some(Matrix::zeros(weights.rows(), weights.cols())),
                bias: vec![0.0; bias.len()],
            },
            Head::PairwiseScale { .. } => HeadGrads {
                weights: None,
                bias: vec![0.0, 0.0],
            },
            Head::None => HeadGrads {
                weights: None,
                bias: Vec::new(),
            },
        }
    }
}

/// Pairwise dot products between unit embeddings and unit class rows.
///
/// Both sides must actually be on the sphere; drift beyond
/// [`NORM_DRIFT_TOLERANCE`] is an invariant violation, not a silent rescale.
pub fn head_cosines(embeddings: &Matrix, weights: &Matrix) -> Result<Matrix> {
    for r in 0..embeddings.rows() {
        let n = norm(embeddings.row(r));
        if (n - 1.0).abs() > NORM_DRIFT_TOLERANCE {
            return Err(Error::InvariantViolation(format!(
                "embedding row {r} norm {n} drifted off the sphere"
            )));
        }
    }
    for r in 0..weights.rows() {
        let n = norm(weights.row(r));
        if (n - 1.0).abs() > NORM_DRIFT_TOLERANCE {
            return Err(Error::InvariantViolation(format!(
                "classifier row {r} norm {n} drifted off the sphere"
            )));
        }
    }
    let mut out = embeddings.mul_transpose(weights)?;
    for v in out.data_mut() {
        *v = v.clamp(-1.0, 1.0);
    }
    Ok(out)
}

/// `e W^T + b` logits for the affine baseline head.
pub fn affine_logits(embeddings: &Matrix, weights: &Matrix, bias: &[f64]) -> Result<Matrix> {
    let mut out = embeddings.mul_transpose(weights)?;
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
    Ok(out)
}
