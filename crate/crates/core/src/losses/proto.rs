//! Prototypical metric losses: each mini-batch holds N speakers x M
//! utterances, the last utterance per speaker is the query and the rest
//! form the prototype. Queries are classified against the N prototypes
//! with a softmax over either negated squared distances or scaled cosines.

use crate::error::{Error, Result};
use crate::losses::cross_entropy;
use crate::numeric::{dot, norm, ZERO_NORM_THRESHOLD};

/// N x M x d block of embeddings, speaker-major.
#[derive(Debug, Clone)]
pub struct ProtoBatch {
    speakers: usize,
    utts_per_speaker: usize,
    dim: usize,
    data: Vec<f64>,
}

impl ProtoBatch {
    pub fn new(
        speakers: usize,
        utts_per_speaker: usize,
        dim: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if speakers < 2 || utts_per_speaker < 2 {
            return Err(Error::DegenerateBatch(format!(
                "prototypical batch needs N >= 2 and M >= 2, got N={speakers}, M={utts_per_speaker}"
            )));
        }
        if data.len() != speakers * utts_per_speaker * dim {
            return Err(Error::DegenerateBatch(format!(
                "storage length {} does not match {speakers}x{utts_per_speaker}x{dim}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("prototypical batch element".into()));
        }
        Ok(ProtoBatch {
            speakers,
            utts_per_speaker,
            dim,
            data,
        })
    }

    pub fn speakers(&self) -> usize {
        self.speakers
    }

    pub fn utts_per_speaker(&self) -> usize {
        self.utts_per_speaker
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embedding(&self, speaker: usize, utt: usize) -> &[f64] {
        let start = (speaker * self.utts_per_speaker + utt) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// The query is the last utterance of each speaker.
    fn query(&self, speaker: usize) -> &[f64] {
        self.embedding(speaker, self.utts_per_speaker - 1)
    }

    /// Mean of the support utterances (all but the last).
    fn prototype(&self, speaker: usize) -> Vec<f64> {
        let support = self.utts_per_speaker - 1;
        let mut c = vec![0.0; self.dim];
        for u in 0..support {
            for (acc, x) in c.iter_mut().zip(self.embedding(speaker, u)) {
                *acc += x;
            }
        }
        for v in &mut c {
            *v /= support as f64;
        }
        c
    }
}

/// Loss value plus gradients w.r.t. every embedding in the batch and the
/// two learnable scalars of the angular variant.
#[derive(Debug, Clone)]
pub struct ProtoLoss {
    pub value: f64,
    /// Same N x M x d layout as the batch.
    pub grad_embeddings: Vec<f64>,
    pub grad_scale: f64,
    pub grad_bias: f64,
}

struct Scored {
    value: f64,
    /// dL/dS[i][k], row-major N x N.
    dscore: Vec<f64>,
}

/// Shared cross-entropy over an N x N similarity matrix (target k = i).
fn cross_entropy_rows(n: usize, scores: &[f64]) -> Result<Scored> {
    let mut value = 0.0;
    let mut dscore = vec![0.0; n * n];
    for i in 0..n {
        let row = &scores[i * n..(i + 1) * n];
        let (row_value, probs) = cross_entropy(row, i);
        value += row_value;
        for k in 0..n {
            dscore[i * n + k] = (probs[k] - if k == i { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    value /= n as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite("prototypical loss value".into()));
    }
    Ok(Scored { value, dscore })
}

/// Softmax over negated squared distances between queries and prototypes.
pub fn prototypical_loss(batch: &ProtoBatch) -> Result<ProtoLoss> {
    let n = batch.speakers();
    let d = batch.dim();
    let support = batch.utts_per_speaker() - 1;
    let prototypes: Vec<Vec<f64>> = (0..n).map(|j| batch.prototype(j)).collect();

    let mut scores = vec![0.0; n * n];
    for i in 0..n {
        let q = batch.query(i);
        for (k, c) in prototypes.iter().enumerate() {
            let d2: f64 = q.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            scores[i * n + k] = -d2;
        }
    }
    let scored = cross_entropy_rows(n, &scores)?;

    let mut grad = vec![0.0; batch.data.len()];
    for i in 0..n {
        let q = batch.query(i);
        for (k, c) in prototypes.iter().enumerate() {
            let coeff = scored.dscore[i * n + k];
            if coeff == 0.0 {
                continue;
            }
            for t in 0..d {
                let diff = q[t] - c[t];
                // dS/dq = -2 (q - c); dS/dc = +2 (q - c), spread over support.
                let qi = (i * batch.utts_per_speaker() + batch.utts_per_speaker() - 1) * d + t;
                grad[qi] += coeff * -2.0 * diff;
                let per_support = coeff * 2.0 * diff / support as f64;
                for u in 0..support {
                    grad[(k * batch.utts_per_speaker() + u) * d + t] += per_support;
                }
            }
        }
    }
    Ok(ProtoLoss {
        value: scored.value,
        grad_embeddings: grad,
        grad_scale: 0.0,
        grad_bias: 0.0,
    })
}

/// Softmax over `w * cos(query, prototype) + b` with learnable `w`, `b`.
pub fn angular_prototypical_loss(batch: &ProtoBatch, scale: f64, bias: f64) -> Result<ProtoLoss> {
    if scale <= 0.0 {
        return Err(Error::Domain(format!(
            "angular prototypical scale {scale} must be > 0"
        )));
    }
    if !scale.is_finite() || !bias.is_finite() {
        return Err(Error::NonFinite("angular prototypical scalars".into()));
    }
    let n = batch.speakers();
    let d = batch.dim();
    let support = batch.utts_per_speaker() - 1;
    let prototypes: Vec<Vec<f64>> = (0..n).map(|j| batch.prototype(j)).collect();

    let mut cosines = vec![0.0; n * n];
    for i in 0..n {
        let q = batch.query(i);
        let qn = norm(q);
        if qn <= ZERO_NORM_THRESHOLD {
            return Err(Error::ZeroVector);
        }
        for (k, c) in prototypes.iter().enumerate() {
            let cn = norm(c);
            if cn <= ZERO_NORM_THRESHOLD {
                return Err(Error::ZeroVector);
            }
            cosines[i * n + k] = dot(q, c) / (qn * cn);
        }
    }
    let scores: Vec<f64> = cosines.iter().map(|c| scale * c + bias).collect();
    let scored = cross_entropy_rows(n, &scores)?;

    let mut grad = vec![0.0; batch.data.len()];
    let mut grad_scale = 0.0;
    let mut grad_bias = 0.0;
    for i in 0..n {
        let q = batch.query(i);
        let qn = norm(q);
        for (k, c) in prototypes.iter().enumerate() {
            let coeff = scored.dscore[i * n + k];
            let cos = cosines[i * n + k];
            grad_scale += coeff * cos;
            grad_bias += coeff;
            let cn = norm(c);
            let dcos = coeff * scale;
            for t in 0..d {
                let dq = (c[t] / cn - cos * q[t] / qn) / qn;
                let dc = (q[t] / qn - cos * c[t] / cn) / cn;
                let qi = (i * batch.utts_per_speaker() + batch.utts_per_speaker() - 1) * d + t;
                grad[qi] += dcos * dq;
                let per_support = dcos * dc / support as f64;
                for u in 0..support {
                    grad[(k * batch.utts_per_speaker() + u) * d + t] += per_support;
                }
            }
        }
    }
    Ok(ProtoLoss {
        value: scored.value,
        grad_embeddings: grad,
        grad_scale,
        grad_bias,
    })
}
