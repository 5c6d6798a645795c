//! Training loop and experiment drivers: exponential learning-rate
//! schedule, per-loss dispatch, large-margin fine-tuning, and the sweep /
//! noise-study harnesses in [`studies`].
//!
//! Every run is a pure function of `(config, seed)`: data generation,
//! batch order, initialization and evaluation all derive from split
//! streams of the one seed, so reruns are byte-identical and sweep cells
//! can execute in parallel without coordination.

mod studies;

pub use studies::{
    comparison_rows, parse_sweep_grid, run_ablation, run_noise_study, NoiseMetrics, NoiseRow,
    NoiseTable, SweepCell, SweepRow, SweepTable,
};

use crate::config::{ExperimentConfig, LossSpec};
use crate::data::{
    classification_batches, gen_universe, inject_label_noise, make_trials, proto_batches,
    SpeakerUniverse, Utterance,
};
use crate::error::{Error, Result};
use crate::eval::{asnorm, eer, min_dcf, score_trials, DcfParams, MetricPair};
use crate::losses::{
    angular_prototypical_loss, margin_softmax_loss, plain_softmax_loss, prototypical_loss,
    sphereface2_loss, CosineLoss, ProtoBatch,
};
use crate::model::{
    affine_logits, head_cosines, load_checkpoint, save_checkpoint, step_encoder, step_head,
    Checkpoint, Encoder, EncoderGrads, Head, HeadGrads, SgdConfig,
};
use crate::numeric::{l2_normalize, Matrix};
use crate::par;
use crate::rng::Rng;
use std::collections::HashMap;
use std::path::Path;

/// Exponential interpolation from `lr_start` (epoch 0) to `lr_end`
/// (epoch `total - 1`); constant when there is a single epoch.
pub fn lr_at(epoch: usize, total: usize, lr_start: f64, lr_end: f64) -> Result<f64> {
    if total == 0 || epoch >= total {
        return Err(Error::InvalidConfig(format!(
            "epoch {epoch} outside schedule of {total} epochs"
        )));
    }
    if !(lr_start >= lr_end && lr_end > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "need lr_start >= lr_end > 0, got {lr_start} and {lr_end}"
        )));
    }
    if total == 1 {
        return Ok(lr_start);
    }
    Ok(lr_start * (lr_end / lr_start).powf(epoch as f64 / (total as f64 - 1.0)))
}

/// Large-margin fine-tuning stage settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmftConfig {
    /// Raised margin (must be >= the base run's margin).
    pub margin_override: f64,
    /// Constant learning rate for the stage.
    pub lr: f64,
    pub epochs: usize,
    /// Within-class noise multiplier standing in for longer segments;
    /// 0.5 halves the sampling noise of the training utterances.
    pub noise_reduction: f64,
}

impl Default for LmftConfig {
    fn default() -> Self {
        LmftConfig {
            margin_override: 0.35,
            lr: 1e-4,
            epochs: 5,
            noise_reduction: 0.5,
        }
    }
}

/// Everything one run produces: loss history, final model, metrics.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub name: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub epoch_losses: Vec<f64>,
    pub metrics: Vec<(String, MetricPair)>,
    pub checkpoint: Checkpoint,
}

impl RunRecord {
    /// Line-oriented text report (the checkpoint is saved separately).
    pub fn to_report(&self) -> String {
        let mut out = String::new();
        out.push_str("[run]\n");
        out.push_str(&format!("name = {}\n", self.name));
        out.push_str(&format!("seed = {}\n", self.seed));
        out.push_str(&format!(
            "config_hash = {:#018x}\n",
            self.checkpoint.config_hash
        ));
        out.push_str(&format!("epochs_completed = {}\n", self.checkpoint.epoch));
        out.push_str("[metrics]\n");
        for (set, m) in &self.metrics {
            out.push_str(&format!("{set}.eer = {}\n", m.eer));
            out.push_str(&format!("{set}.min_dcf = {}\n", m.min_dcf));
        }
        out.push_str("[loss_history]\n");
        for (e, loss) in self.epoch_losses.iter().enumerate() {
            out.push_str(&format!("epoch_{e:04} = {loss}\n"));
        }
        out.push_str("[config]\n");
        let mut section = String::new();
        for line in self.config.to_canonical_string().lines() {
            if let Some(name) = line.strip_prefix('[') {
                section = name.trim_end_matches(']').to_string();
            } else {
                out.push_str(&format!("{section}.{line}\n"));
            }
        }
        out
    }

    /// Writes `<stem>.report.txt` and `<stem>.ckpt` under `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
        let report_path = dir.join(format!("{stem}.report.txt"));
        std::fs::write(&report_path, self.to_report())
            .map_err(|e| Error::Io(format!("{}: {e}", report_path.display())))?;
        save_checkpoint(&self.checkpoint, &dir.join(format!("{stem}.ckpt")))
    }
}

/// The `[run]`/`[metrics]` half of a saved report, enough for comparisons.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedReport {
    pub name: String,
    pub seed: u64,
    pub metrics: Vec<(String, MetricPair)>,
}

pub fn parse_report(text: &str, origin: &str) -> Result<ParsedReport> {
    let mut name = None;
    let mut seed = None;
    let mut eers: Vec<(String, f64)> = Vec::new();
    let mut dcfs: HashMap<String, f64> = HashMap::new();
    let mut section = String::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(s) = line.strip_prefix('[') {
            section = s.trim_end_matches(']').to_string();
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        match section.as_str() {
            "run" => match key {
                "name" => name = Some(value.to_string()),
                "seed" => {
                    seed = Some(value.parse().map_err(|_| Error::Parse {
                        path: origin.to_string(),
                        line: lineno + 1,
                        byte_offset: 0,
                        message: format!("bad seed '{value}'"),
                    })?)
                }
                _ => {}
            },
            "metrics" => {
                let parse = |v: &str| -> Result<f64> {
                    v.parse().map_err(|_| Error::Parse {
                        path: origin.to_string(),
                        line: lineno + 1,
                        byte_offset: 0,
                        message: format!("bad metric '{v}'"),
                    })
                };
                if let Some(set) = key.strip_suffix(".eer") {
                    eers.push((set.to_string(), parse(value)?));
                } else if let Some(set) = key.strip_suffix(".min_dcf") {
                    dcfs.insert(set.to_string(), parse(value)?);
                }
            }
            _ => {}
        }
    }
    let name = name.ok_or_else(|| Error::Parse {
        path: origin.to_string(),
        line: 0,
        byte_offset: 0,
        message: "report missing run name".into(),
    })?;
    let metrics = eers
        .into_iter()
        .map(|(set, e)| {
            let d = dcfs.get(&set).copied().unwrap_or(f64::NAN);
            (set, MetricPair { eer: e, min_dcf: d })
        })
        .collect();
    Ok(ParsedReport {
        name,
        seed: seed.unwrap_or(0),
        metrics,
    })
}

struct TrainState {
    encoder: Encoder,
    head: Head,
    encoder_velocity: EncoderGrads,
    head_velocity: HeadGrads,
    epochs_done: u64,
}

fn init_state(config: &ExperimentConfig, seed: u64) -> Result<TrainState> {
    let mut rng = Rng::from_seed(seed).split("init");
    let encoder = Encoder::new(
        config.universe.d_feat,
        &config.model.hidden,
        config.model.embed_dim,
        &mut rng,
    )?;
    let head = match config.loss.spec() {
        LossSpec::Softmax => {
            Head::affine(config.universe.k_train, config.model.embed_dim, &mut rng)
        }
        LossSpec::MarginSoftmax(_) => Head::hypersphere(
            config.universe.k_train,
            config.model.embed_dim,
            0.0,
            &mut rng,
        )?,
        LossSpec::SphereFace2(p) => Head::hypersphere(
            config.universe.k_train,
            config.model.embed_dim,
            p.bias_init,
            &mut rng,
        )?,
        LossSpec::Prototypical => Head::None,
        LossSpec::AngularPrototypical {
            scale_init,
            bias_init,
        } => Head::PairwiseScale {
            scale: scale_init,
            bias: bias_init,
        },
    };
    let encoder_velocity = encoder.zero_grads();
    let head_velocity = head.zero_grads();
    Ok(TrainState {
        encoder,
        head,
        encoder_velocity,
        head_velocity,
        epochs_done: 0,
    })
}

fn gather_rows(utterances: &[Utterance], indices: &[usize], d: usize) -> Matrix {
    let mut m = Matrix::zeros(indices.len(), d);
    for (r, &i) in indices.iter().enumerate() {
        m.row_mut(r).copy_from_slice(&utterances[i].features);
    }
    m
}

/// Per-sample losses for a flat classification batch, evaluated in
/// parallel; the assembled output order is fixed by the batch order.
fn batch_losses(
    spec: &LossSpec,
    scores: &Matrix,
    labels: &[usize],
    head_bias: f64,
) -> Result<Vec<CosineLoss>> {
    let rows: Vec<Result<CosineLoss>> = par::map_indices(scores.rows(), |r| match spec {
        LossSpec::Softmax => plain_softmax_loss(scores.row(r), labels[r]),
        LossSpec::MarginSoftmax(p) => margin_softmax_loss(scores.row(r), labels[r], p),
        LossSpec::SphereFace2(p) => sphereface2_loss(scores.row(r), labels[r], p, head_bias),
        _ => unreachable!("prototypical losses never take the flat batch path"),
    });
    rows.into_iter().collect()
}

/// One classification SGD step; returns the summed per-sample loss.
fn classification_step(
    state: &mut TrainState,
    spec: &LossSpec,
    features: &Matrix,
    labels: &[usize],
    sgd: &SgdConfig,
) -> Result<f64> {
    let batch = features.rows();
    let (embeddings, cache) = state.encoder.forward(features)?;

    let (weights, head_bias) = match &state.head {
        Head::Hypersphere { weights, bias } => (weights, *bias),
        Head::Affine { weights, .. } => (weights, 0.0),
        _ => unreachable!("classification losses use a weight-matrix head"),
    };
    let scores = match spec {
        LossSpec::Softmax => {
            let Head::Affine { weights, bias } = &state.head else {
                unreachable!()
            };
            affine_logits(&embeddings, weights, bias)?
        }
        _ => head_cosines(&embeddings, weights)?,
    };

    let losses = batch_losses(spec, &scores, labels, head_bias)?;
    let total: f64 = losses.iter().map(|l| l.value).sum();

    // Mean-over-batch gradients.
    let k = scores.cols();
    let d = embeddings.cols();
    let scale = 1.0 / batch as f64;
    let mut grad_scores = Matrix::zeros(batch, k);
    for (r, l) in losses.iter().enumerate() {
        for (dst, g) in grad_scores.row_mut(r).iter_mut().zip(&l.grad) {
            *dst = g * scale;
        }
    }

    // dL/dE = grad_scores W; dL/dW_k = sum_r grad_scores[r][k] E_r.
    let mut grad_embeddings = Matrix::zeros(batch, d);
    let mut head_grads = state.head.zero_grads();
    let gw = head_grads
        .weights
        .as_mut()
        .expect("classification heads carry weights");
    for r in 0..batch {
        let gs = grad_scores.row(r);
        let e = embeddings.row(r);
        for (kk, &g) in gs.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let wrow = weights.row(kk);
            let ge = grad_embeddings.row_mut(r);
            for j in 0..d {
                ge[j] += g * wrow[j];
            }
            let gwrow = gw.row_mut(kk);
            for j in 0..d {
                gwrow[j] += g * e[j];
            }
        }
    }
    match spec {
        LossSpec::Softmax => {
            // Bias gradient per class: column sums of grad_scores.
            for r in 0..batch {
                for (b, g) in head_grads.bias.iter_mut().zip(grad_scores.row(r)) {
                    *b += g;
                }
            }
        }
        LossSpec::SphereFace2(_) => {
            head_grads.bias[0] = losses.iter().map(|l| l.grad_bias).sum::<f64>() * scale;
        }
        _ => {}
    }

    let encoder_grads = state.encoder.backward(&cache, &grad_embeddings);
    step_encoder(
        &mut state.encoder,
        &encoder_grads,
        &mut state.encoder_velocity,
        sgd,
    )?;
    step_head(&mut state.head, &head_grads, &mut state.head_velocity, sgd)?;
    Ok(total)
}

/// One prototypical SGD step; returns the batch loss (mean over queries).
fn proto_step(
    state: &mut TrainState,
    spec: &LossSpec,
    features: &Matrix,
    speakers: usize,
    utts: usize,
    sgd: &SgdConfig,
) -> Result<f64> {
    let (embeddings, cache) = state.encoder.forward(features)?;
    let d = embeddings.cols();
    let batch = ProtoBatch::new(speakers, utts, d, embeddings.data().to_vec())?;
    let out = match (spec, &state.head) {
        (LossSpec::Prototypical, _) => prototypical_loss(&batch)?,
        (LossSpec::AngularPrototypical { .. }, Head::PairwiseScale { scale, bias }) => {
            angular_prototypical_loss(&batch, *scale, *bias)?
        }
        _ => unreachable!("proto step only runs for prototypical losses"),
    };
    let grad_embeddings = Matrix::from_vec(speakers * utts, d, out.grad_embeddings)?;
    let encoder_grads = state.encoder.backward(&cache, &grad_embeddings);
    step_encoder(
        &mut state.encoder,
        &encoder_grads,
        &mut state.encoder_velocity,
        sgd,
    )?;
    if matches!(state.head, Head::PairwiseScale { .. }) {
        let head_grads = HeadGrads {
            weights: None,
            bias: vec![out.grad_scale, out.grad_bias],
        };
        step_head(&mut state.head, &head_grads, &mut state.head_velocity, sgd)?;
    }
    Ok(out.value)
}

fn diverged(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::NonFinite(m) => Error::Diverged {
            epoch,
            step,
            message: m,
        },
        Error::ZeroVector => Error::Diverged {
            epoch,
            step,
            message: "embedding collapsed to the zero vector".into(),
        },
        other => other,
    }
}

/// Runs `epochs` epochs on `train_utts`/`labels`, mutating `state`.
/// `schedule_total` is the length of the learning-rate schedule, which may
/// exceed the epochs run here (an interrupted run keeps the full horizon).
/// Epoch streams are split from `(seed, stage, epoch index)`, so a resumed
/// run replays identically.
#[allow(clippy::too_many_arguments)]
fn run_stage(
    config: &ExperimentConfig,
    seed: u64,
    stage: &str,
    epochs: usize,
    schedule_total: usize,
    train_utts: &[Utterance],
    labels: &[usize],
    state: &mut TrainState,
) -> Result<Vec<f64>> {
    let spec = config.loss.spec();
    let root = Rng::from_seed(seed).split(stage);
    let d_feat = config.universe.d_feat;
    let mut history = Vec::with_capacity(epochs);

    // Speaker -> utterance indices, for prototypical batch geometry.
    let speaker_utts: Vec<Vec<usize>> = if config.loss.kind.is_prototypical() {
        let mut by_label: HashMap<usize, Vec<usize>> = HashMap::new();
        for (i, &l) in labels.iter().enumerate() {
            by_label.entry(l).or_default().push(i);
        }
        let mut keys: Vec<usize> = by_label.keys().copied().collect();
        keys.sort_unstable();
        keys.into_iter().map(|k| by_label[&k].clone()).collect()
    } else {
        Vec::new()
    };

    for _ in 0..epochs {
        let epoch = state.epochs_done as usize;
        let lr = lr_at(
            epoch,
            schedule_total,
            config.training.lr_start,
            config.training.lr_end,
        )?;
        let sgd = SgdConfig {
            lr,
            momentum: config.training.momentum,
            weight_decay: config.training.weight_decay,
        };
        let mut epoch_rng = root.split_index("epoch", epoch as u64);
        let mut loss_sum = 0.0;
        let mut denom = 0usize;
        if config.loss.kind.is_prototypical() {
            let batches = proto_batches(
                &speaker_utts,
                config.training.proto_speakers,
                config.training.proto_utts,
                &mut epoch_rng,
            )?;
            for (step, batch) in batches.iter().enumerate() {
                let flat: Vec<usize> = batch.iter().flatten().copied().collect();
                let features = gather_rows(train_utts, &flat, d_feat);
                let value = proto_step(
                    state,
                    &spec,
                    &features,
                    config.training.proto_speakers,
                    config.training.proto_utts,
                    &sgd,
                )
                .map_err(|e| diverged(e, epoch, step))?;
                loss_sum += value;
                denom += 1;
            }
        } else {
            let batches = classification_batches(
                train_utts.len(),
                config.training.batch_size,
                &mut epoch_rng,
            );
            for (step, batch) in batches.iter().enumerate() {
                let features = gather_rows(train_utts, batch, d_feat);
                let batch_labels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
                let total = classification_step(state, &spec, &features, &batch_labels, &sgd)
                    .map_err(|e| diverged(e, epoch, step))?;
                loss_sum += total;
                denom += batch.len();
            }
        }
        if denom == 0 {
            return Err(Error::Infeasible(format!(
                "no full batches at epoch {epoch}; shrink batch geometry"
            )));
        }
        let mean = loss_sum / denom as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged {
                epoch,
                step: 0,
                message: "non-finite epoch loss".into(),
            });
        }
        history.push(mean);
        state.epochs_done += 1;
    }
    Ok(history)
}

/// Embeds utterances through the encoder, returning an id -> vector map
/// plus ordered ids.
fn embed_utterances(
    encoder: &Encoder,
    utterances: &[Utterance],
    d_feat: usize,
) -> Result<HashMap<String, Vec<f64>>> {
    let all: Vec<usize> = (0..utterances.len()).collect();
    let features = gather_rows(utterances, &all, d_feat);
    let (embeddings, _) = encoder.forward(&features)?;
    let mut map = HashMap::with_capacity(utterances.len());
    for (i, u) in utterances.iter().enumerate() {
        map.insert(u.utt_id.clone(), embeddings.row(i).to_vec());
    }
    Ok(map)
}

/// Unit embeddings for an utterance list, in input order.
pub fn extract_embeddings(
    encoder: &Encoder,
    utterances: &[Utterance],
) -> Result<Vec<(String, Vec<f64>)>> {
    if let Some(u) = utterances.first() {
        if u.features.len() != encoder.input_dim() {
            return Err(Error::Domain(format!(
                "utterance dimension {} does not match encoder input {}",
                u.features.len(),
                encoder.input_dim()
            )));
        }
    }
    let all: Vec<usize> = (0..utterances.len()).collect();
    let features = gather_rows(utterances, &all, encoder.input_dim());
    let (embeddings, _) = encoder.forward(&features)?;
    Ok(utterances
        .iter()
        .enumerate()
        .map(|(i, u)| (u.utt_id.clone(), embeddings.row(i).to_vec()))
        .collect())
}

/// Scores the unseen-speaker trial set; optionally applies adaptive
/// normalization with per-train-speaker centroid cohort embeddings.
pub fn evaluate_encoder(
    config: &ExperimentConfig,
    seed: u64,
    encoder: &Encoder,
    universe: &SpeakerUniverse,
) -> Result<Vec<(String, MetricPair)>> {
    let mut trial_rng = Rng::from_seed(seed).split("trials");
    let trials = make_trials(
        &universe.unseen_utterances,
        config.evaluation.n_target,
        config.evaluation.n_nontarget,
        &mut trial_rng,
    )?;
    let embeddings =
        embed_utterances(encoder, &universe.unseen_utterances, config.universe.d_feat)?;
    let mut scored = score_trials(&embeddings, &trials)?;

    if config.evaluation.asnorm {
        let train_embeddings =
            embed_utterances(encoder, &universe.train_utterances, config.universe.d_feat)?;
        let mut cohort = Vec::with_capacity(universe.train_speakers.len());
        for s in &universe.train_speakers {
            let mut centroid = vec![0.0; config.model.embed_dim];
            let mut count = 0usize;
            for u in &universe.train_utterances {
                if u.speaker_id == s.speaker_id {
                    for (c, e) in centroid.iter_mut().zip(&train_embeddings[&u.utt_id]) {
                        *c += e;
                    }
                    count += 1;
                }
            }
            for c in &mut centroid {
                *c /= count as f64;
            }
            cohort.push(l2_normalize(&centroid)?.into_vec());
        }
        let top_n = ((cohort.len() as f64 * config.evaluation.cohort_top_n_frac).round() as usize)
            .clamp(2, cohort.len());
        scored = asnorm(&scored, &trials, &embeddings, &cohort, top_n)?;
    }

    let (eer_value, _) = eer(&scored)?;
    let dcf = DcfParams::new(
        config.evaluation.p_target,
        config.evaluation.c_miss,
        config.evaluation.c_fa,
    )?;
    let (dcf_value, _) = min_dcf(&scored, &dcf)?;
    Ok(vec![(
        "unseen".to_string(),
        MetricPair {
            eer: eer_value,
            min_dcf: dcf_value,
        },
    )])
}

fn finish_record(
    config: &ExperimentConfig,
    seed: u64,
    name: &str,
    state: TrainState,
    epoch_losses: Vec<f64>,
    universe: &SpeakerUniverse,
) -> Result<RunRecord> {
    let metrics = evaluate_encoder(config, seed, &state.encoder, universe)?;
    let checkpoint = Checkpoint {
        config_hash: config.config_hash(),
        epoch: state.epochs_done,
        rng_seed: seed,
        rng_stream: 0,
        rng_word_pos: 0,
        encoder: state.encoder,
        head: state.head,
        encoder_velocity: state.encoder_velocity,
        head_velocity: state.head_velocity,
    };
    Ok(RunRecord {
        name: name.to_string(),
        seed,
        config: config.clone(),
        epoch_losses,
        metrics,
        checkpoint,
    })
}

/// Trains from scratch on a fresh universe derived from `seed`.
pub fn train(config: &ExperimentConfig, seed: u64, name: &str) -> Result<RunRecord> {
    train_partial(config, seed, name, config.training.epochs)
}

/// Runs only the first `epochs` epochs of the config's schedule, as if
/// training were interrupted; [`resume`] finishes the run bit-identically.
pub fn train_partial(
    config: &ExperimentConfig,
    seed: u64,
    name: &str,
    epochs: usize,
) -> Result<RunRecord> {
    config.validate()?;
    if epochs > config.training.epochs {
        return Err(Error::InvalidConfig(format!(
            "cannot run {epochs} epochs of a {}-epoch schedule",
            config.training.epochs
        )));
    }
    let universe = gen_universe(&config.universe, seed)?;
    let labels = universe.train_labels();
    let mut state = init_state(config, seed)?;
    let history = run_stage(
        config,
        seed,
        "train",
        epochs,
        config.training.epochs,
        &universe.train_utterances,
        &labels,
        &mut state,
    )?;
    finish_record(config, seed, name, state, history, &universe)
}

/// Like [`train`] but with a fraction of training labels reassigned before
/// the run. Evaluation trials stay clean (unseen speakers only).
pub fn train_noisy(
    config: &ExperimentConfig,
    seed: u64,
    name: &str,
    noise_proportion: f64,
) -> Result<RunRecord> {
    config.validate()?;
    let universe = gen_universe(&config.universe, seed)?;
    let labels = universe.train_labels();
    let mut noise_rng = Rng::from_seed(seed).split("label-noise");
    let (labels, _mask) = inject_label_noise(
        &labels,
        noise_proportion,
        config.universe.k_train,
        &mut noise_rng,
    )?;
    let mut state = init_state(config, seed)?;
    let history = run_stage(
        config,
        seed,
        "train",
        config.training.epochs,
        config.training.epochs,
        &universe.train_utterances,
        &labels,
        &mut state,
    )?;
    finish_record(config, seed, name, state, history, &universe)
}

/// Continues an interrupted run up to `config.training.epochs` total
/// epochs; the trajectory is bit-identical to an uninterrupted run.
pub fn resume(config: &ExperimentConfig, checkpoint: &Checkpoint, name: &str) -> Result<RunRecord> {
    config.validate()?;
    if checkpoint.config_hash != config.config_hash() {
        return Err(Error::InvalidConfig(format!(
            "checkpoint config hash {:#x} does not match config {:#x}",
            checkpoint.config_hash,
            config.config_hash()
        )));
    }
    let done = checkpoint.epoch as usize;
    if done > config.training.epochs {
        return Err(Error::InvalidConfig(format!(
            "checkpoint already has {done} epochs, config asks for {}",
            config.training.epochs
        )));
    }
    let seed = checkpoint.rng_seed;
    let universe = gen_universe(&config.universe, seed)?;
    let labels = universe.train_labels();
    let mut state = TrainState {
        encoder: checkpoint.encoder.clone(),
        head: checkpoint.head.clone(),
        encoder_velocity: checkpoint.encoder_velocity.clone(),
        head_velocity: checkpoint.head_velocity.clone(),
        epochs_done: checkpoint.epoch,
    };
    let history = run_stage(
        config,
        seed,
        "train",
        config.training.epochs - done,
        config.training.epochs,
        &universe.train_utterances,
        &labels,
        &mut state,
    )?;
    finish_record(config, seed, name, state, history, &universe)
}

/// Large-margin fine-tuning: continues a margin-loss checkpoint with the
/// margin raised, a small constant learning rate, and training utterances
/// re-drawn at reduced within-class noise. Evaluation data and trials are
/// identical to the base run's, so metrics are directly comparable.
pub fn lmft(
    checkpoint: &Checkpoint,
    config: &ExperimentConfig,
    stage: &LmftConfig,
    name: &str,
) -> Result<RunRecord> {
    config.validate()?;
    if !config.loss.kind.has_additive_margin() {
        return Err(Error::InvalidConfig(format!(
            "loss '{}' has no additive margin to raise",
            config.loss.kind.as_str()
        )));
    }
    if stage.margin_override < config.loss.m {
        return Err(Error::InvalidConfig(format!(
            "margin_override {} below base margin {}",
            stage.margin_override, config.loss.m
        )));
    }
    if !(0.0 < stage.noise_reduction && stage.noise_reduction <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "noise_reduction {} outside (0, 1]",
            stage.noise_reduction
        )));
    }
    if stage.epochs == 0 {
        return Err(Error::InvalidConfig("lmft epochs must be >= 1".into()));
    }
    if checkpoint.config_hash != config.config_hash() {
        return Err(Error::InvalidConfig(
            "checkpoint was not produced by this config".into(),
        ));
    }

    let seed = checkpoint.rng_seed;
    let mut ft_config = config.clone();
    ft_config.loss.m = stage.margin_override;
    ft_config.training.lr_start = stage.lr;
    ft_config.training.lr_end = stage.lr;
    ft_config.training.epochs = stage.epochs;

    // Same prototypes and noise draws, scaled closer to the prototypes:
    // the stand-in for longer (lower-variance) segments.
    let universe = gen_universe(&config.universe, seed)?;
    let mut ft_universe_config = config.universe;
    ft_universe_config.kappa = config.universe.kappa / stage.noise_reduction;
    let ft_universe = gen_universe(&ft_universe_config, seed)?;

    let labels = universe.train_labels();
    let mut state = TrainState {
        encoder: checkpoint.encoder.clone(),
        head: checkpoint.head.clone(),
        encoder_velocity: checkpoint.encoder_velocity.clone(),
        head_velocity: checkpoint.head_velocity.clone(),
        epochs_done: 0,
    };
    let history = run_stage(
        &ft_config,
        seed,
        "lmft",
        stage.epochs,
        stage.epochs,
        &ft_universe.train_utterances,
        &labels,
        &mut state,
    )?;
    // Evaluate against the ORIGINAL universe so metrics are comparable.
    let metrics = evaluate_encoder(&ft_config, seed, &state.encoder, &universe)?;
    let ckpt = Checkpoint {
        config_hash: ft_config.config_hash(),
        epoch: checkpoint.epoch + state.epochs_done,
        rng_seed: seed,
        rng_stream: 0,
        rng_word_pos: 0,
        encoder: state.encoder,
        head: state.head,
        encoder_velocity: state.encoder_velocity,
        head_velocity: state.head_velocity,
    };
    Ok(RunRecord {
        name: name.to_string(),
        seed,
        config: ft_config,
        epoch_losses: history,
        metrics,
        checkpoint: ckpt,
    })
}

/// Convenience for the CLI: loads a checkpoint and fine-tunes it.
pub fn lmft_from_path(
    checkpoint_path: &Path,
    config: &ExperimentConfig,
    stage: &LmftConfig,
    name: &str,
) -> Result<RunRecord> {
    let checkpoint = load_checkpoint(checkpoint_path)?;
    lmft(&checkpoint, config, stage, name)
}
