//! Synthetic open-set speaker universe, batch samplers, label-noise
//! injection and trial-list construction.
//!
//! Speakers are unit prototype vectors; an utterance is its speaker's
//! prototype plus isotropic Gaussian noise of standard deviation `1/kappa`,
//! re-normalized onto the sphere. Train and unseen speaker-id sets are
//! disjoint, so evaluation trials are always open-set.

mod io;

pub use io::{
    read_embeddings, read_scores, read_trials, read_utterances, write_embeddings, write_scores,
    write_trials, write_utterances,
};

use crate::error::{Error, Result};
use crate::numeric::l2_normalize;
use crate::rng::Rng;
use std::collections::HashMap;

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub utt_id: String,
    pub speaker_id: String,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniverseConfig {
    pub k_train: usize,
    pub k_unseen: usize,
    pub d_feat: usize,
    /// Within-speaker concentration; noise std is `1/kappa`.
    pub kappa: f64,
    pub utts_per_speaker: usize,
}

impl UniverseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_train < 2 {
            return Err(Error::InvalidConfig(format!(
                "k_train={} must be >= 2",
                self.k_train
            )));
        }
        if self.d_feat < 4 {
            return Err(Error::InvalidConfig(format!(
                "d_feat={} must be >= 4",
                self.d_feat
            )));
        }
        if !self.kappa.is_finite() || self.kappa <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "kappa={} must be > 0",
                self.kappa
            )));
        }
        if self.utts_per_speaker == 0 {
            return Err(Error::InvalidConfig("utts_per_speaker must be >= 1".into()));
        }
        Ok(())
    }
}

/// One speaker's prototype direction and id.
#[derive(Debug, Clone, PartialEq)]
pub struct Speaker {
    pub speaker_id: String,
    pub prototype: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerUniverse {
    pub config: UniverseConfig,
    pub train_speakers: Vec<Speaker>,
    pub unseen_speakers: Vec<Speaker>,
    pub train_utterances: Vec<Utterance>,
    pub unseen_utterances: Vec<Utterance>,
}

impl SpeakerUniverse {
    /// Class index of each training utterance (position of its speaker in
    /// `train_speakers`).
    pub fn train_labels(&self) -> Vec<usize> {
        let index: HashMap<&str, usize> = self
            .train_speakers
            .iter()
            .enumerate()
            .map(|(i, s)| (s.speaker_id.as_str(), i))
            .collect();
        self.train_utterances
            .iter()
            .map(|u| index[u.speaker_id.as_str()])
            .collect()
    }
}

fn sample_speaker(rng: &mut Rng, d: usize) -> Result<Vec<f64>> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        match l2_normalize(&v) {
            Ok(u) => return Ok(u.into_vec()),
            Err(Error::ZeroVector) => continue,
            Err(e) => return Err(e),
        }
    }
}

/// Deterministic universe: prototypes uniform on the sphere, utterances
/// normalized Gaussian perturbations around them. Each speaker draws from
/// its own split stream, so the layout is stable under any scheduling.
pub fn gen_universe(config: &UniverseConfig, seed: u64) -> Result<SpeakerUniverse> {
    config.validate()?;
    let root = Rng::from_seed(seed).split("universe");
    let sigma = 1.0 / config.kappa;

    let build =
        |count: usize, offset: usize, prefix: &str| -> Result<(Vec<Speaker>, Vec<Utterance>)> {
            let mut speakers = Vec::with_capacity(count);
            let mut utterances = Vec::with_capacity(count * config.utts_per_speaker);
            for i in 0..count {
                let mut rng = root.split_index("speaker", (offset + i) as u64);
                let speaker_id = format!("{prefix}{i:05}");
                let prototype = sample_speaker(&mut rng, config.d_feat)?;
                for u in 0..config.utts_per_speaker {
                    let noisy: Vec<f64> =
                        prototype.iter().map(|p| p + sigma * rng.normal()).collect();
                    let features = l2_normalize(&noisy)?.into_vec();
                    utterances.push(Utterance {
                        utt_id: format!("{speaker_id}_u{u:04}"),
                        speaker_id: speaker_id.clone(),
                        features,
                    });
                }
                speakers.push(Speaker {
                    speaker_id,
                    prototype,
                });
            }
            Ok((speakers, utterances))
        };

    let (train_speakers, train_utterances) = build(config.k_train, 0, "train")?;
    let (unseen_speakers, unseen_utterances) = build(config.k_unseen, config.k_train, "unseen")?;
    Ok(SpeakerUniverse {
        config: *config,
        train_speakers,
        unseen_speakers,
        train_utterances,
        unseen_utterances,
    })
}

/// Reassigns exactly `round(p * n)` labels, chosen uniformly without
/// replacement, each to a uniformly random *different* class. Returns the
/// corrupted labels and the corruption mask.
pub fn inject_label_noise(
    labels: &[usize],
    proportion: f64,
    k_train: usize,
    rng: &mut Rng,
) -> Result<(Vec<usize>, Vec<bool>)> {
    if !(0.0..=1.0).contains(&proportion) {
        return Err(Error::InvalidConfig(format!(
            "noise proportion {proportion} outside [0, 1]"
        )));
    }
    if proportion > 0.0 && k_train < 2 {
        return Err(Error::InvalidConfig(
            "cannot corrupt labels with fewer than 2 classes".into(),
        ));
    }
    let n_corrupt = (proportion * labels.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..labels.len()).collect();
    rng.shuffle(&mut order);
    let mut corrupted = labels.to_vec();
    let mut mask = vec![false; labels.len()];
    for &idx in order.iter().take(n_corrupt) {
        let old = labels[idx];
        let draw = rng.index(k_train - 1);
        corrupted[idx] = if draw >= old { draw + 1 } else { draw };
        mask[idx] = true;
    }
    Ok((corrupted, mask))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub enroll: String,
    pub test: String,
    pub target: bool,
}

pub type TrialSet = Vec<Trial>;

/// Builds target trials from distinct same-speaker utterance pairs and
/// non-target trials from cross-speaker pairs. Pairs are drawn without
/// replacement while unique ones remain, then with replacement.
pub fn make_trials(
    utterances: &[Utterance],
    n_target: usize,
    n_nontarget: usize,
    rng: &mut Rng,
) -> Result<TrialSet> {
    if n_target == 0 || n_nontarget == 0 {
        return Err(Error::InvalidConfig(
            "n_target and n_nontarget must be >= 1".into(),
        ));
    }
    let mut by_speaker: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, u) in utterances.iter().enumerate() {
        by_speaker.entry(u.speaker_id.as_str()).or_default().push(i);
    }
    // Deterministic speaker order regardless of hash-map iteration.
    let mut speakers: Vec<(&str, Vec<usize>)> = by_speaker.into_iter().collect();
    speakers.sort_unstable_by(|a, b| a.0.cmp(b.0));

    let mut target_pairs: Vec<(usize, usize)> = Vec::new();
    for (_, utts) in &speakers {
        for a in 0..utts.len() {
            for b in (a + 1)..utts.len() {
                target_pairs.push((utts[a], utts[b]));
            }
        }
    }
    if target_pairs.is_empty() {
        return Err(Error::Infeasible(
            "no speaker has two utterances; cannot build target trials".into(),
        ));
    }
    if speakers.len() < 2 {
        return Err(Error::Infeasible(
            "need at least two speakers for non-target trials".into(),
        ));
    }

    rng.shuffle(&mut target_pairs);
    let mut trials = Vec::with_capacity(n_target + n_nontarget);
    for k in 0..n_target {
        let (a, b) = if k < target_pairs.len() {
            target_pairs[k]
        } else {
            // Past exhaustion: redraw uniformly with replacement.
            target_pairs[rng.index(target_pairs.len())]
        };
        trials.push(Trial {
            enroll: utterances[a].utt_id.clone(),
            test: utterances[b].utt_id.clone(),
            target: true,
        });
    }

    let mut seen: std::collections::HashSet<(usize, usize)> = std::collections::HashSet::new();
    let mut produced = 0;
    let mut attempts = 0usize;
    let attempt_cap = 64 * n_nontarget + 1024;
    while produced < n_nontarget {
        let si = rng.index(speakers.len());
        let mut sj = rng.index(speakers.len() - 1);
        if sj >= si {
            sj += 1;
        }
        let a = speakers[si].1[rng.index(speakers[si].1.len())];
        let b = speakers[sj].1[rng.index(speakers[sj].1.len())];
        attempts += 1;
        // Without replacement while attempts last, with replacement after.
        if attempts <= attempt_cap && !seen.insert((a, b)) {
            continue;
        }
        trials.push(Trial {
            enroll: utterances[a].utt_id.clone(),
            test: utterances[b].utt_id.clone(),
            target: false,
        });
        produced += 1;
    }
    Ok(trials)
}

/// Index batches for classification training: one seeded permutation per
/// epoch, chunked to `batch_size`, ragged tail dropped.
pub fn classification_batches(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    assert!(batch_size > 0, "batch_size must be positive");
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order.chunks_exact(batch_size).map(|c| c.to_vec()).collect()
}

/// Batches for prototypical training: groups of `speakers_per_batch`
/// distinct speakers, each contributing `utts_per_speaker` distinct
/// utterance indices.
pub fn proto_batches(
    speaker_utts: &[Vec<usize>],
    speakers_per_batch: usize,
    utts_per_speaker: usize,
    rng: &mut Rng,
) -> Result<Vec<Vec<Vec<usize>>>> {
    if speakers_per_batch < 2 || utts_per_speaker < 2 {
        return Err(Error::InvalidConfig(
            "prototypical batches need N >= 2 and M >= 2".into(),
        ));
    }
    let eligible: Vec<usize> = (0..speaker_utts.len())
        .filter(|&s| speaker_utts[s].len() >= utts_per_speaker)
        .collect();
    if eligible.len() < speakers_per_batch {
        return Err(Error::Infeasible(format!(
            "only {} speakers have >= {} utterances; need {}",
            eligible.len(),
            utts_per_speaker,
            speakers_per_batch
        )));
    }
    let mut order = eligible;
    rng.shuffle(&mut order);
    let mut batches = Vec::new();
    for group in order.chunks_exact(speakers_per_batch) {
        let mut batch = Vec::with_capacity(speakers_per_batch);
        for &s in group {
            let mut utts = speaker_utts[s].clone();
            rng.shuffle(&mut utts);
            utts.truncate(utts_per_speaker);
            batch.push(utts);
        }
        batches.push(batch);
    }
    Ok(batches)
}
