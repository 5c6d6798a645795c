//! Sectioned `key = value` experiment configuration.
//!
//! Every key has a default; unknown sections or keys are hard errors so
//! typos never silently fall back to defaults. The canonical rendering is
//! stable and is what gets hashed into checkpoints and echoed into run
//! records.

use crate::data::UniverseConfig;
use crate::error::{Error, Result};
use crate::losses::{MarginSoftmaxParams, MarginType, SphereFace2Params};
use crate::rng::fnv1a;

/// Which training objective drives a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Softmax,
    ASoftmax,
    AmSoftmax,
    AamSoftmax,
    Prototypical,
    AngularPrototypical,
    SphereFace2,
}

impl LossKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LossKind::Softmax => "softmax",
            LossKind::ASoftmax => "a-softmax",
            LossKind::AmSoftmax => "am-softmax",
            LossKind::AamSoftmax => "aam-softmax",
            LossKind::Prototypical => "prototypical",
            LossKind::AngularPrototypical => "angular-prototypical",
            LossKind::SphereFace2 => "sphereface2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(LossKind::Softmax),
            "a-softmax" => Ok(LossKind::ASoftmax),
            "am-softmax" => Ok(LossKind::AmSoftmax),
            "aam-softmax" => Ok(LossKind::AamSoftmax),
            "prototypical" => Ok(LossKind::Prototypical),
            "angular-prototypical" => Ok(LossKind::AngularPrototypical),
            "sphereface2" => Ok(LossKind::SphereFace2),
            other => Err(Error::InvalidConfig(format!("unknown loss kind '{other}'"))),
        }
    }

    /// Whether a batch is N speakers x M utterances rather than flat.
    pub fn is_prototypical(&self) -> bool {
        matches!(self, LossKind::Prototypical | LossKind::AngularPrototypical)
    }

    /// Losses whose additive margin can be raised for fine-tuning.
    pub fn has_additive_margin(&self) -> bool {
        matches!(
            self,
            LossKind::AmSoftmax | LossKind::AamSoftmax | LossKind::SphereFace2
        )
    }
}

/// Fully-resolved loss parameters, built from the `[loss]` section.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossSpec {
    Softmax,
    MarginSoftmax(MarginSoftmaxParams),
    Prototypical,
    AngularPrototypical { scale_init: f64, bias_init: f64 },
    SphereFace2(SphereFace2Params),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Balance weight for the binary-classification loss.
    pub lambda: f64,
    /// Similarity-adjustment exponent.
    pub t: f64,
    /// Cosine scale for margin and binary losses.
    pub s: f64,
    /// Additive margin (the binary loss's `m`, or m2/m3 for AAM/AM).
    pub m: f64,
    pub margin_type: MarginType,
    pub bias_init: f64,
    /// Angular multiplier for the multiplicative-margin softmax.
    pub angular_margin: f64,
    pub proto_scale_init: f64,
    pub proto_bias_init: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::SphereFace2,
            lambda: 0.7,
            t: 3.0,
            s: 32.0,
            m: 0.2,
            margin_type: MarginType::C,
            bias_init: 0.0,
            angular_margin: 4.0,
            proto_scale_init: 10.0,
            proto_bias_init: -5.0,
        }
    }
}

impl LossConfig {
    pub fn spec(&self) -> LossSpec {
        match self.kind {
            LossKind::Softmax => LossSpec::Softmax,
            LossKind::ASoftmax => {
                LossSpec::MarginSoftmax(MarginSoftmaxParams::angular(self.angular_margin, self.s))
            }
            LossKind::AmSoftmax => {
                LossSpec::MarginSoftmax(MarginSoftmaxParams::additive_cosine(self.m, self.s))
            }
            LossKind::AamSoftmax => {
                LossSpec::MarginSoftmax(MarginSoftmaxParams::additive_angular(self.m, self.s))
            }
            LossKind::Prototypical => LossSpec::Prototypical,
            LossKind::AngularPrototypical => LossSpec::AngularPrototypical {
                scale_init: self.proto_scale_init,
                bias_init: self.proto_bias_init,
            },
            LossKind::SphereFace2 => LossSpec::SphereFace2(SphereFace2Params {
                lambda: self.lambda,
                t: self.t,
                s: self.s,
                m: self.m,
                bias_init: self.bias_init,
                margin_type: self.margin_type,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![64],
            embed_dim: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// N and M for prototypical batch geometry.
    pub proto_speakers: usize,
    pub proto_utts: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: Option<u64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 40,
            batch_size: 64,
            proto_speakers: 8,
            proto_utts: 3,
            lr_start: 0.05,
            lr_end: 1e-3,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationConfig {
    pub n_target: usize,
    pub n_nontarget: usize,
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
    pub asnorm: bool,
    /// Top-N as a fraction of the cohort size.
    pub cohort_top_n_frac: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            n_target: 3000,
            n_nontarget: 3000,
            p_target: 0.01,
            c_miss: 1.0,
            c_fa: 1.0,
            asnorm: false,
            cohort_top_n_frac: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub universe: UniverseConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub training: TrainingConfig,
    pub evaluation: EvaluationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            universe: UniverseConfig {
                k_train: 200,
                k_unseen: 50,
                d_feat: 32,
                kappa: 6.0,
                utts_per_speaker: 30,
            },
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            training: TrainingConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.universe.validate()?;
        if self.model.embed_dim == 0 || self.model.hidden.contains(&0) {
            return Err(Error::InvalidConfig("model sizes must be positive".into()));
        }
        if self.training.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.training.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.training.lr_start >= self.training.lr_end && self.training.lr_end > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "need lr_start >= lr_end > 0, got {} and {}",
                self.training.lr_start, self.training.lr_end
            )));
        }
        if !(0.0..1.0).contains(&self.training.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum={} outside [0, 1)",
                self.training.momentum
            )));
        }
        if self.training.weight_decay < 0.0 {
            return Err(Error::InvalidConfig("weight_decay must be >= 0".into()));
        }
        if self.loss.kind.is_prototypical()
            && (self.training.proto_speakers < 2 || self.training.proto_utts < 2)
        {
            return Err(Error::InvalidConfig(
                "prototypical training needs proto_speakers >= 2 and proto_utts >= 2".into(),
            ));
        }
        if self.evaluation.n_target == 0 || self.evaluation.n_nontarget == 0 {
            return Err(Error::InvalidConfig(
                "n_target and n_nontarget must be >= 1".into(),
            ));
        }
        crate::eval::DcfParams::new(
            self.evaluation.p_target,
            self.evaluation.c_miss,
            self.evaluation.c_fa,
        )?;
        if !(0.0 < self.evaluation.cohort_top_n_frac && self.evaluation.cohort_top_n_frac <= 1.0) {
            return Err(Error::InvalidConfig(
                "cohort_top_n_frac must be in (0, 1]".into(),
            ));
        }
        match self.loss.spec() {
            LossSpec::MarginSoftmax(p) => p.validate()?,
            LossSpec::SphereFace2(p) => p.validate()?,
            LossSpec::AngularPrototypical { scale_init, .. } if scale_init <= 0.0 => {
                return Err(Error::InvalidConfig("proto_scale_init must be > 0".into()));
            }
            _ => {}
        }
        Ok(())
    }

    /// Canonical rendering: fixed section and key order, shortest
    /// round-trip float formatting. Identical configs hash identically.
    pub fn to_canonical_string(&self) -> String {
        let mut out = String::new();
        let u = &self.universe;
        out.push_str("[universe]\n");
        out.push_str(&format!("k_train = {}\n", u.k_train));
        out.push_str(&format!("k_unseen = {}\n", u.k_unseen));
        out.push_str(&format!("d_feat = {}\n", u.d_feat));
        out.push_str(&format!("kappa = {}\n", u.kappa));
        out.push_str(&format!("utts_per_speaker = {}\n", u.utts_per_speaker));

        out.push_str("[model]\n");
        let hidden: Vec<String> = self.model.hidden.iter().map(|h| h.to_string()).collect();
        out.push_str(&format!("hidden = {}\n", hidden.join(",")));
        out.push_str(&format!("embed_dim = {}\n", self.model.embed_dim));

        let l = &self.loss;
        out.push_str("[loss]\n");
        out.push_str(&format!("kind = {}\n", l.kind.as_str()));
        out.push_str(&format!("lambda = {}\n", l.lambda));
        out.push_str(&format!("t = {}\n", l.t));
        out.push_str(&format!("s = {}\n", l.s));
        out.push_str(&format!("m = {}\n", l.m));
        out.push_str(&format!("margin_type = {}\n", l.margin_type.as_str()));
        out.push_str(&format!("bias_init = {}\n", l.bias_init));
        out.push_str(&format!("angular_margin = {}\n", l.angular_margin));
        out.push_str(&format!("proto_scale_init = {}\n", l.proto_scale_init));
        out.push_str(&format!("proto_bias_init = {}\n", l.proto_bias_init));

        let t = &self.training;
        out.push_str("[training]\n");
        out.push_str(&format!("epochs = {}\n", t.epochs));
        out.push_str(&format!("batch_size = {}\n", t.batch_size));
        out.push_str(&format!("proto_speakers = {}\n", t.proto_speakers));
        out.push_str(&format!("proto_utts = {}\n", t.proto_utts));
        out.push_str(&format!("lr_start = {}\n", t.lr_start));
        out.push_str(&format!("lr_end = {}\n", t.lr_end));
        out.push_str(&format!("momentum = {}\n", t.momentum));
        out.push_str(&format!("weight_decay = {}\n", t.weight_decay));
        if let Some(seed) = t.seed {
            out.push_str(&format!("seed = {seed}\n"));
        }

        let e = &self.evaluation;
        out.push_str("[evaluation]\n");
        out.push_str(&format!("n_target = {}\n", e.n_target));
        out.push_str(&format!("n_nontarget = {}\n", e.n_nontarget));
        out.push_str(&format!("p_target = {}\n", e.p_target));
        out.push_str(&format!("c_miss = {}\n", e.c_miss));
        out.push_str(&format!("c_fa = {}\n", e.c_fa));
        out.push_str(&format!("asnorm = {}\n", e.asnorm));
        out.push_str(&format!("cohort_top_n_frac = {}\n", e.cohort_top_n_frac));
        out
    }

    /// Hash of the canonical rendering minus the seed line, so the same
    /// experiment under different seeds shares a config identity.
    pub fn config_hash(&self) -> u64 {
        let mut unseeded = self.clone();
        unseeded.training.seed = None;
        fnv1a(unseeded.to_canonical_string().as_bytes())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut config = ExperimentConfig::default();
        config.apply(text)?;
        Ok(config)
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply(&mut self, text: &str) -> Result<()> {
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| {
                    Error::InvalidConfig(format!(
                        "line {}: malformed section header '{line}'",
                        lineno + 1
                    ))
                })?;
                match name {
                    "universe" | "model" | "loss" | "training" | "evaluation" => {
                        section = name.to_string();
                    }
                    other => {
                        return Err(Error::InvalidConfig(format!(
                            "line {}: unknown section [{other}]",
                            lineno + 1
                        )))
                    }
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "line {}: expected 'key = value', got '{line}'",
                    lineno + 1
                ))
            })?;
            let key = key.trim();
            let value = value.trim();
            self.set(&section, key, value)
                .map_err(|e| Error::InvalidConfig(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("key '{key}': cannot parse '{value}'")))
        }
        match (section, key) {
            ("universe", "k_train") => self.universe.k_train = num(key, value)?,
            ("universe", "k_unseen") => self.universe.k_unseen = num(key, value)?,
            ("universe", "d_feat") => self.universe.d_feat = num(key, value)?,
            ("universe", "kappa") => self.universe.kappa = num(key, value)?,
            ("universe", "utts_per_speaker") => self.universe.utts_per_speaker = num(key, value)?,
            ("model", "hidden") => {
                self.model.hidden = if value.is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|v| num::<usize>(key, v.trim()))
                        .collect::<Result<_>>()?
                };
            }
            ("model", "embed_dim") => self.model.embed_dim = num(key, value)?,
            ("loss", "kind") => self.loss.kind = LossKind::parse(value)?,
            ("loss", "lambda") => self.loss.lambda = num(key, value)?,
            ("loss", "t") => self.loss.t = num(key, value)?,
            ("loss", "s") => self.loss.s = num(key, value)?,
            ("loss", "m") => self.loss.m = num(key, value)?,
            ("loss", "margin_type") => self.loss.margin_type = MarginType::parse(value)?,
            ("loss", "bias_init") => self.loss.bias_init = num(key, value)?,
            ("loss", "angular_margin") => self.loss.angular_margin = num(key, value)?,
            ("loss", "proto_scale_init") => self.loss.proto_scale_init = num(key, value)?,
            ("loss", "proto_bias_init") => self.loss.proto_bias_init = num(key, value)?,
            ("training", "epochs") => self.training.epochs = num(key, value)?,
            ("training", "batch_size") => self.training.batch_size = num(key, value)?,
            ("training", "proto_speakers") => self.training.proto_speakers = num(key, value)?,
            ("training", "proto_utts") => self.training.proto_utts = num(key, value)?,
            ("training", "lr_start") => self.training.lr_start = num(key, value)?,
            ("training", "lr_end") => self.training.lr_end = num(key, value)?,
            ("training", "momentum") => self.training.momentum = num(key, value)?,
            ("training", "weight_decay") => self.training.weight_decay = num(key, value)?,
            ("training", "seed") => self.training.seed = Some(num(key, value)?),
            ("evaluation", "n_target") => self.evaluation.n_target = num(key, value)?,
            ("evaluation", "n_nontarget") => self.evaluation.n_nontarget = num(key, value)?,
            ("evaluation", "p_target") => self.evaluation.p_target = num(key, value)?,
            ("evaluation", "c_miss") => self.evaluation.c_miss = num(key, value)?,
            ("evaluation", "c_fa") => self.evaluation.c_fa = num(key, value)?,
            ("evaluation", "asnorm") => {
                self.evaluation.asnorm = match value {
                    "true" => true,
                    "false" => false,
                    other => {
                        return Err(Error::InvalidConfig(format!(
                            "key 'asnorm': expected true/false, got '{other}'"
                        )))
                    }
                }
            }
            ("evaluation", "cohort_top_n_frac") => {
                self.evaluation.cohort_top_n_frac = num(key, value)?
            }
            ("", k) => {
                return Err(Error::InvalidConfig(format!(
                    "key '{k}' appears before any [section]"
                )))
            }
            (s, k) => {
                return Err(Error::InvalidConfig(format!(
                    "unknown key '{k}' in section [{s}]"
                )))
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let config = ExperimentConfig::default();
        config.validate().unwrap();
    }

    #[test]
    fn canonical_string_round_trips() {
        let mut config = ExperimentConfig::default();
        config.training.seed = Some(7);
        config.loss.kind = LossKind::AamSoftmax;
        config.universe.kappa = 3.5;
        let text = config.to_canonical_string();
        let parsed = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(parsed, config);
        assert_eq!(parsed.to_canonical_string(), text);
    }

    #[test]
    fn unknown_keys_are_hard_errors() {
        let err = ExperimentConfig::parse("[universe]\nk_trian = 10\n").unwrap_err();
        assert_eq!(err.category(), "InvalidConfig");
        let err = ExperimentConfig::parse("[cosmos]\nk = 1\n").unwrap_err();
        assert_eq!(err.category(), "InvalidConfig");
        let err = ExperimentConfig::parse("k_train = 10\n").unwrap_err();
        assert_eq!(err.category(), "InvalidConfig");
    }

    #[test]
    fn hash_ignores_seed_but_not_params() {
        let mut a = ExperimentConfig::default();
        let mut b = ExperimentConfig::default();
        a.training.seed = Some(1);
        b.training.seed = Some(2);
        assert_eq!(a.config_hash(), b.config_hash());
        b.loss.m = 0.35;
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn loss_spec_mapping() {
        let mut config = ExperimentConfig::default();
        config.loss.kind = LossKind::AamSoftmax;
        config.loss.m = 0.2;
        config.loss.s = 32.0;
        match config.loss.spec() {
            LossSpec::MarginSoftmax(p) => {
                assert_eq!(p.m1, 1.0);
                assert_eq!(p.m2, 0.2);
                assert_eq!(p.m3, 0.0);
                assert_eq!(p.s, 32.0);
            }
            other => panic!("unexpected spec {other:?}"),
        }
        config.loss.kind = LossKind::ASoftmax;
        match config.loss.spec() {
            LossSpec::MarginSoftmax(p) => {
                assert_eq!(p.m1, 4.0);
                assert_eq!(p.m2, 0.0);
            }
            other => panic!("unexpected spec {other:?}"),
        }
    }

    #[test]
    fn shipped_default_config_matches_builtin_defaults() {
        let text = include_str!("../../../configs/default.cfg");
        let parsed = ExperimentConfig::parse(text).unwrap();
        assert_eq!(parsed, ExperimentConfig::default());
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let text = "# experiment\n\n[training]\n# five epochs\nepochs = 5\n";
        let config = ExperimentConfig::parse(text).unwrap();
        assert_eq!(config.training.epochs, 5);
    }

    #[test]
    fn invalid_combinations_rejected() {
        let mut config = ExperimentConfig::default();
        config.training.lr_start = 1e-6;
        config.training.lr_end = 1e-3;
        assert!(config.validate().is_err());

        let mut config = ExperimentConfig::default();
        config.loss.kind = LossKind::Prototypical;
        config.training.proto_utts = 1;
        assert!(config.validate().is_err());
    }
}
