//! Flat `key = value` configuration files.
//!
//! ```text
//! # comment
//! tiers.thresholds = 1.0, 0.6, 0.1
//! features.reid = false
//! ```
//!
//! Keys are dotted, one per line, each at most once. Unknown keys are errors.
//! Anything not given keeps its default.

use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::pipeline::{TierConfig, TrackerConfig};
use crate::synth::SynthConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {reason}")]
    BadValue { line: usize, key: String, reason: String },
    #[error("{0}")]
    Invalid(String),
}

impl ConfigError {
    pub fn line(&self) -> Option<usize> {
        match self {
            Self::Syntax { line, .. } | Self::UnknownKey { line, .. } | Self::DuplicateKey { line, .. } | Self::BadValue { line, .. } => {
                Some(*line)
            }
            Self::Invalid(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Entry<'a> {
    line: usize,
    key: &'a str,
    value: &'a str,
}

impl Entry<'_> {
    fn bad(&self, reason: impl Into<String>) -> ConfigError {
        ConfigError::BadValue {
            line: self.line,
            key: self.key.to_string(),
            reason: reason.into(),
        }
    }

    fn parse<T: FromStr>(&self) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.value.parse().map_err(|e: T::Err| self.bad(e.to_string()))
    }

    fn float(&self) -> Result<f64, ConfigError> {
        let v: f64 = self.parse()?;
        if !v.is_finite() {
            return Err(self.bad("not finite"));
        }
        Ok(v)
    }

    fn flag(&self) -> Result<bool, ConfigError> {
        match self.value {
            "true" | "on" | "1" => Ok(true),
            "false" | "off" | "0" => Ok(false),
            other => Err(self.bad(format!("expected true/false, got `{other}`"))),
        }
    }

    fn floats(&self) -> Result<Vec<f64>, ConfigError> {
        self.value
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|e| self.bad(e.to_string())))
            .collect()
    }

    fn unknown(&self) -> ConfigError {
        ConfigError::UnknownKey {
            line: self.line,
            key: self.key.to_string(),
        }
    }
}

fn entries(text: &str) -> Result<Vec<Entry<'_>>, ConfigError> {
    let mut out: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ConfigError::Syntax { line, reason: format!("expected `key = value`, got `{content}`") });
        };
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::Syntax { line, reason: "empty key or value".into() });
        }
        if out.iter().any(|e| e.key == key) {
            return Err(ConfigError::DuplicateKey { line, key: key.into() });
        }
        out.push(Entry { line, key, value });
    }
    Ok(out)
}

/// Loads a tracker configuration and validates it.
pub fn parse_tracker_config(text: &str) -> Result<TrackerConfig, ConfigError> {
    let mut cfg = TrackerConfig::default();
    for e in entries(text)? {
        match e.key {
            "tiers.thresholds" => {
                cfg.tiers = TierConfig::new(e.floats()?).map_err(|err| e.bad(err.to_string()))?;
            }
            "cost.lambda_iou" => cfg.cost.lambda_iou = e.float()?,
            "cost.lambda_reid" => cfg.cost.lambda_reid = e.float()?,
            "cost.iou_gate" => cfg.cost.iou_gate = e.float()?,
            "appearance.ema_momentum" => cfg.ema_momentum = e.float()?,
            "lifecycle.init_threshold" => cfg.lifecycle.init_threshold = e.float()?,
            "lifecycle.max_age" => cfg.lifecycle.max_age = e.parse()?,
            "lifecycle.min_hits" => cfg.lifecycle.min_hits = e.parse()?,
            "motion.position_weight" => cfg.noise.position_weight = e.float()?,
            "motion.velocity_weight" => cfg.noise.velocity_weight = e.float()?,
            "features.reid" => cfg.use_reid = e.flag()?,
            "features.ocr" => cfg.use_ocr = e.flag()?,
            "features.oos" => cfg.use_oos = e.flag()?,
            _ => return Err(e.unknown()),
        }
    }
    cfg.validate().map_err(|err| ConfigError::Invalid(err.to_string()))?;
    Ok(cfg)
}

/// Inverse of [`parse_tracker_config`]; every key is written.
pub fn tracker_config_text(cfg: &TrackerConfig) -> String {
    let thresholds: Vec<String> = cfg.tiers.thresholds().iter().map(|t| format!("{t:?}")).collect();
    let mut s = String::new();
    let _ = writeln!(s, "tiers.thresholds = {}", thresholds.join(", "));
    let _ = writeln!(s, "cost.lambda_iou = {:?}", cfg.cost.lambda_iou);
    let _ = writeln!(s, "cost.lambda_reid = {:?}", cfg.cost.lambda_reid);
    let _ = writeln!(s, "cost.iou_gate = {:?}", cfg.cost.iou_gate);
    let _ = writeln!(s, "appearance.ema_momentum = {:?}", cfg.ema_momentum);
    let _ = writeln!(s, "lifecycle.init_threshold = {:?}", cfg.lifecycle.init_threshold);
    let _ = writeln!(s, "lifecycle.max_age = {}", cfg.lifecycle.max_age);
    let _ = writeln!(s, "lifecycle.min_hits = {}", cfg.lifecycle.min_hits);
    let _ = writeln!(s, "motion.position_weight = {:?}", cfg.noise.position_weight);
    let _ = writeln!(s, "motion.velocity_weight = {:?}", cfg.noise.velocity_weight);
    let _ = writeln!(s, "features.reid = {}", cfg.use_reid);
    let _ = writeln!(s, "features.ocr = {}", cfg.use_ocr);
    let _ = writeln!(s, "features.oos = {}", cfg.use_oos);
    s
}

/// Loads a synthetic-sequence configuration and validates it.
pub fn parse_synth_config(text: &str) -> Result<SynthConfig, ConfigError> {
    let mut c = SynthConfig::default();
    for e in entries(text)? {
        match e.key {
            "synth.seed" => c.seed = e.parse()?,
            "synth.n_targets" => c.n_targets = e.parse()?,
            "synth.n_frames" => c.n_frames = e.parse()?,
            "synth.arena_width" => c.arena_width = e.float()?,
            "synth.arena_height" => c.arena_height = e.float()?,
            "synth.speed_min" => c.speed_min = e.float()?,
            "synth.speed_max" => c.speed_max = e.float()?,
            "synth.box_width_min" => c.box_width_min = e.float()?,
            "synth.box_width_max" => c.box_width_max = e.float()?,
            "synth.aspect_min" => c.aspect_min = e.float()?,
            "synth.aspect_max" => c.aspect_max = e.float()?,
            "synth.position_sigma" => c.position_sigma = e.float()?,
            "synth.crossing_pairs" => c.crossing_pairs = e.parse()?,
            "occlusion.threshold" => c.occlusion_threshold = e.float()?,
            "occlusion.min_factor" => c.occlusion_min_factor = e.float()?,
            "embedding.dim" => c.embedding_dim = e.parse()?,
            "embedding.sigma_id" => c.sigma_id = e.float()?,
            "embedding.sigma_frame" => c.sigma_frame = e.float()?,
            "detector.miss_rate" => c.miss_rate = e.float()?,
            "detector.fp_rate" => c.fp_rate = e.float()?,
            "detector.jitter" => c.jitter = e.float()?,
            "detector.conf_mean" => c.conf_mean = e.float()?,
            "detector.conf_sigma" => c.conf_sigma = e.float()?,
            "detector.conf_floor" => c.conf_floor = e.float()?,
            "detector.fp_conf_max" => c.fp_conf_max = e.float()?,
            "classes.count" => c.n_classes = e.parse()?,
            "classes.signal" => c.logit_signal = e.float()?,
            "classes.noise" => c.logit_noise = e.float()?,
            "classes.occlusion_gain" => c.logit_occlusion_gain = e.float()?,
            _ => return Err(e.unknown()),
        }
    }
    c.validate().map_err(|err| ConfigError::Invalid(err.to_string()))?;
    Ok(c)
}
