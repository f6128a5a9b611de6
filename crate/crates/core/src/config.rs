//! Model and training configuration, with a flat `key = value` file format
//! and `LRNET_*` environment overrides.
//!
//! ```text
//! # train.cfg
//! lr = 1e-4
//! epochs = 200
//! batch_size = 16
//! loss_mode = bce+iou
//! widths = 64,128,256,512,512
//! lop = true
//! manifest = data/levir/manifest.json
//! ```
//!
//! Every key can also be set through the environment by upper-casing it and
//! prefixing `LRNET_`, e.g. `LRNET_EPOCHS=50`. Environment values win over
//! the file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ENV_PREFIX: &str = "LRNET_";

/// Channel widths of the five encoder levels of VGG16.
pub const VGG16_WIDTHS: [usize; 5] = [64, 128, 256, 512, 512];

/// Reduced widths for CPU-scale experiments and tests.
pub const DESK_WIDTHS: [usize; 5] = [8, 16, 32, 64, 64];

/// Architecture switches and sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub widths: [usize; 5],
    pub in_channels: usize,
    /// Learnable pooling in the difference branch (max pooling otherwise).
    pub lop: bool,
    /// Change alignment attention at every level.
    pub c2a: bool,
    /// Hierarchical propagation of attention maps; needs `c2a`.
    pub hca: bool,
    /// Deep supervision head at the encoder/decoder junction.
    pub e2a: bool,
    /// Similarity threshold `T` of the alignment coefficients.
    pub similarity_threshold: f64,
    pub cam_reduction: usize,
    pub sam_kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::vgg16()
    }
}

impl ModelConfig {
    /// Full-width network with every module enabled.
    pub fn vgg16() -> Self {
        Self {
            widths: VGG16_WIDTHS,
            in_channels: 3,
            lop: true,
            c2a: true,
            hca: true,
            e2a: true,
            similarity_threshold: 0.5,
            cam_reduction: 16,
            sam_kernel: 7,
        }
    }

    pub fn desk() -> Self {
        Self {
            widths: DESK_WIDTHS,
            ..Self::vgg16()
        }
    }

    /// Three-branch backbone with every proposed module switched off.
    pub fn base(self) -> Self {
        Self {
            lop: false,
            c2a: false,
            hca: false,
            e2a: false,
            ..self
        }
    }

    pub fn with_widths(self, widths: [usize; 5]) -> Self {
        Self { widths, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hca && !self.c2a {
            return Err(Error::Config("hca requires c2a".into()));
        }
        if self.widths.contains(&0) || self.in_channels == 0 {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        if !(self.similarity_threshold > 0.0 && self.similarity_threshold < 1.0) {
            return Err(Error::Config(format!(
                "similarity threshold {} outside (0, 1)",
                self.similarity_threshold
            )));
        }
        if self.sam_kernel % 2 == 0 || self.cam_reduction == 0 {
            return Err(Error::Config(
                "sam_kernel must be odd and cam_reduction positive".into(),
            ));
        }
        Ok(())
    }

    /// Short variant label such as `base+LOP+C2A+HCA`.
    pub fn variant_name(&self) -> String {
        let mut name = String::from("base");
        for (on, tag) in [
            (self.lop, "LOP"),
            (self.c2a, "C2A"),
            (self.hca, "HCA"),
            (self.e2a, "E2A"),
        ] {
            if on {
                name.push('+');
                name.push_str(tag);
            }
        }
        name
    }
}

/// Which terms make up the area (and edge) supervision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossMode {
    /// Binary cross-entropy on areas only.
    Bce,
    /// IoU on areas plus IoU on edges.
    Iou,
    /// BCE + IoU on areas plus IoU on edges.
    BceIou,
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::Bce => "bce",
            LossMode::Iou => "iou",
            LossMode::BceIou => "bce+iou",
        })
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(' ', "").as_str() {
            "bce" => Ok(LossMode::Bce),
            "iou" => Ok(LossMode::Iou),
            "bce+iou" | "bce_iou" | "joint" => Ok(LossMode::BceIou),
            other => Err(Error::Config(format!("unknown loss mode {other:?}"))),
        }
    }
}

/// Input scaling applied before the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormalizeMode {
    /// Intensities in `[0, 1]` as decoded.
    Unit,
    /// Per-channel ImageNet mean/std standardisation.
    Backbone,
}

impl FromStr for NormalizeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit" => Ok(NormalizeMode::Unit),
            "backbone" | "backbone-standardized" | "imagenet" => Ok(NormalizeMode::Backbone),
            other => Err(Error::Config(format!("unknown normalize mode {other:?}"))),
        }
    }
}

impl fmt::Display for NormalizeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormalizeMode::Unit => "unit",
            NormalizeMode::Backbone => "backbone",
        })
    }
}

/// Everything a training run needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss_mode: LossMode,
    pub model: ModelConfig,
    pub seed: u64,
    /// Weight of the deep (E2A) loss relative to the final-output loss.
    pub deep_loss_weight: f64,
    pub normalize: NormalizeMode,
    pub manifest: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
    /// Backbone weight archive for the two image branches.
    pub pretrained: Option<PathBuf>,
    /// Also initialise the difference branch from `pretrained`.
    pub pretrained_diff_branch: bool,
    /// Stop once training-set F1 (percent) reaches this value.
    pub stop_at_train_f1: Option<f64>,
    /// Evaluate the training set every this many epochs when
    /// `stop_at_train_f1` is set.
    pub train_eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            epochs: 200,
            batch_size: 16,
            loss_mode: LossMode::BceIou,
            model: ModelConfig::vgg16(),
            seed: 0,
            deep_loss_weight: 1.0,
            normalize: NormalizeMode::Unit,
            manifest: None,
            checkpoint_dir: None,
            pretrained: None,
            pretrained_diff_branch: false,
            stop_at_train_f1: None,
            train_eval_every: 10,
        }
    }
}

/// Keys accepted by [`TrainConfig::set`].
pub const TRAIN_KEYS: &[&str] = &[
    "lr",
    "epochs",
    "batch_size",
    "loss_mode",
    "lop",
    "c2a",
    "hca",
    "e2a",
    "seed",
    "widths",
    "similarity_threshold",
    "cam_reduction",
    "sam_kernel",
    "deep_loss_weight",
    "normalize",
    "manifest",
    "checkpoint_dir",
    "pretrained",
    "pretrained_diff_branch",
    "stop_at_train_f1",
    "train_eval_every",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean {value:?} for {key}"))),
    }
}

fn parse_widths(value: &str) -> Result<[usize; 5]> {
    match value {
        "vgg16" | "paper" => return Ok(VGG16_WIDTHS),
        "desk" => return Ok(DESK_WIDTHS),
        _ => {}
    }
    let parts: Vec<usize> = value
        .split(',')
        .map(|p| parse("widths", p.trim()))
        .collect::<Result<_>>()?;
    parts
        .try_into()
        .map_err(|_| Error::Config("widths needs exactly five entries".into()))
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty() && value != "none").then(|| PathBuf::from(value))
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected `key = value`", lineno + 1))
        })?;
        let v = v.trim().trim_matches('"');
        out.push((k.trim().to_owned(), v.to_owned()));
    }
    Ok(out)
}

/// `LRNET_<KEY>` pairs from the environment for the given keys.
pub fn env_overrides(keys: &[&str]) -> Vec<(String, String)> {
    keys.iter()
        .filter_map(|k| {
            std::env::var(format!("{ENV_PREFIX}{}", k.to_ascii_uppercase()))
                .ok()
                .map(|v| ((*k).to_owned(), v))
        })
        .collect()
}

impl TrainConfig {
    /// Settings for quick CPU-scale runs on small synthetic tiles.
    pub fn desk() -> Self {
        Self {
            epochs: 50,
            batch_size: 4,
            lr: 1e-3,
            model: ModelConfig::desk(),
            ..Self::default()
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        match key {
            "lr" => self.lr = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "loss_mode" => self.loss_mode = value.parse()?,
            "lop" => m.lop = parse_bool(key, value)?,
            "c2a" => m.c2a = parse_bool(key, value)?,
            "hca" => m.hca = parse_bool(key, value)?,
            "e2a" => m.e2a = parse_bool(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "widths" => m.widths = parse_widths(value)?,
            "similarity_threshold" => m.similarity_threshold = parse(key, value)?,
            "cam_reduction" => m.cam_reduction = parse(key, value)?,
            "sam_kernel" => m.sam_kernel = parse(key, value)?,
            "deep_loss_weight" => self.deep_loss_weight = parse(key, value)?,
            "normalize" => self.normalize = value.parse()?,
            "manifest" => self.manifest = optional_path(value),
            "checkpoint_dir" => self.checkpoint_dir = optional_path(value),
            "pretrained" => self.pretrained = optional_path(value),
            "pretrained_diff_branch" => self.pretrained_diff_branch = parse_bool(key, value)?,
            "stop_at_train_f1" => {
                self.stop_at_train_f1 = match value {
                    "" | "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "train_eval_every" => self.train_eval_every = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.lr > 0.0) || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "lr, epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.deep_loss_weight >= 0.0) || self.train_eval_every == 0 {
            return Err(Error::Config(
                "deep_loss_weight must be ≥ 0 and train_eval_every positive".into(),
            ));
        }
        Ok(())
    }

    /// Parses a config file text on top of `self`, then applies overrides.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_key_values(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    /// Defaults, then the file (if any), then `LRNET_*` variables.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        Self::load_onto(Self::default(), path)
    }

    /// As [`TrainConfig::load`], starting from `base` instead of the defaults.
    pub fn load_onto(base: Self, path: Option<&Path>) -> Result<Self> {
        let mut cfg = base;
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            cfg.apply_text(&text)?;
        }
        for (k, v) in env_overrides(TRAIN_KEYS) {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Renders every key in the flat file format.
    pub fn to_key_values(&self) -> String {
        let m = &self.model;
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map_or_else(|| "none".to_owned(), |p| p.display().to_string())
        };
        let widths = m.widths.map(|w| w.to_string()).join(",");
        let mut s = String::new();
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        kv("lr", self.lr.to_string());
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("loss_mode", self.loss_mode.to_string());
        kv("lop", m.lop.to_string());
        kv("c2a", m.c2a.to_string());
        kv("hca", m.hca.to_string());
        kv("e2a", m.e2a.to_string());
        kv("seed", self.seed.to_string());
        kv("widths", widths);
        kv("similarity_threshold", m.similarity_threshold.to_string());
        kv("cam_reduction", m.cam_reduction.to_string());
        kv("sam_kernel", m.sam_kernel.to_string());
        kv("deep_loss_weight", self.deep_loss_weight.to_string());
        kv("normalize", self.normalize.to_string());
        kv("manifest", path(&self.manifest));
        kv("checkpoint_dir", path(&self.checkpoint_dir));
        kv("pretrained", path(&self.pretrained));
        kv("pretrained_diff_branch", self.pretrained_diff_branch.to_string());
        kv(
            "stop_at_train_f1",
            self.stop_at_train_f1
                .map_or_else(|| "none".to_owned(), |v| v.to_string()),
        );
        kv("train_eval_every", self.train_eval_every.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_training_protocol() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr, 1e-4);
        assert_eq!(cfg.epochs, 200);
        assert_eq!(cfg.batch_size, 16);
        assert_eq!(cfg.loss_mode, LossMode::BceIou);
        assert_eq!(cfg.model.widths, VGG16_WIDTHS);
    }

    #[test]
    fn key_values_round_trip() {
        let mut cfg = TrainConfig::desk();
        cfg.seed = 42;
        cfg.model.hca = false;
        cfg.stop_at_train_f1 = Some(95.0);
        cfg.manifest = Some("m.json".into());
        let mut back = TrainConfig::default();
        back.apply_text(&cfg.to_key_values()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn every_key_is_addressable() {
        let text = TrainConfig::default().to_key_values();
        let keys: Vec<_> = parse_key_values(&text).unwrap().into_iter().map(|(k, _)| k).collect();
        assert_eq!(keys, TRAIN_KEYS);
    }

    #[test]
    fn hca_without_c2a_rejected() {
        let mut cfg = TrainConfig::default();
        cfg.apply_text("c2a = false\nhca = true").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn comments_and_bad_lines() {
        let kv = parse_key_values("# header\nlr = 0.5 # trailing\n\n").unwrap();
        assert_eq!(kv, vec![("lr".to_owned(), "0.5".to_owned())]);
        assert!(parse_key_values("no equals sign").is_err());
        assert!(TrainConfig::default().set("bogus", "1").is_err());
        assert!(TrainConfig::default().set("widths", "1,2,3").is_err());
    }

    #[test]
    fn loss_mode_parsing() {
        assert_eq!("BCE".parse::<LossMode>().unwrap(), LossMode::Bce);
        assert_eq!("bce+iou".parse::<LossMode>().unwrap(), LossMode::BceIou);
        assert!("dice".parse::<LossMode>().is_err());
    }

    #[test]
    fn variant_names() {
        assert_eq!(ModelConfig::vgg16().base().variant_name(), "base");
        assert_eq!(ModelConfig::vgg16().variant_name(), "base+LOP+C2A+HCA+E2A");
    }
}
