//! Model and training configuration, with a canonical flat text form.
//!
//! The serialization is a sorted `key = value` list. It is what gets
//! embedded in checkpoints, so it must be stable: same config, same bytes.
//! Parsing requires every key to be present and rejects unknown keys.

use std::fmt;

use crate::error::{Error, Result};

/// Input image side length. The whole architecture is sized around it.
pub const IMAGE_SIZE: usize = 256;

/// Spatial reduction from input to the fused feature map:
/// stem conv /2, stem pool /2, transition pool /2, VA-DS pool /2.
pub const ENCODER_FACTOR: usize = 16;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Hash)]
pub enum Domain {
    Rgb,
    Edge,
    Depth,
}

impl Domain {
    /// Canonical order; also the channel-concatenation order in VA-DS.
    pub const ALL: [Domain; 3] = [Domain::Rgb, Domain::Edge, Domain::Depth];

    pub fn channels(self) -> usize {
        match self {
            Domain::Rgb => 3,
            Domain::Edge | Domain::Depth => 1,
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Domain::Rgb => "rgb",
            Domain::Edge => "edge",
            Domain::Depth => "depth",
        }
    }

    pub fn parse(s: &str) -> Result<Domain> {
        match s {
            "rgb" => Ok(Domain::Rgb),
            "edge" => Ok(Domain::Edge),
            "depth" => Ok(Domain::Depth),
            _ => Err(Error::Config(format!("unknown domain {s:?} (want rgb, edge or depth)"))),
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum LrDecayMode {
    /// lr * (1 - decay)^epoch.
    Geometric,
    /// lr * max(0, 1 - decay * epoch); hits zero at epoch 1/decay.
    Linear,
}

impl LrDecayMode {
    fn key(self) -> &'static str {
        match self {
            LrDecayMode::Geometric => "geometric",
            LrDecayMode::Linear => "linear",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub enabled_domains: Vec<Domain>,
    pub stem_channels: usize,
    pub block_layers: usize,
    pub growth_rate: usize,
    pub bottleneck_factor: usize,
    pub squeeze_out: usize,
    pub mrfu_widths: Vec<usize>,
    pub dilations: [usize; 3],
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub adam_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub lr_decay_per_epoch: f64,
    pub lr_decay_mode: LrDecayMode,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        ModelConfig {
            enabled_domains: Domain::ALL.to_vec(),
            stem_channels: 16,
            block_layers: 4,
            growth_rate: 8,
            bottleneck_factor: 4,
            squeeze_out: 64,
            mrfu_widths: vec![32, 16, 8, 8],
            dilations: [2, 3, 4],
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            adam_lr: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 20,
            lr_decay_per_epoch: 0.1,
            lr_decay_mode: LrDecayMode::Geometric,
            batch_size: 4,
            seed: 0,
        }
    }
}

const KEYS: [&str; 19] = [
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "adam_lr",
    "batch_size",
    "block_layers",
    "bottleneck_factor",
    "dilations",
    "enabled_domains",
    "epochs",
    "focal_alpha",
    "focal_gamma",
    "growth_rate",
    "lr_decay_mode",
    "lr_decay_per_epoch",
    "mrfu_widths",
    "seed",
    "squeeze_out",
    "stem_channels",
];

impl ModelConfig {
    /// Channels leaving one extractor: stem -> block1 -> halving
    /// transition -> block2.
    pub fn extractor_out_channels(&self) -> usize {
        let block1_out = self.stem_channels + self.block_layers * self.growth_rate;
        block1_out / 2 + self.block_layers * self.growth_rate
    }

    /// Merged channel width entering VA-DS.
    pub fn merged_channels(&self) -> usize {
        self.enabled_domains.len() * self.extractor_out_channels()
    }

    pub fn validate(&self) -> Result<()> {
        if self.enabled_domains.is_empty() {
            return Err(Error::Config("enabled_domains must not be empty".into()));
        }
        let mut sorted = self.enabled_domains.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.enabled_domains.len() {
            return Err(Error::Config("enabled_domains contains duplicates".into()));
        }
        if sorted != self.enabled_domains {
            return Err(Error::Config(
                "enabled_domains must follow the fixed order rgb, edge, depth".into(),
            ));
        }
        for (name, v) in [
            ("stem_channels", self.stem_channels),
            ("block_layers", self.block_layers),
            ("growth_rate", self.growth_rate),
            ("bottleneck_factor", self.bottleneck_factor),
            ("squeeze_out", self.squeeze_out),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        let block1_out = self.stem_channels + self.block_layers * self.growth_rate;
        if block1_out % 2 != 0 {
            return Err(Error::Config(format!(
                "first block output width {block1_out} must be even for the halving transition"
            )));
        }
        if self.dilations.iter().any(|&d| d == 0) {
            return Err(Error::Config("dilations must be positive".into()));
        }
        let fused = IMAGE_SIZE / ENCODER_FACTOR;
        let restored = fused << self.mrfu_widths.len();
        if restored != IMAGE_SIZE {
            return Err(Error::Config(format!(
                "{} upsampling stages restore {restored}, want {IMAGE_SIZE}",
                self.mrfu_widths.len()
            )));
        }
        if self.mrfu_widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("mrfu_widths must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.focal_alpha) {
            return Err(Error::Config("focal_alpha must lie in [0,1]".into()));
        }
        if self.focal_gamma < 0.0 {
            return Err(Error::Config("focal_gamma must be non-negative".into()));
        }
        if self.adam_lr <= 0.0 || self.adam_eps <= 0.0 {
            return Err(Error::Config("adam_lr and adam_eps must be positive".into()));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0,1)")));
            }
        }
        if !(0.0..1.0).contains(&self.lr_decay_per_epoch) {
            return Err(Error::Config("lr_decay_per_epoch must lie in [0,1)".into()));
        }
        Ok(())
    }

    /// Canonical text: sorted keys, `key = value`, one per line.
    pub fn to_text(&self) -> String {
        let domains =
            self.enabled_domains.iter().map(|d| d.key()).collect::<Vec<_>>().join(",");
        let widths =
            self.mrfu_widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",");
        let dilations =
            self.dilations.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        for key in KEYS {
            let value = match key {
                "adam_beta1" => self.adam_beta1.to_string(),
                "adam_beta2" => self.adam_beta2.to_string(),
                "adam_eps" => self.adam_eps.to_string(),
                "adam_lr" => self.adam_lr.to_string(),
                "batch_size" => self.batch_size.to_string(),
                "block_layers" => self.block_layers.to_string(),
                "bottleneck_factor" => self.bottleneck_factor.to_string(),
                "dilations" => dilations.clone(),
                "enabled_domains" => domains.clone(),
                "epochs" => self.epochs.to_string(),
                "focal_alpha" => self.focal_alpha.to_string(),
                "focal_gamma" => self.focal_gamma.to_string(),
                "growth_rate" => self.growth_rate.to_string(),
                "lr_decay_mode" => self.lr_decay_mode.key().to_string(),
                "lr_decay_per_epoch" => self.lr_decay_per_epoch.to_string(),
                "mrfu_widths" => widths.clone(),
                "seed" => self.seed.to_string(),
                "squeeze_out" => self.squeeze_out.to_string(),
                "stem_channels" => self.stem_channels.to_string(),
                _ => unreachable!(),
            };
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        }
        out
    }

    /// Parse the flat key-value form. Every key must appear exactly once;
    /// unknown keys are errors. Lines starting with '#' and blank lines are
    /// ignored.
    pub fn from_text(text: &str) -> Result<ModelConfig> {
        let mut seen: std::collections::BTreeMap<&str, String> = Default::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected key = value", lineno + 1)));
            };
            let key = key.trim();
            let Some(&known) = KEYS.iter().find(|&&k| k == key) else {
                return Err(Error::Config(format!("unknown config key {key:?}")));
            };
            if seen.insert(known, value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("duplicate config key {key:?}")));
            }
        }
        for key in KEYS {
            if !seen.contains_key(key) {
                return Err(Error::Config(format!("missing config key {key:?}")));
            }
        }

        let get = |k: &str| seen.get(k).expect("presence checked").as_str();
        let parse_usize = |k: &str| -> Result<usize> {
            get(k).parse().map_err(|_| Error::Config(format!("{k}: not an integer: {}", get(k))))
        };
        let parse_f64 = |k: &str| -> Result<f64> {
            get(k).parse().map_err(|_| Error::Config(format!("{k}: not a number: {}", get(k))))
        };

        let enabled_domains = get("enabled_domains")
            .split(',')
            .map(|s| Domain::parse(s.trim()))
            .collect::<Result<Vec<_>>>()?;
        let mrfu_widths = get("mrfu_widths")
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("mrfu_widths: bad entry {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let dil: Vec<usize> = get("dilations")
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("dilations: bad entry {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let dilations: [usize; 3] = dil
            .try_into()
            .map_err(|_| Error::Config("dilations must have exactly three entries".into()))?;
        let lr_decay_mode = match get("lr_decay_mode") {
            "geometric" => LrDecayMode::Geometric,
            "linear" => LrDecayMode::Linear,
            other => return Err(Error::Config(format!("lr_decay_mode: unknown mode {other:?}"))),
        };

        let cfg = ModelConfig {
            enabled_domains,
            stem_channels: parse_usize("stem_channels")?,
            block_layers: parse_usize("block_layers")?,
            growth_rate: parse_usize("growth_rate")?,
            bottleneck_factor: parse_usize("bottleneck_factor")?,
            squeeze_out: parse_usize("squeeze_out")?,
            mrfu_widths,
            dilations,
            focal_gamma: parse_f64("focal_gamma")?,
            focal_alpha: parse_f64("focal_alpha")?,
            adam_lr: parse_f64("adam_lr")?,
            adam_beta1: parse_f64("adam_beta1")?,
            adam_beta2: parse_f64("adam_beta2")?,
            adam_eps: parse_f64("adam_eps")?,
            epochs: parse_usize("epochs")?,
            lr_decay_per_epoch: parse_f64("lr_decay_per_epoch")?,
            lr_decay_mode,
            batch_size: parse_usize("batch_size")?,
            seed: get("seed")
                .parse()
                .map_err(|_| Error::Config(format!("seed: not an integer: {}", get("seed"))))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
