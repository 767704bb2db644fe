//! TOML pipeline configuration with named presets.
//!
//! A config file may name a `preset`; explicit fields overlay the preset's
//! values (tables merge recursively, everything else replaces). Presets pin
//! the tokenizer / masking / frame-rate settings of the five benchmark
//! variants:
//!
//! | preset          | input | targets             | quantizer      | rate Hz |
//! |-----------------|-------|---------------------|----------------|---------|
//! | `base`          | mel   | mel                 | 1 x RQ 8192    | 15.625  |
//! | `multi-codebook`| mel   | mel                 | 4 x RQ 8192    | 15.625  |
//! | `multi-feature` | audio | enc/mel/cqt/audio   | 4 x RQ 8192    | 18.75   |
//! | `high-rate`     | audio | enc/mel/cqt/audio   | 4 x RQ 8192    | 25      |
//! | `high-rate-fsq` | audio | enc/mel/cqt/audio   | 4 x FSQ 5ch/6L | 25      |
//!
//! Configs carry no filesystem paths, so resolved configs embed cleanly
//! into artifacts as provenance without breaking cross-directory
//! reproducibility.

use crate::encoder::EncoderConfig;
use crate::features::{CqtConfig, MelConfig};
use crate::masking::MaskFill;
use crate::pretrain::TrainConfig;
use crate::probes::ProbeConfig;
use crate::rate::Rate;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown preset {0:?} (expected base, multi-codebook, multi-feature, high-rate, high-rate-fsq)")]
    UnknownPreset(String),
    #[error("config parse error: {0}")]
    Toml(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("io error reading config: {0}")]
    Io(#[from] std::io::Error),
}

pub const PRESET_NAMES: [&str; 5] =
    ["base", "multi-codebook", "multi-feature", "high-rate", "high-rate-fsq"];

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct AudioSection {
    pub sample_rate: u32,
}

impl Default for AudioSection {
    fn default() -> Self {
        AudioSection { sample_rate: 16000 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct PatchSection {
    pub patch_len: usize,
    pub hop: usize,
}

impl Default for PatchSection {
    fn default() -> Self {
        PatchSection { patch_len: 1024, hop: 512 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(default)]
pub struct FeaturesSection {
    pub mel: MelConfig,
    pub cqt: CqtConfig,
    pub audio_patches: PatchSection,
    /// Common frame grid in Hz for targets and encoder input; absent means
    /// the input feature's native rate. Must be exactly representable
    /// (15.625, 18.75, 25, ...).
    pub target_rate: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKindSection {
    Rq,
    Fsq,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct HeadSection {
    pub feature: String,
    pub kind: HeadKindSection,
    /// RQ codeword count.
    pub vocab: usize,
    pub fsq_channels: usize,
    pub fsq_levels: usize,
    /// Explicit codebook seed; absent means derived from the root seed and
    /// the head index.
    pub seed: Option<u64>,
}

impl Default for HeadSection {
    fn default() -> Self {
        HeadSection {
            feature: "mel".into(),
            kind: HeadKindSection::Rq,
            vocab: 8192,
            fsq_channels: 5,
            fsq_levels: 6,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct QuantizerSection {
    pub heads: Vec<HeadSection>,
    pub proj_dims: usize,
    pub normalize_input: bool,
}

impl Default for QuantizerSection {
    fn default() -> Self {
        QuantizerSection {
            heads: vec![HeadSection::default()],
            proj_dims: 16,
            normalize_input: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskStrategy {
    GaussianNoise,
    WaveformShuffle,
}

impl From<MaskStrategy> for MaskFill {
    fn from(value: MaskStrategy) -> Self {
        match value {
            MaskStrategy::GaussianNoise => MaskFill::GaussianNoise,
            MaskStrategy::WaveformShuffle => MaskFill::WaveformShuffle,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct MaskingSection {
    pub chunk_seconds: f64,
    pub target_fraction: f64,
    pub strategy: MaskStrategy,
    pub noise_std: f64,
}

impl Default for MaskingSection {
    fn default() -> Self {
        MaskingSection {
            chunk_seconds: 0.4,
            target_fraction: 0.6,
            strategy: MaskStrategy::GaussianNoise,
            noise_std: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct PipelineConfig {
    pub preset: Option<String>,
    /// Feature consumed by the encoder ("mel", "cqt", "audio", "enc").
    pub input_feature: String,
    pub audio: AudioSection,
    pub features: FeaturesSection,
    pub quantizer: QuantizerSection,
    pub masking: MaskingSection,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub probes: BTreeMap<String, ProbeConfig>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            preset: None,
            input_feature: "mel".into(),
            audio: AudioSection::default(),
            features: FeaturesSection::default(),
            quantizer: QuantizerSection::default(),
            masking: MaskingSection::default(),
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            probes: BTreeMap::new(),
        }
    }
}

impl PipelineConfig {
    /// The named benchmark variant with everything else at desk defaults.
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let mut cfg = PipelineConfig { preset: Some(name.to_string()), ..Default::default() };
        let rq = |feature: &str| HeadSection { feature: feature.into(), ..Default::default() };
        let fsq = |feature: &str| HeadSection {
            feature: feature.into(),
            kind: HeadKindSection::Fsq,
            ..Default::default()
        };
        match name {
            "base" => {
                cfg.input_feature = "mel".into();
                cfg.quantizer.heads = vec![rq("mel")];
            }
            "multi-codebook" => {
                cfg.input_feature = "mel".into();
                cfg.quantizer.heads = vec![rq("mel"), rq("mel"), rq("mel"), rq("mel")];
            }
            "multi-feature" | "high-rate" => {
                cfg.input_feature = "audio".into();
                cfg.quantizer.heads = vec![rq("enc"), rq("mel"), rq("cqt"), rq("audio")];
                cfg.features.target_rate =
                    Some(if name == "multi-feature" { 18.75 } else { 25.0 });
            }
            "high-rate-fsq" => {
                cfg.input_feature = "audio".into();
                cfg.quantizer.heads = vec![fsq("enc"), fsq("mel"), fsq("cqt"), fsq("audio")];
                cfg.features.target_rate = Some(25.0);
            }
            other => return Err(ConfigError::UnknownPreset(other.to_string())),
        }
        Ok(cfg)
    }

    /// Frame grid shared by targets and the encoder input.
    pub fn resolved_target_rate(&self) -> Result<Rate, ConfigError> {
        match self.features.target_rate {
            Some(hz) => Rate::from_f64_exact(hz).ok_or_else(|| {
                ConfigError::Invalid(format!("target_rate {hz} is not a positive finite rate"))
            }),
            None => Ok(self.native_rate(&self.input_feature)),
        }
    }

    /// Native frame rate of an extractor under this config.
    pub fn native_rate(&self, feature: &str) -> Rate {
        let sr = self.audio.sample_rate;
        match feature {
            "cqt" => Rate::per_hop(sr, self.features.cqt.hop),
            "audio" => Rate::per_hop(sr, self.features.audio_patches.hop),
            // "enc" rates live in the cache; mel is the default grid.
            _ => Rate::per_hop(sr, self.features.mel.hop),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.quantizer.heads.is_empty() {
            return Err(ConfigError::Invalid("quantizer needs at least one head".into()));
        }
        if self.quantizer.proj_dims == 0 {
            return Err(ConfigError::Invalid("proj_dims must be positive".into()));
        }
        let known = ["mel", "cqt", "audio", "enc"];
        for head in &self.quantizer.heads {
            if !known.contains(&head.feature.as_str()) {
                return Err(ConfigError::Invalid(format!(
                    "unknown head feature {:?}",
                    head.feature
                )));
            }
        }
        if !known.contains(&self.input_feature.as_str()) {
            return Err(ConfigError::Invalid(format!(
                "unknown input feature {:?}",
                self.input_feature
            )));
        }
        self.resolved_target_rate()?;
        Ok(())
    }

    /// Resolved-config echo embedded in every output artifact.
    pub fn echo_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

/// Parse a TOML string, overlaying it on its named preset (if any).
pub fn parse_config(text: &str) -> Result<PipelineConfig, ConfigError> {
    let user: toml::Value =
        toml::from_str(text).map_err(|e| ConfigError::Toml(e.to_string()))?;
    let base = match user.get("preset").and_then(|v| v.as_str()) {
        Some(name) => PipelineConfig::preset(name)?,
        None => PipelineConfig::default(),
    };
    let base_value =
        toml::Value::try_from(&base).map_err(|e| ConfigError::Toml(e.to_string()))?;
    let merged = merge(base_value, user);
    let cfg: PipelineConfig =
        merged.try_into().map_err(|e: toml::de::Error| ConfigError::Toml(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Load and resolve a config file; `None` yields the defaults.
pub fn load_config(path: Option<&std::path::Path>) -> Result<PipelineConfig, ConfigError> {
    match path {
        Some(p) => parse_config(&std::fs::read_to_string(p)?),
        None => Ok(PipelineConfig::default()),
    }
}

/// Recursive overlay: tables merge key-wise, anything else is replaced.
fn merge(base: toml::Value, over: toml::Value) -> toml::Value {
    match (base, over) {
        (toml::Value::Table(mut b), toml::Value::Table(o)) => {
            for (k, v) in o {
                let merged = match b.remove(&k) {
                    Some(existing) => merge(existing, v),
                    None => v,
                };
                b.insert(k, merged);
            }
            toml::Value::Table(b)
        }
        (_, over) => over,
    }
}
