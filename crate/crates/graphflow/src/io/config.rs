//! One text document configuring a whole run. Every field has a default, so
//! an empty file is a valid config; unknown keys are rejected at parse time,
//! before any computation starts.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::branches::{ShapeCodecConfig, TextureCodecConfig};
use crate::eval::RuleThresholds;
use crate::flow::{SampleConfig, TrainConfig};
use crate::graph::OracleConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Adds self-attention between node states inside the denoiser.
    pub attention: bool,
    /// Seed for parameter initialisation.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { attention: false, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub oracle: OracleConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sample: SampleConfig,
    pub eval: RuleThresholds,
    pub shape_codec: ShapeCodecConfig,
    pub texture_codec: TextureCodecConfig,
}

impl RunConfig {
    /// Stable serialized form; equal configs produce equal text.
    pub fn canonical_text(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_yields_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.train.steps, 2000);
        assert_eq!(cfg.sample.steps, 25);
        assert_eq!(cfg.sample.guidance, 5.0);
        assert!(!cfg.model.attention);
    }

    #[test]
    fn partial_overrides_keep_other_defaults() {
        let cfg = parse_config("[train]\nsteps = 7\n\n[model]\nattention = true\n").unwrap();
        assert_eq!(cfg.train.steps, 7);
        assert_eq!(cfg.train.batch, TrainConfig::default().batch);
        assert!(cfg.model.attention);
        assert_eq!(cfg.oracle, OracleConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["wat = 1\n", "[train]\nstep_count = 7\n", "[oracle]\ncats = []\n"] {
            let err = parse_config(text).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{text:?} gave {err}");
        }
    }

    #[test]
    fn canonical_text_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.train.steps = 123;
        cfg.sample.guidance = 2.5;
        cfg.oracle.categories = vec!["bed".into(), "desk".into()];
        let text = cfg.canonical_text();
        let back = parse_config(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.canonical_text(), text);
    }

    #[test]
    fn file_loading_names_missing_path() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_config(&dir.path().join("gone.toml")).unwrap_err();
        assert!(err.to_string().contains("gone.toml"));
    }
}
