//! Layered settings: built-in defaults, then the TOML file, then flags.

use std::path::Path;

use anyhow::Context;
use dolphin_core::biasing::{ScoreScale, DEFAULT_FILTER_THRESHOLD, DEFAULT_PROMPT_THRESHOLD};
use dolphin_core::datapipe::DEFAULT_MAX_DURATION_S;
use dolphin_core::decoder::{DEFAULT_BEAM, DEFAULT_CTC_WEIGHT, DEFAULT_LAMBDA};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub pipe: PipeSection,
    pub sample: SampleSection,
    pub bias: BiasSection,
    pub decode: DecodeSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipeSection {
    pub max_duration_s: f64,
    pub shard_size: usize,
    pub readers: usize,
}

impl Default for PipeSection {
    fn default() -> Self {
        Self { max_duration_s: DEFAULT_MAX_DURATION_S, shard_size: 1000, readers: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    pub alpha: f64,
    /// Weight datasets by total hours instead of utterance count.
    pub hours: bool,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self { alpha: 0.5, hours: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasSection {
    pub psc_threshold: f64,
    pub soc_threshold: f64,
    pub prompt_threshold: f64,
    pub scale: ScoreScale,
    pub distractors: usize,
    /// Special token placed between prompt phrases, if any.
    pub separator: Option<String>,
}

impl Default for BiasSection {
    fn default() -> Self {
        Self {
            psc_threshold: DEFAULT_FILTER_THRESHOLD,
            soc_threshold: DEFAULT_FILTER_THRESHOLD,
            prompt_threshold: DEFAULT_PROMPT_THRESHOLD,
            scale: ScoreScale::PerToken,
            distractors: 5,
            separator: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSection {
    pub beam: usize,
    pub lambda: f64,
    pub ctc_weight: f64,
    pub prompt_bonus: f64,
}

impl Default for DecodeSection {
    fn default() -> Self {
        Self { beam: DEFAULT_BEAM, lambda: DEFAULT_LAMBDA, ctc_weight: DEFAULT_CTC_WEIGHT, prompt_bonus: 2.0 }
    }
}

impl Config {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}
