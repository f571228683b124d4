use super::HarnessError;
use crate::backend::{BackendConfig, GenerationParams, RetryPolicy};
use crate::dataset::FieldMap;
use crate::eco::ProbeConfig;
use crate::embedding::EmbedderConfig;
use crate::metrics::MetricConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "zero-shot", alias = "zero_shot", alias = "zeroshot")]
    ZeroShot,
    #[serde(rename = "ekb")]
    Ekb,
    #[serde(rename = "nkb")]
    Nkb,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::ZeroShot, Mode::Ekb, Mode::Nkb];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::ZeroShot => "zero-shot",
            Mode::Ekb => "ekb",
            Mode::Nkb => "nkb",
        }
    }

    pub fn needs_index(self) -> bool {
        !matches!(self, Mode::ZeroShot)
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "zero-shot" | "zeroshot" => Ok(Mode::ZeroShot),
            "ekb" => Ok(Mode::Ekb),
            "nkb" => Ok(Mode::Nkb),
            other => Err(HarnessError::Config(format!(
                "unknown mode `{other}` (expected zero-shot, ekb or nkb)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Clock {
    /// Measure wall time and sample probes while requests run.
    Wall,
    /// Every request takes `simulated_latency_s`; energy is read from the
    /// probes over that span starting at t = 0. Deterministic.
    Simulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyConfig {
    /// kg CO₂eq per kWh. Required for a run.
    pub intensity: Option<f64>,
    pub region: String,
    pub interval_s: f64,
    pub clock: Clock,
    pub simulated_latency_s: f64,
    pub probes: Vec<ProbeConfig>,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            intensity: None,
            region: "unspecified".into(),
            interval_s: 1.0,
            clock: Clock::Wall,
            simulated_latency_s: 1.0,
            probes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringConfig {
    #[serde(flatten)]
    pub metrics: MetricConfig,
    /// Token embedder for BERTScore.
    pub bert_embedder: EmbedderConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub mode: Mode,
    pub model_label: String,
    pub k: usize,
    pub seed: u64,
    pub template_version: String,
    /// Generation budget per item in nKB mode.
    pub max_steps: usize,
    pub tool_name: String,
    /// Opening and closing tags of reasoning blocks to strip from answers.
    pub reasoning_tags: Option<(String, String)>,
    pub index: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub fields: FieldMap,
    pub backend: BackendConfig,
    pub generation: GenerationParams,
    pub retry: RetryPolicy,
    /// Retrieval embedder; must match the one the index was built with.
    pub embedder: EmbedderConfig,
    pub scoring: ScoringConfig,
    pub energy: EnergyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::ZeroShot,
            model_label: "model".into(),
            k: 3,
            seed: 0,
            template_version: "v1".into(),
            max_steps: 4,
            tool_name: crate::retrieval::DEFAULT_TOOL_NAME.into(),
            reasoning_tags: None,
            index: None,
            dataset: None,
            output_dir: None,
            fields: FieldMap::default(),
            backend: BackendConfig::default(),
            generation: GenerationParams::default(),
            retry: RetryPolicy::default(),
            embedder: EmbedderConfig::default(),
            scoring: ScoringConfig::default(),
            energy: EnergyConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parse TOML or JSON, chosen by file extension (`.json` is JSON,
    /// anything else TOML).
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg: RunConfig = if is_json {
            serde_json::from_str(&text)
                .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text)
                .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |m: String| Err(HarnessError::Config(m));
        match (self.mode.needs_index(), &self.index) {
            (true, None) => return err(format!("mode {} requires `index`", self.mode)),
            (false, Some(p)) => {
                return err(format!(
                    "mode zero-shot forbids an index (got {})",
                    p.display()
                ))
            }
            _ => {}
        }
        if self.k == 0 {
            return err("k must be at least 1".into());
        }
        if self.max_steps == 0 {
            return err("max_steps must be at least 1".into());
        }
        if self.model_label.trim().is_empty() {
            return err("model_label must not be empty".into());
        }
        match self.energy.intensity {
            None => return err("energy.intensity (kg CO2eq per kWh) is required".into()),
            Some(i) => {
                crate::eco::check_intensity(i).map_err(|e| HarnessError::Config(e.to_string()))?
            }
        }
        if self.energy.probes.is_empty() {
            return err("energy.probes must list at least one power probe".into());
        }
        if self.energy.interval_s.is_nan() || self.energy.interval_s <= 0.0 {
            return err("energy.interval_s must be positive".into());
        }
        if self.energy.clock == Clock::Simulated
            && (self.energy.simulated_latency_s.is_nan() || self.energy.simulated_latency_s < 0.0)
        {
            return err("energy.simulated_latency_s must be >= 0".into());
        }
        Ok(())
    }

    /// Stable hash of the configuration, used to tie a journal to its run.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}
