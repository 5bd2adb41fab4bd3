use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::corpus::SyntheticCorpus;
use crate::detect::{Detector, MelParams};
use crate::error::{Error, Result};
use crate::spectral::frame_count;
use crate::toygen::KMeansOptions;
use crate::watermark::{ComposedWatermark, WatermarkSpec};

pub const MANIFEST_VERSION: u32 = 1;

fn version() -> u32 {
    MANIFEST_VERSION
}
fn half() -> f64 {
    0.5
}
fn five() -> f64 {
    5.0
}
fn ten() -> f64 {
    10.0
}
fn two_hundred() -> usize {
    200
}
fn one() -> usize {
    1
}
fn three() -> usize {
    3
}
fn yes() -> bool {
    true
}
fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}
fn target_rate() -> u32 {
    32_000
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationSettings {
    pub top_k: usize,
    pub temperature: f64,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self {
            top_k: 250,
            temperature: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train_frac: f64,
    pub test_count: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_frac: 0.8,
            test_count: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecConfig {
    pub k: usize,
    pub n_mels: usize,
    pub n_fft: usize,
    pub hop: usize,
    pub iterations: usize,
    pub max_training_frames: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        let mel = MelParams::default();
        let km = KMeansOptions::default();
        Self {
            k: 256,
            n_mels: mel.n_mels,
            n_fft: mel.n_fft,
            hop: mel.hop,
            iterations: km.iterations,
            max_training_frames: km.max_frames,
        }
    }
}

impl CodecConfig {
    pub fn features(&self) -> MelParams {
        MelParams {
            n_mels: self.n_mels,
            n_fft: self.n_fft,
            hop: self.hop,
        }
    }

    pub fn kmeans(&self) -> KMeansOptions {
        KMeansOptions {
            iterations: self.iterations,
            max_frames: self.max_training_frames,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub order: usize,
    pub smoothing: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            order: 3,
            smoothing: 0.01,
        }
    }
}

/// Declarative description of one attribution experiment.
///
/// Omitted fields take their defaults, so a minimal manifest names a
/// dataset and a watermark. `prompt_watermark` overrides the mark applied
/// to prompts; `detector` overrides the spec that picks the scoring band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    #[serde(default = "version")]
    pub format_version: u32,
    #[serde(default)]
    pub dataset_dir: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticCorpus>,
    #[serde(default)]
    pub watermark: Option<ComposedWatermark>,
    #[serde(default = "yes")]
    pub watermark_prompts: bool,
    #[serde(default)]
    pub prompt_watermark: Option<ComposedWatermark>,
    #[serde(default)]
    pub detector: Option<WatermarkSpec>,
    #[serde(default = "half")]
    pub proportion_p: f64,
    #[serde(default = "five")]
    pub prompt_seconds: f64,
    #[serde(default = "ten")]
    pub continuation_seconds: f64,
    #[serde(default = "two_hundred")]
    pub n_prompts: usize,
    #[serde(default = "one")]
    pub continuations_per_prompt: usize,
    #[serde(default)]
    pub generation: GenerationSettings,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default = "target_rate")]
    pub target_sample_rate: u32,
    #[serde(default = "three")]
    pub repeat_times: usize,
    #[serde(default)]
    pub codec: CodecConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub detector_params: MelParams,
    #[serde(default)]
    pub utility_metrics: bool,
}

impl ExperimentManifest {
    /// Manifest over the bundled synthetic corpus with every other field
    /// at its default.
    pub fn synthetic(watermark: Option<ComposedWatermark>) -> Self {
        Self {
            format_version: MANIFEST_VERSION,
            dataset_dir: None,
            synthetic: Some(SyntheticCorpus::default()),
            watermark,
            watermark_prompts: true,
            prompt_watermark: None,
            detector: None,
            proportion_p: half(),
            prompt_seconds: five(),
            continuation_seconds: ten(),
            n_prompts: two_hundred(),
            continuations_per_prompt: 1,
            generation: GenerationSettings::default(),
            seeds: default_seeds(),
            split: SplitConfig::default(),
            target_sample_rate: target_rate(),
            repeat_times: three(),
            codec: CodecConfig::default(),
            model: ModelConfig::default(),
            detector_params: MelParams::default(),
            utility_metrics: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m = Self::from_json(&text)?;
        if let (Some(dir), Some(base)) = (&m.dataset_dir, path.parent()) {
            if dir.is_relative() {
                m.dataset_dir = Some(base.join(dir));
            }
        }
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.format_version != MANIFEST_VERSION {
            return bad(format!("unsupported manifest format_version {}", self.format_version));
        }
        match (&self.dataset_dir, &self.synthetic) {
            (Some(_), Some(_)) => return bad("dataset_dir and synthetic are mutually exclusive".into()),
            (None, None) => return bad("manifest needs dataset_dir or synthetic".into()),
            _ => {}
        }
        if !(self.proportion_p > 0.0 && self.proportion_p <= 1.0) {
            return bad(format!("proportion_p must lie in (0, 1], got {}", self.proportion_p));
        }
        if self.n_prompts < 2 {
            return bad(format!("n_prompts must be at least 2, got {}", self.n_prompts));
        }
        if self.continuations_per_prompt == 0 {
            return bad("continuations_per_prompt must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must be nonempty".into());
        }
        if !(self.split.train_frac > 0.0 && self.split.train_frac < 1.0) {
            return bad(format!("split.train_frac must lie in (0, 1), got {}", self.split.train_frac));
        }
        if self.repeat_times == 0 {
            return bad("repeat_times must be positive".into());
        }
        if !(self.prompt_seconds > 0.0 && self.prompt_seconds.is_finite()) {
            return bad(format!("prompt_seconds must be positive, got {}", self.prompt_seconds));
        }
        if self.continuation_tokens() == 0 {
            return bad(format!(
                "continuation_seconds {} is shorter than one analysis frame",
                self.continuation_seconds
            ));
        }
        if self.model.order == 0 {
            return bad("model.order must be at least 1".into());
        }
        if self.generation.top_k == 0 {
            return bad("generation.top_k must be positive".into());
        }
        for wm in [&self.watermark, &self.prompt_watermark].into_iter().flatten() {
            wm.spec.validate()?;
        }
        Detector::for_spec(
            &self.detector_spec()?,
            self.detector_params,
            self.target_sample_rate,
            self.prompt_seconds,
        )?;
        Ok(())
    }

    /// Mark applied to prompts, if any.
    pub fn prompt_mark(&self) -> Option<&ComposedWatermark> {
        if !self.watermark_prompts {
            return None;
        }
        self.prompt_watermark.as_ref().or(self.watermark.as_ref())
    }

    /// Spec that determines the detector band and rule.
    pub fn detector_spec(&self) -> Result<WatermarkSpec> {
        self.detector
            .clone()
            .or_else(|| self.prompt_mark().map(|w| w.spec.clone()))
            .or_else(|| self.watermark.as_ref().map(|w| w.spec.clone()))
            .ok_or_else(|| Error::Config("no watermark and no detector given".into()))
    }

    /// Tokens whose decoding spans `continuation_seconds`.
    pub fn continuation_tokens(&self) -> usize {
        let samples = (self.continuation_seconds * self.target_sample_rate as f64).round();
        if !(samples.is_finite() && samples > 0.0) {
            return 0;
        }
        frame_count(samples as usize, self.codec.n_fft, self.codec.hop)
    }

    /// Name used in reports.
    pub fn label(&self) -> String {
        use crate::watermark::Embedder;
        match &self.watermark {
            Some(w) => w.name(),
            None => "none".into(),
        }
    }

    /// Canonical JSON: defaults filled in, keys sorted.
    pub fn canonical_json(&self) -> Result<String> {
        let value = serde_json::to_value(self)?;
        Ok(serde_json::to_string(&value)?)
    }

    /// SHA-256 of [`Self::canonical_json`], hex encoded.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.canonical_json()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}
