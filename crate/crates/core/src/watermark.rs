//! Tone-family watermarks and k-fold composition over any embedder.
//!
//! Every tone is scaled by `strength * rms(input)`, with the RMS taken once
//! over the whole buffer handed to the embed call. Segment boundaries for
//! Switch, Alternate and Stop fall at `floor(t * sample_rate)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::{rms, AudioBuffer};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WatermarkKind {
    Tone,
    Switch,
    Alternate,
    Stop,
}

impl WatermarkKind {
    fn keyword(self) -> &'static str {
        match self {
            WatermarkKind::Tone => "tone",
            WatermarkKind::Switch => "switch",
            WatermarkKind::Alternate => "alternate",
            WatermarkKind::Stop => "stop",
        }
    }
}

fn default_strength() -> f64 {
    1.0
}

/// Declarative tone-family watermark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatermarkSpec {
    pub kind: WatermarkKind,
    pub f: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f2: Option<f64>,
    /// Segment duration in seconds; unused by `Tone`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    #[serde(default = "default_strength")]
    pub strength: f64,
    #[serde(default)]
    pub phase: f64,
}

impl WatermarkSpec {
    pub fn tone(f: f64) -> Self {
        Self {
            kind: WatermarkKind::Tone,
            f,
            f2: None,
            d: None,
            strength: 1.0,
            phase: 0.0,
        }
    }

    pub fn switch(f: f64, f2: f64, d: f64) -> Self {
        Self {
            kind: WatermarkKind::Switch,
            f2: Some(f2),
            d: Some(d),
            ..Self::tone(f)
        }
    }

    pub fn alternate(f: f64, f2: f64, d: f64) -> Self {
        Self {
            kind: WatermarkKind::Alternate,
            ..Self::switch(f, f2, d)
        }
    }

    pub fn stop(f: f64, d: f64) -> Self {
        Self {
            kind: WatermarkKind::Stop,
            d: Some(d),
            ..Self::tone(f)
        }
    }

    pub fn with_strength(mut self, strength: f64) -> Self {
        self.strength = strength;
        self
    }

    /// Checks the fields that do not depend on the audio.
    pub fn validate(&self) -> Result<()> {
        let needs_f2 = matches!(self.kind, WatermarkKind::Switch | WatermarkKind::Alternate);
        if needs_f2 != self.f2.is_some() {
            return Err(Error::InvalidSpec(format!(
                "{} watermark {} a second frequency",
                self.kind.keyword(),
                if needs_f2 { "requires" } else { "does not take" }
            )));
        }
        if !(self.f > 0.0 && self.f.is_finite()) {
            return Err(Error::InvalidSpec(format!("frequency {} must be positive", self.f)));
        }
        if let Some(f2) = self.f2 {
            if !(f2 > 0.0 && f2.is_finite()) {
                return Err(Error::InvalidSpec(format!("frequency {f2} must be positive")));
            }
        }
        if self.kind != WatermarkKind::Tone {
            match self.d {
                Some(d) if d > 0.0 && d.is_finite() => {}
                _ => {
                    return Err(Error::InvalidSpec(format!(
                        "{} watermark needs a positive duration d",
                        self.kind.keyword()
                    )))
                }
            }
        }
        if !(self.strength > 0.0 && self.strength.is_finite()) {
            return Err(Error::InvalidSpec(format!("strength {} must be positive", self.strength)));
        }
        if !self.phase.is_finite() {
            return Err(Error::InvalidSpec("phase must be finite".into()));
        }
        Ok(())
    }

    fn validate_for(&self, audio: &AudioBuffer) -> Result<()> {
        self.validate()?;
        let nyquist = audio.sample_rate() as f64 / 2.0;
        for f in std::iter::once(self.f).chain(self.f2) {
            if f >= nyquist {
                return Err(Error::InvalidSpec(format!(
                    "{f} Hz not below Nyquist ({nyquist} Hz)"
                )));
            }
        }
        if let (Some(d), true) = (self.d, self.kind != WatermarkKind::Tone) {
            if d >= audio.duration_seconds() {
                return Err(Error::InvalidSpec(format!(
                    "segment duration {d} s not shorter than the {} s audio",
                    audio.duration_seconds()
                )));
            }
        }
        Ok(())
    }

    /// Frequency whose presence marks a watermarked output: `f2` for the
    /// two-frequency kinds, `f` otherwise.
    pub fn secret_frequency(&self) -> f64 {
        self.f2.unwrap_or(self.f)
    }
}

/// Adds a phase-continuous piecewise-constant-frequency cosine to `audio`
/// over `[0, end)`. `segments` lists `(start_sample, frequency)` in order.
fn add_tone_segments(
    audio: &AudioBuffer,
    amplitude: f64,
    phase: f64,
    segments: &[(usize, f64)],
    end: usize,
) -> Result<AudioBuffer> {
    let sr = audio.sample_rate() as f64;
    let mut out = audio.samples().to_vec();
    let mut seg_phase = phase;
    for (i, &(start, freq)) in segments.iter().enumerate() {
        let stop = segments.get(i + 1).map_or(end, |s| s.0).min(end);
        let omega = std::f64::consts::TAU * freq / sr;
        for (k, x) in out[start..stop].iter_mut().enumerate() {
            *x += amplitude * (seg_phase + omega * k as f64).cos();
        }
        seg_phase += omega * (stop - start) as f64;
    }
    audio.with_samples(out)
}

fn boundary(seconds: f64, sample_rate: u32, len: usize) -> usize {
    ((seconds * sample_rate as f64).floor() as usize).min(len)
}

pub fn embed_tone(audio: &AudioBuffer, spec: &WatermarkSpec) -> Result<AudioBuffer> {
    expect_kind(spec, WatermarkKind::Tone)?;
    embed(audio, spec)
}

pub fn embed_switch(audio: &AudioBuffer, spec: &WatermarkSpec) -> Result<AudioBuffer> {
    expect_kind(spec, WatermarkKind::Switch)?;
    embed(audio, spec)
}

pub fn embed_alternate(audio: &AudioBuffer, spec: &WatermarkSpec) -> Result<AudioBuffer> {
    expect_kind(spec, WatermarkKind::Alternate)?;
    embed(audio, spec)
}

pub fn embed_stop(audio: &AudioBuffer, spec: &WatermarkSpec) -> Result<AudioBuffer> {
    expect_kind(spec, WatermarkKind::Stop)?;
    embed(audio, spec)
}

fn expect_kind(spec: &WatermarkSpec, kind: WatermarkKind) -> Result<()> {
    if spec.kind != kind {
        return Err(Error::InvalidSpec(format!(
            "expected a {} spec, got {}",
            kind.keyword(),
            spec.kind.keyword()
        )));
    }
    Ok(())
}

/// Embeds any tone-family spec.
pub fn embed(audio: &AudioBuffer, spec: &WatermarkSpec) -> Result<AudioBuffer> {
    spec.validate_for(audio)?;
    let level = if audio.is_empty() { 0.0 } else { rms(audio)? };
    if level == 0.0 {
        // Silent input: the RMS-scaled tone vanishes.
        return Ok(audio.clone());
    }
    let amplitude = spec.strength * level;
    let sr = audio.sample_rate();
    let len = audio.len();
    match spec.kind {
        WatermarkKind::Tone => add_tone_segments(audio, amplitude, spec.phase, &[(0, spec.f)], len),
        WatermarkKind::Switch => {
            let cut = boundary(spec.d.unwrap(), sr, len);
            let f2 = spec.f2.unwrap();
            add_tone_segments(audio, amplitude, spec.phase, &[(0, spec.f), (cut, f2)], len)
        }
        WatermarkKind::Alternate => {
            let d = spec.d.unwrap();
            let f2 = spec.f2.unwrap();
            let mut segments = Vec::new();
            let mut i = 0usize;
            loop {
                let start = boundary(i as f64 * d, sr, len);
                if start >= len {
                    break;
                }
                segments.push((start, if i % 2 == 0 { spec.f } else { f2 }));
                i += 1;
            }
            add_tone_segments(audio, amplitude, spec.phase, &segments, len)
        }
        WatermarkKind::Stop => {
            let cut = boundary(spec.d.unwrap(), sr, len);
            add_tone_segments(audio, amplitude, spec.phase, &[(0, spec.f)], cut)
        }
    }
}

/// Something that marks audio, preserving its length and sample rate.
pub trait Embedder: Send + Sync {
    fn embed(&self, audio: &AudioBuffer) -> Result<AudioBuffer>;
    fn name(&self) -> String;
}

impl Embedder for WatermarkSpec {
    fn embed(&self, audio: &AudioBuffer) -> Result<AudioBuffer> {
        embed(audio, self)
    }

    fn name(&self) -> String {
        self.to_string()
    }
}

/// `k`-fold composition of `embedder`; `k = 0` is the identity.
pub fn multi_apply<E: Embedder + ?Sized>(embedder: &E, audio: &AudioBuffer, k: usize) -> Result<AudioBuffer> {
    let mut current = audio.clone();
    for _ in 0..k {
        current = embedder.embed(&current)?;
    }
    Ok(current)
}

fn default_times() -> usize {
    1
}

/// A tone-family spec applied `times` times in sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposedWatermark {
    #[serde(flatten)]
    pub spec: WatermarkSpec,
    #[serde(default = "default_times")]
    pub times: usize,
}

impl ComposedWatermark {
    pub fn once(spec: WatermarkSpec) -> Self {
        Self { spec, times: 1 }
    }
}

impl Embedder for ComposedWatermark {
    fn embed(&self, audio: &AudioBuffer) -> Result<AudioBuffer> {
        multi_apply(&self.spec, audio, self.times)
    }

    fn name(&self) -> String {
        if self.times == 1 {
            self.spec.to_string()
        } else {
            format!("{}x{}", self.spec, self.times)
        }
    }
}

fn fmt_num(x: f64) -> String {
    format!("{x}")
}

impl fmt::Display for WatermarkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = format!("{}:{}", self.kind.keyword(), fmt_num(self.f));
        if let Some(f2) = self.f2 {
            s.push(':');
            s.push_str(&fmt_num(f2));
        }
        if let (Some(d), true) = (self.d, self.kind != WatermarkKind::Tone) {
            s.push(':');
            s.push_str(&fmt_num(d));
        }
        f.write_str(&s)
    }
}

/// Error from parsing the `kind:f[:f2][:d]` shorthand.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("watermark shorthand {input:?}: token {token:?} at position {position}: {reason}")]
pub struct ShorthandError {
    pub input: String,
    pub token: String,
    pub position: usize,
    pub reason: String,
}

impl FromStr for WatermarkSpec {
    type Err = ShorthandError;

    /// Accepts `tone:440`, `switch:440:880:5`, `alternate:440:880:2`, `stop:440:5`.
    fn from_str(s: &str) -> Result<Self, ShorthandError> {
        let tokens: Vec<&str> = s.split(':').collect();
        let fail = |position: usize, reason: &str| ShorthandError {
            input: s.to_string(),
            token: tokens.get(position).copied().unwrap_or("").to_string(),
            position,
            reason: reason.to_string(),
        };
        let kind = match tokens[0] {
            "tone" => WatermarkKind::Tone,
            "switch" => WatermarkKind::Switch,
            "alternate" => WatermarkKind::Alternate,
            "stop" => WatermarkKind::Stop,
            _ => return Err(fail(0, "unknown watermark kind (tone, switch, alternate, stop)")),
        };
        let expected = match kind {
            WatermarkKind::Tone => 2,
            WatermarkKind::Stop => 3,
            WatermarkKind::Switch | WatermarkKind::Alternate => 4,
        };
        if tokens.len() != expected {
            let pos = tokens.len().min(expected);
            return Err(fail(pos, &format!("expected {} fields after the kind", expected - 1)));
        }
        let num = |i: usize| -> Result<f64, ShorthandError> {
            tokens[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v > 0.0)
                .ok_or_else(|| fail(i, "expected a positive number"))
        };
        let spec = match kind {
            WatermarkKind::Tone => WatermarkSpec::tone(num(1)?),
            WatermarkKind::Stop => WatermarkSpec::stop(num(1)?, num(2)?),
            WatermarkKind::Switch => WatermarkSpec::switch(num(1)?, num(2)?, num(3)?),
            WatermarkKind::Alternate => WatermarkSpec::alternate(num(1)?, num(2)?, num(3)?),
        };
        Ok(spec)
    }
}
