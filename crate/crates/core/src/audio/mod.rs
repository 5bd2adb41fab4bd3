//! Mono audio buffers and the signal-level operations the pipeline needs:
//! WAV I/O, resampling, repetition, truncation, mixing and removal attacks.

mod attack;
mod resample;
mod wav;

pub use attack::{apply_attack, AttackSpec};
pub use resample::resample;
pub use wav::{load_wav, store_wav, WavEncoding};

use crate::error::{Error, Result};

/// A mono sequence of finite samples at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidAudio("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidAudio(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate)
    }

    /// Builds a buffer from a closure over sample time in seconds.
    pub fn from_fn(len: usize, sample_rate: u32, f: impl Fn(f64) -> f64) -> Result<Self> {
        let sr = sample_rate as f64;
        Self::new((0..len).map(|n| f(n as f64 / sr)).collect(), sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Same rate, new samples. Re-validates finiteness.
    pub(crate) fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, self.sample_rate)
    }

    pub fn scaled(&self, gain: f64) -> Result<Self> {
        self.with_samples(self.samples.iter().map(|s| s * gain).collect())
    }
}

/// Concatenation of `times` copies of `audio`.
pub fn repeat(audio: &AudioBuffer, times: usize) -> Result<AudioBuffer> {
    if times == 0 {
        return Err(Error::OutOfRange("repeat count must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(audio.len() * times);
    for _ in 0..times {
        out.extend_from_slice(audio.samples());
    }
    Ok(AudioBuffer {
        samples: out,
        sample_rate: audio.sample_rate,
    })
}

/// The first `floor(seconds * sample_rate)` samples.
pub fn prefix(audio: &AudioBuffer, seconds: f64) -> Result<AudioBuffer> {
    if !(seconds > 0.0) || seconds > audio.duration_seconds() + 1e-12 {
        return Err(Error::OutOfRange(format!(
            "prefix of {seconds} s from {} s audio",
            audio.duration_seconds()
        )));
    }
    let n = ((seconds * audio.sample_rate as f64).floor() as usize).min(audio.len());
    Ok(AudioBuffer {
        samples: audio.samples[..n].to_vec(),
        sample_rate: audio.sample_rate,
    })
}

pub fn rms(audio: &AudioBuffer) -> Result<f64> {
    rms_of(audio.samples())
}

pub(crate) fn rms_of(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let energy: f64 = samples.iter().map(|s| s * s).sum();
    Ok((energy / samples.len() as f64).sqrt())
}

/// Elementwise sum. No clipping.
pub fn mix(a: &AudioBuffer, b: &AudioBuffer) -> Result<AudioBuffer> {
    if a.sample_rate != b.sample_rate {
        return Err(Error::RateMismatch {
            left: a.sample_rate,
            right: b.sample_rate,
        });
    }
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let samples = a.samples.iter().zip(&b.samples).map(|(x, y)| x + y).collect();
    a.with_samples(samples)
}
