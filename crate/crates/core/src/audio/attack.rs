use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{rms_of, AudioBuffer};
use crate::error::{Error, Result};
use crate::rng;

/// A signal-level transformation that may weaken or remove a watermark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackSpec {
    HighPass { cutoff_hz: f64 },
    LowPass { cutoff_hz: f64 },
    Quantize { bits: u32 },
    AddNoise { snr_db: f64, seed: u64 },
}

impl AttackSpec {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyquist = sample_rate as f64 / 2.0;
        match *self {
            AttackSpec::HighPass { cutoff_hz } | AttackSpec::LowPass { cutoff_hz } => {
                if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
                    return Err(Error::InvalidAttackParams(format!(
                        "cutoff {cutoff_hz} Hz outside (0, {nyquist})"
                    )));
                }
            }
            AttackSpec::Quantize { bits } => {
                if !(2..=16).contains(&bits) {
                    return Err(Error::InvalidAttackParams(format!(
                        "{bits} bits outside [2, 16]"
                    )));
                }
            }
            AttackSpec::AddNoise { snr_db, .. } => {
                if !snr_db.is_finite() {
                    return Err(Error::InvalidAttackParams("snr_db must be finite".into()));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for AttackSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttackSpec::HighPass { cutoff_hz } => write!(f, "highpass:{cutoff_hz}"),
            AttackSpec::LowPass { cutoff_hz } => write!(f, "lowpass:{cutoff_hz}"),
            AttackSpec::Quantize { bits } => write!(f, "quantize:{bits}"),
            AttackSpec::AddNoise { snr_db, seed } => write!(f, "noise:{snr_db}:{seed}"),
        }
    }
}

impl FromStr for AttackSpec {
    type Err = Error;

    /// Parses `highpass:30`, `lowpass:8000`, `quantize:8` or `noise:40:SEED`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = |i: usize, what: &str| {
            Error::InvalidAttackParams(format!(
                "token {:?} at position {i}: {what}",
                parts.get(i).copied().unwrap_or("")
            ))
        };
        let num = |i: usize| -> Result<f64> {
            parts
                .get(i)
                .ok_or_else(|| bad(i, "missing value"))?
                .parse::<f64>()
                .map_err(|_| bad(i, "expected a number"))
        };
        let arity = |n: usize| -> Result<()> {
            if parts.len() == n {
                Ok(())
            } else {
                Err(bad(n.min(parts.len()), &format!("expected {} fields", n)))
            }
        };
        match parts[0] {
            "highpass" => {
                arity(2)?;
                Ok(AttackSpec::HighPass { cutoff_hz: num(1)? })
            }
            "lowpass" => {
                arity(2)?;
                Ok(AttackSpec::LowPass { cutoff_hz: num(1)? })
            }
            "quantize" => {
                arity(2)?;
                let bits = parts[1].parse::<u32>().map_err(|_| bad(1, "expected an integer"))?;
                Ok(AttackSpec::Quantize { bits })
            }
            "noise" => {
                arity(3)?;
                let seed = parts[2].parse::<u64>().map_err(|_| bad(2, "expected an integer seed"))?;
                Ok(AttackSpec::AddNoise {
                    snr_db: num(1)?,
                    seed,
                })
            }
            _ => Err(bad(0, "unknown attack kind")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
}

impl Biquad {
    /// Second-order Butterworth section (Q = 1/sqrt 2) via the bilinear transform.
    fn butterworth(cutoff: f64, sample_rate: f64, high_pass: bool) -> Self {
        let w0 = std::f64::consts::TAU * cutoff / sample_rate;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * std::f64::consts::FRAC_1_SQRT_2);
        let a0 = 1.0 + alpha;
        let (b0, b1, b2) = if high_pass {
            ((1.0 + cos) / 2.0, -(1.0 + cos), (1.0 + cos) / 2.0)
        } else {
            ((1.0 - cos) / 2.0, 1.0 - cos, (1.0 - cos) / 2.0)
        };
        Self {
            b0: b0 / a0,
            b1: b1 / a0,
            b2: b2 / a0,
            a1: -2.0 * cos / a0,
            a2: (1.0 - alpha) / a0,
        }
    }

    fn run(&self, input: &[f64]) -> Vec<f64> {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        input
            .iter()
            .map(|&x| {
                let y = self.b0 * x + self.b1 * x1 + self.b2 * x2 - self.a1 * y1 - self.a2 * y2;
                x2 = x1;
                x1 = x;
                y2 = y1;
                y1 = y;
                y
            })
            .collect()
    }

    #[cfg(test)]
    fn magnitude(&self, freq: f64, sample_rate: f64) -> f64 {
        use rustfft::num_complex::Complex;
        let z1 = Complex::from_polar(1.0, -std::f64::consts::TAU * freq / sample_rate);
        let z2 = z1 * z1;
        let num = self.b0 + z1 * self.b1 + z2 * self.b2;
        let den = 1.0 + z1 * self.a1 + z2 * self.a2;
        (num / den).norm()
    }
}

/// Uniform mid-rise quantizer with `2^bits` levels spanning [-1, 1].
fn quantize(x: f64, bits: u32) -> f64 {
    let levels = (1u64 << bits) as f64;
    let step = 2.0 / levels;
    let index = ((x + 1.0) / step).floor().clamp(0.0, levels - 1.0);
    -1.0 + (index + 0.5) * step
}

pub fn apply_attack(audio: &AudioBuffer, attack: &AttackSpec) -> Result<AudioBuffer> {
    attack.validate(audio.sample_rate())?;
    let sr = audio.sample_rate() as f64;
    let samples = match *attack {
        AttackSpec::HighPass { cutoff_hz } => {
            Biquad::butterworth(cutoff_hz, sr, true).run(audio.samples())
        }
        AttackSpec::LowPass { cutoff_hz } => {
            Biquad::butterworth(cutoff_hz, sr, false).run(audio.samples())
        }
        AttackSpec::Quantize { bits } => audio.samples().iter().map(|&x| quantize(x, bits)).collect(),
        AttackSpec::AddNoise { snr_db, seed } => {
            let signal_power = if audio.is_empty() {
                0.0
            } else {
                rms_of(audio.samples())?.powi(2)
            };
            let sigma = (signal_power / 10f64.powf(snr_db / 10.0)).sqrt();
            let mut rng = rng::seeded(seed);
            audio
                .samples()
                .iter()
                .map(|&x| x + sigma * rng::standard_normal(&mut rng))
                .collect()
        }
    };
    audio.with_samples(samples)
}
