use super::AudioBuffer;
use crate::error::{Error, Result};

const KAISER_BETA: f64 = 8.0;
const ZERO_CROSSINGS: f64 = 16.0;
const ROLLOFF: f64 = 0.95;
const MAX_TABLE_PHASES: usize = 4096;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= (half / k as f64).powi(2);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

struct Kernel {
    cutoff: f64,
    half_width: f64,
    i0_beta: f64,
}

impl Kernel {
    fn new(up: u64, down: u64) -> Self {
        let cutoff = 0.5 * (up as f64 / down as f64).min(1.0) * ROLLOFF;
        Self {
            cutoff,
            half_width: ZERO_CROSSINGS / (2.0 * cutoff),
            i0_beta: bessel_i0(KAISER_BETA),
        }
    }

    fn value(&self, tau: f64) -> f64 {
        let r = tau / self.half_width;
        if r.abs() >= 1.0 {
            return 0.0;
        }
        let arg = 2.0 * self.cutoff * tau;
        let sinc = if arg.abs() < 1e-12 {
            1.0
        } else {
            (std::f64::consts::PI * arg).sin() / (std::f64::consts::PI * arg)
        };
        let window = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / self.i0_beta;
        2.0 * self.cutoff * sinc * window
    }

    /// Unity-gain taps for fractional offset `frac` in [0, 1); tap j applies
    /// to input index `base + j - reach + 1`.
    fn taps(&self, frac: f64, reach: i64) -> Vec<f64> {
        let mut taps: Vec<f64> = (-reach + 1..=reach)
            .map(|k| self.value(k as f64 - frac))
            .collect();
        let sum: f64 = taps.iter().sum();
        if sum.abs() > 0.0 {
            for t in &mut taps {
                *t /= sum;
            }
        }
        taps
    }
}

/// Band-limited rate conversion with a Kaiser-windowed sinc polyphase
/// filter. Output length is `round(len * target / source)`.
pub fn resample(audio: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer> {
    if target_rate == 0 {
        return Err(Error::OutOfRange("target sample rate must be positive".into()));
    }
    let source_rate = audio.sample_rate();
    if source_rate == target_rate {
        return Ok(audio.clone());
    }
    let g = gcd(source_rate as u64, target_rate as u64);
    let up = target_rate as u64 / g;
    let down = source_rate as u64 / g;
    let kernel = Kernel::new(up, down);
    let reach = kernel.half_width.ceil() as i64;

    let input = audio.samples();
    let out_len = ((input.len() as u64 * up) as f64 / down as f64).round() as usize;

    let table: Option<Vec<Vec<f64>>> = (up as usize <= MAX_TABLE_PHASES).then(|| {
        (0..up)
            .map(|p| kernel.taps(p as f64 / up as f64, reach))
            .collect()
    });

    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len as u64 {
        let pos = n * down;
        let base = (pos / up) as i64;
        let phase = pos % up;
        let owned;
        let taps = match &table {
            Some(t) => &t[phase as usize],
            None => {
                owned = kernel.taps(phase as f64 / up as f64, reach);
                &owned
            }
        };
        let first = base - reach + 1;
        let mut acc = 0.0;
        if first >= 0 && (first as usize + taps.len()) <= input.len() {
            let window = &input[first as usize..first as usize + taps.len()];
            for (x, h) in window.iter().zip(taps) {
                acc += x * h;
            }
        } else {
            for (j, h) in taps.iter().enumerate() {
                let idx = first + j as i64;
                if idx >= 0 && (idx as usize) < input.len() {
                    acc += input[idx as usize] * h;
                }
            }
        }
        out.push(acc);
    }
    AudioBuffer::new(out, target_rate)
}
