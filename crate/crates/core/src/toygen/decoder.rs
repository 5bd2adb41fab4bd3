//! Token-to-audio synthesis.
//!
//! Each token renders as a sum of cosines on FFT bin frequencies, with
//! phase tied to absolute time so consecutive grains of one token add up to
//! a continuous sinusoid. The chosen bins sit at least three apart: the Hann
//! window spreads an on-bin cosine over its neighbours only, so the
//! contributions never overlap and every frame of a held token has the same
//! power spectrum. Per-bin powers are fitted so that this spectrum, seen
//! through the mel filterbank, approximates the token's centroid.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::FeatureParams;
use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::spectral::{Matrix, MelFilterbank, PowerSpectrum, Window};

const FIT_ITERATIONS: usize = 200;
const MIN_BIN_SPACING: usize = 3;

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn check_framing(n_fft: usize, hop: usize) -> Result<()> {
    if hop == 0 || n_fft % hop != 0 || n_fft / hop < 2 {
        return Err(Error::Config(format!(
            "decoder needs a hop dividing n_fft/2 (n_fft {n_fft}, hop {hop})"
        )));
    }
    Ok(())
}

/// Sparse `(band, weight)` response of each bin's unit cosine.
type Response = Vec<Vec<(usize, f64)>>;

/// Multiplicative updates towards the KL-optimal nonnegative `q` with
/// `response * q ≈ target`, touching only `active` bins.
fn fit(response: &Response, col_sums: &[f64], target: &[f64], q: &mut [f64], active: &[usize]) {
    let mut model = vec![0.0; target.len()];
    for _ in 0..FIT_ITERATIONS {
        model.iter_mut().for_each(|m| *m = 0.0);
        for &k in active {
            for &(b, w) in &response[k] {
                model[b] += w * q[k];
            }
        }
        for &k in active {
            if q[k] == 0.0 {
                continue;
            }
            let ratio: f64 = response[k]
                .iter()
                .map(|&(b, w)| if model[b] > 0.0 { w * target[b] / model[b] } else { 0.0 })
                .sum();
            q[k] *= ratio / col_sums[k];
        }
    }
}

/// Strongest bins first, dropping any within `MIN_BIN_SPACING - 1` of a
/// bin already kept.
fn spaced_support(q: &[f64]) -> Vec<usize> {
    let peak = q.iter().fold(0.0f64, |m, &v| m.max(v));
    let mut order: Vec<usize> = (0..q.len()).filter(|&k| q[k] > peak * 1e-9).collect();
    order.sort_by(|&a, &b| q[b].total_cmp(&q[a]).then(a.cmp(&b)));
    let mut taken = vec![false; q.len()];
    let mut kept = Vec::new();
    for k in order {
        let lo = k.saturating_sub(MIN_BIN_SPACING - 1);
        let hi = (k + MIN_BIN_SPACING - 1).min(q.len() - 1);
        if (lo..=hi).any(|j| taken[j]) {
            continue;
        }
        taken[k] = true;
        kept.push(k);
    }
    kept.sort_unstable();
    kept
}

#[derive(Debug)]
pub(crate) struct Synthesizer {
    n_fft: usize,
    hop: usize,
    /// Squared cosine amplitude per token and FFT bin.
    powers: Matrix,
    /// `grains[token][phase]`; a frame starting at sample `j * hop` uses
    /// phase `j % grains[token].len()`.
    grains: Vec<Vec<Vec<f64>>>,
}

impl Synthesizer {
    /// Fits bin powers to each centroid's band powers `exp(x) - 1`.
    pub(crate) fn calibrate(centroids: &Matrix, fb: &MelFilterbank, hop: usize) -> Result<Self> {
        let n = fb.n_fft();
        check_framing(n, hop)?;
        let response = bin_response(fb)?;
        let col_sums: Vec<f64> = response
            .iter()
            .map(|col| col.iter().map(|(_, w)| w).sum())
            .collect();
        let all: Vec<usize> = (0..response.len()).filter(|&k| col_sums[k] > 0.0).collect();
        let mass: f64 = col_sums.iter().sum();
        let mut powers = Matrix::zeros(centroids.rows(), response.len());
        for (t, c) in centroids.iter_rows().enumerate() {
            let target: Vec<f64> = c.iter().map(|x| x.exp_m1().max(0.0)).collect();
            let total: f64 = target.iter().sum();
            if total <= 0.0 {
                continue;
            }
            let mut q = vec![0.0; response.len()];
            for &k in &all {
                q[k] = total / mass;
            }
            fit(&response, &col_sums, &target, &mut q, &all);
            let support = spaced_support(&q);
            let mut sparse = vec![0.0; q.len()];
            for &k in &support {
                sparse[k] = q[k];
            }
            fit(&response, &col_sums, &target, &mut sparse, &support);
            powers.row_mut(t).copy_from_slice(&sparse);
        }
        Self::build(powers, n, hop)
    }

    pub(crate) fn from_powers(powers: Matrix, params: FeatureParams) -> Result<Self> {
        check_framing(params.n_fft, params.hop)?;
        if powers.cols() != params.n_fft / 2 + 1 {
            return Err(Error::CorruptFile(format!(
                "decoder table has {} bins, expected {}",
                powers.cols(),
                params.n_fft / 2 + 1
            )));
        }
        if powers.as_slice().iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::CorruptFile("decoder powers must be finite and nonnegative".into()));
        }
        Self::build(powers, params.n_fft, params.hop)
    }

    fn build(powers: Matrix, n: usize, hop: usize) -> Result<Self> {
        let phases = n / gcd(n, hop);
        let window = Window::Hann.coefficients(n);
        // Overlap-added Hann windows sum to n / (2 hop).
        let norm = 2.0 * hop as f64 / n as f64;
        let ifft = FftPlanner::new().plan_fft_inverse(n);
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let grains = powers
            .iter_rows()
            .map(|q| {
                (0..phases)
                    .map(|p| {
                        buf.iter_mut().for_each(|z| *z = Complex::new(0.0, 0.0));
                        let offset = (p * hop) % n;
                        for (k, &power) in q.iter().enumerate() {
                            if power == 0.0 {
                                continue;
                            }
                            let a = power.sqrt();
                            let theta = std::f64::consts::TAU * ((k * offset) % n) as f64 / n as f64;
                            let z = Complex::from_polar(a, theta);
                            if k == 0 || 2 * k == n {
                                buf[k] += Complex::new(z.re, 0.0);
                            } else {
                                buf[k] += z * 0.5;
                                buf[n - k] += z.conj() * 0.5;
                            }
                        }
                        ifft.process(&mut buf);
                        buf.iter().zip(&window).map(|(z, w)| z.re * w * norm).collect()
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            n_fft: n,
            hop,
            powers,
            grains,
        })
    }

    pub(crate) fn powers(&self) -> &Matrix {
        &self.powers
    }

    /// Overlap-adds one grain per token; `T` tokens give
    /// `(T - 1) * hop + n_fft` samples.
    pub(crate) fn decode(&self, tokens: &[u32], sample_rate: u32) -> Result<AudioBuffer> {
        let size = self.grains.len();
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= size) {
            return Err(Error::InvalidToken { token: bad, size });
        }
        if tokens.is_empty() {
            return AudioBuffer::new(Vec::new(), sample_rate);
        }
        let mut out = vec![0.0; (tokens.len() - 1) * self.hop + self.n_fft];
        for (j, &t) in tokens.iter().enumerate() {
            let dst = &mut out[j * self.hop..j * self.hop + self.n_fft];
            let grains = &self.grains[t as usize];
            dst.iter_mut().zip(&grains[j % grains.len()]).for_each(|(o, g)| *o += g);
        }
        AudioBuffer::new(out, sample_rate)
    }
}

/// Band response of a unit-amplitude cosine at every FFT bin.
fn bin_response(fb: &MelFilterbank) -> Result<Response> {
    let n = fb.n_fft();
    let spectrum = PowerSpectrum::new(n, Window::Hann)?;
    let mut bands = vec![0.0; fb.n_mels()];
    (0..=n / 2)
        .map(|k| {
            let frame: Vec<f64> = (0..n)
                .map(|i| (std::f64::consts::TAU * ((k * i) % n) as f64 / n as f64).cos())
                .collect();
            let power = spectrum.frames(&frame, n)?;
            fb.apply(power.row(0), &mut bands);
            let peak = bands.iter().fold(0.0f64, |m, &v| m.max(v));
            Ok(bands
                .iter()
                .enumerate()
                .filter(|(_, &v)| v > peak * 1e-12)
                .map(|(b, &v)| (b, v))
                .collect())
        })
        .collect()
}
