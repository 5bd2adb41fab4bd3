//! Short-time power spectra and HTK mel filterbanks.
//!
//! Framing is uncentered: frame `j` covers samples `[j*hop, j*hop + n_fft)`
//! and only full frames are produced. Windows are periodic Hann. Mel values
//! are linear power, never dB.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

/// Dense row-major matrix; rows are frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    Hann,
}

impl Window {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Number of full frames for uncentered framing.
pub fn frame_count(len: usize, n_fft: usize, hop: usize) -> usize {
    if len < n_fft {
        0
    } else {
        1 + (len - n_fft) / hop
    }
}

/// Reusable windowed FFT for one frame size.
#[derive(Clone)]
pub struct PowerSpectrum {
    n_fft: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for PowerSpectrum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PowerSpectrum").field("n_fft", &self.n_fft).finish()
    }
}

impl PowerSpectrum {
    pub fn new(n_fft: usize, window: Window) -> Result<Self> {
        if n_fft < 2 || !n_fft.is_power_of_two() {
            return Err(Error::Config(format!("n_fft {n_fft} must be a power of two ≥ 2")));
        }
        Ok(Self {
            n_fft,
            window: window.coefficients(n_fft),
            fft: FftPlanner::new().plan_fft_forward(n_fft),
        })
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Power spectra of all frames. Two real frames share one complex FFT.
    pub fn frames(&self, samples: &[f64], hop: usize) -> Result<Matrix> {
        if hop == 0 {
            return Err(Error::Config("hop must be positive".into()));
        }
        if samples.len() < self.n_fft {
            return Err(Error::TooShort {
                needed: self.n_fft,
                got: samples.len(),
            });
        }
        let n = self.n_fft;
        let n_frames = frame_count(samples.len(), n, hop);
        let bins = self.n_bins();
        let mut out = Matrix::zeros(n_frames, bins);
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut j = 0;
        while j < n_frames {
            let a = &samples[j * hop..j * hop + n];
            let pair = j + 1 < n_frames;
            for i in 0..n {
                let im = if pair { samples[(j + 1) * hop + i] * self.window[i] } else { 0.0 };
                buf[i] = Complex::new(a[i] * self.window[i], im);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for k in 0..bins {
                let z = buf[k];
                let zc = buf[(n - k) % n].conj();
                let x1 = (z + zc) * 0.5;
                out.row_mut(j)[k] = x1.norm_sqr();
                if pair {
                    let x2 = (z - zc) * Complex::new(0.0, -0.5);
                    out.row_mut(j + 1)[k] = x2.norm_sqr();
                }
            }
            j += if pair { 2 } else { 1 };
        }
        Ok(out)
    }
}

/// Squared-magnitude one-sided spectrum of each windowed frame.
pub fn stft_power(audio: &AudioBuffer, n_fft: usize, hop: usize, window: Window) -> Result<Matrix> {
    PowerSpectrum::new(n_fft, window)?.frames(audio.samples(), hop)
}

/// Triangular filters whose apexes are equally spaced on the HTK mel scale.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    n_mels: usize,
    n_fft: usize,
    sample_rate: u32,
    fmin: f64,
    fmax: f64,
    weights: Matrix,
    band_centers_hz: Vec<f64>,
    /// Per band: first bin with nonzero weight and the nonzero run.
    support: Vec<(usize, Vec<f64>)>,
}

impl MelFilterbank {
    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn fmin(&self) -> f64 {
        self.fmin
    }

    pub fn fmax(&self) -> f64 {
        self.fmax
    }

    /// `n_mels × (n_fft/2 + 1)` weights.
    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn band_centers_hz(&self) -> &[f64] {
        &self.band_centers_hz
    }

    /// Bins with nonzero weight for `band`: `(first_bin, weights)`.
    pub fn support(&self, band: usize) -> (usize, &[f64]) {
        let (start, w) = &self.support[band];
        (*start, w)
    }

    /// Projects one power-spectrum frame onto the bands.
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (o, (start, w)) in out.iter_mut().zip(&self.support) {
            *o = power[*start..*start + w.len()]
                .iter()
                .zip(w)
                .map(|(p, w)| p * w)
                .sum();
        }
    }
}

pub fn mel_filterbank(
    n_mels: usize,
    n_fft: usize,
    sample_rate: u32,
    fmin: f64,
    fmax: f64,
) -> Result<MelFilterbank> {
    let nyquist = sample_rate as f64 / 2.0;
    if !(fmin >= 0.0 && fmin < fmax && fmax <= nyquist) {
        return Err(Error::InvalidRange(format!(
            "need 0 <= fmin < fmax <= {nyquist}, got fmin={fmin}, fmax={fmax}"
        )));
    }
    if n_mels == 0 {
        return Err(Error::InvalidRange("n_mels must be positive".into()));
    }
    if n_fft < 2 || !n_fft.is_power_of_two() {
        return Err(Error::InvalidRange(format!("n_fft {n_fft} must be a power of two")));
    }
    let (mel_lo, mel_hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let points: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let n_bins = n_fft / 2 + 1;
    let bin_hz = sample_rate as f64 / n_fft as f64;
    let mut weights = Matrix::zeros(n_mels, n_bins);
    let mut support = Vec::with_capacity(n_mels);
    for b in 0..n_mels {
        let (lo, mid, hi) = (points[b], points[b + 1], points[b + 2]);
        let row = weights.row_mut(b);
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let rising = (f - lo) / (mid - lo);
            let falling = (hi - f) / (hi - mid);
            *w = rising.min(falling).max(0.0);
        }
        let first = row.iter().position(|&w| w > 0.0).ok_or_else(|| {
            Error::InvalidRange(format!(
                "band {b} ({lo:.1}-{hi:.1} Hz) covers no FFT bin; use fewer bands or a longer FFT"
            ))
        })?;
        let last = row.iter().rposition(|&w| w > 0.0).unwrap();
        support.push((first, row[first..=last].to_vec()));
    }
    Ok(MelFilterbank {
        n_mels,
        n_fft,
        sample_rate,
        fmin,
        fmax,
        weights,
        band_centers_hz: points[1..=n_mels].to_vec(),
        support,
    })
}

/// Linear-power mel spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    /// `n_frames × n_mels`.
    pub values: Matrix,
    pub frame_hop: usize,
    pub band_centers_hz: Vec<f64>,
}

impl MelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.values.rows()
    }

    pub fn band(&self, band: usize) -> Vec<f64> {
        self.values.column(band)
    }
}

/// A filterbank bundled with its FFT plan, for repeated analysis.
#[derive(Debug, Clone)]
pub struct MelAnalyzer {
    filterbank: Arc<MelFilterbank>,
    spectrum: PowerSpectrum,
    hop: usize,
}

impl MelAnalyzer {
    pub fn new(filterbank: Arc<MelFilterbank>, hop: usize) -> Result<Self> {
        if hop == 0 {
            return Err(Error::Config("hop must be positive".into()));
        }
        let spectrum = PowerSpectrum::new(filterbank.n_fft(), Window::Hann)?;
        Ok(Self {
            filterbank,
            spectrum,
            hop,
        })
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn analyze(&self, audio: &AudioBuffer) -> Result<MelSpectrogram> {
        if audio.sample_rate() != self.filterbank.sample_rate() {
            return Err(Error::RateMismatch {
                left: audio.sample_rate(),
                right: self.filterbank.sample_rate(),
            });
        }
        let power = self.spectrum.frames(audio.samples(), self.hop)?;
        let mut values = Matrix::zeros(power.rows(), self.filterbank.n_mels());
        for i in 0..power.rows() {
            self.filterbank.apply(power.row(i), values.row_mut(i));
        }
        Ok(MelSpectrogram {
            values,
            frame_hop: self.hop,
            band_centers_hz: self.filterbank.band_centers_hz().to_vec(),
        })
    }
}

pub fn mel_spectrogram(audio: &AudioBuffer, fb: &MelFilterbank, hop: usize) -> Result<MelSpectrogram> {
    MelAnalyzer::new(Arc::new(fb.clone()), hop)?.analyze(audio)
}

/// Band whose center is closest to `f`; ties go to the lower index.
pub fn band_for_frequency(fb: &MelFilterbank, f: f64) -> Result<usize> {
    if !(f >= fb.fmin && f <= fb.fmax) {
        return Err(Error::OutOfRange(format!(
            "{f} Hz outside filterbank range [{}, {}]",
            fb.fmin, fb.fmax
        )));
    }
    // Distances equal up to rounding count as a tie.
    let tie = 1e-9 * (1.0 + f.abs());
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (i, c) in fb.band_centers_hz.iter().enumerate() {
        let d = (c - f).abs();
        if d < best_dist - tie {
            best = i;
            best_dist = d;
        }
    }
    Ok(best)
}

pub fn distinct_bands(fb: &MelFilterbank, f: f64, f2: f64) -> Result<bool> {
    Ok(band_for_frequency(fb, f)? != band_for_frequency(fb, f2)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    const SR: u32 = 32_000;

    fn detector_bank() -> MelFilterbank {
        mel_filterbank(128, 2048, SR, 0.0, 16_000.0).unwrap()
    }

    fn tone(freq: f64, amp: f64, len: usize) -> AudioBuffer {
        AudioBuffer::from_fn(len, SR, |t| amp * (2.0 * PI * freq * t).cos()).unwrap()
    }

    /// Direct O(n^2) DFT power of one frame.
    fn naive_power(frame: &[f64]) -> Vec<f64> {
        let n = frame.len();
        let w = Window::Hann.coefficients(n);
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, x) in frame.iter().enumerate() {
                    let a = -2.0 * PI * (k * i) as f64 / n as f64;
                    re += x * w[i] * a.cos();
                    im += x * w[i] * a.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    #[test]
    fn stft_silence_is_zero() {
        let s = stft_power(&AudioBuffer::silence(8192, SR).unwrap(), 2048, 512, Window::Hann).unwrap();
        assert_eq!(s.rows(), 13);
        assert_eq!(s.cols(), 1025);
        assert!(s.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stft_tone_peaks_at_expected_bin() {
        let s = stft_power(&tone(1000.0, 0.5, 16_000), 2048, 512, Window::Hann).unwrap();
        let expected = (1000.0f64 * 2048.0 / 32_000.0).round() as usize;
        assert_eq!(expected, 64);
        for row in s.iter_rows() {
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(argmax, expected);
        }
    }

    #[test]
    fn stft_framing() {
        let a = AudioBuffer::silence(2048, SR).unwrap();
        assert_eq!(stft_power(&a, 2048, 7, Window::Hann).unwrap().rows(), 1);
        let short = AudioBuffer::silence(2047, SR).unwrap();
        assert!(matches!(stft_power(&short, 2048, 512, Window::Hann), Err(Error::TooShort { .. })));
        assert_eq!(frame_count(320_000, 2048, 512), 622);
    }

    #[test]
    fn stft_matches_naive_dft() {
        let samples: Vec<f64> = (0..256 + 3 * 64).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
        let a = AudioBuffer::new(samples.clone(), SR).unwrap();
        let s = stft_power(&a, 256, 64, Window::Hann).unwrap();
        assert_eq!(s.rows(), 4);
        for j in 0..4 {
            let naive = naive_power(&samples[j * 64..j * 64 + 256]);
            for (x, y) in s.row(j).iter().zip(&naive) {
                assert!((x - y).abs() <= 1e-9 * (1.0 + y.abs()), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn filterbank_detector_configuration() {
        let fb = detector_bank();
        let c = fb.band_centers_hz();
        assert_eq!(c.len(), 128);
        assert!(c.windows(2).all(|w| w[0] < w[1]));
        assert!(*c.last().unwrap() < 16_000.0);
        for row in fb.weights().iter_rows() {
            assert!(row.iter().all(|&w| w >= 0.0));
            assert!(row.iter().any(|&w| w > 0.0));
            // unimodal: rises then falls
            let peak = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            assert!(row[..=peak].windows(2).all(|w| w[0] <= w[1]));
            assert!(row[peak..].windows(2).all(|w| w[0] >= w[1]));
        }
        let bin_hz = 32_000.0 / 2048.0;
        for k in 0..1025 {
            let f = k as f64 * bin_hz;
            if f >= c[0] && f <= c[127] {
                let total: f64 = (0..128).map(|b| fb.weights().get(b, k)).sum();
                assert!(total > 0.0, "bin {k} uncovered");
            }
        }
    }

    #[test]
    fn two_band_centers_closed_form() {
        let fb = mel_filterbank(2, 2048, SR, 0.0, 16_000.0).unwrap();
        let top = 2595.0 * (1.0f64 + 16_000.0 / 700.0).log10();
        for (i, c) in fb.band_centers_hz().iter().enumerate() {
            let m = top * (i + 1) as f64 / 3.0;
            let expected = 700.0 * (10f64.powf(m / 2595.0) - 1.0);
            assert!((c - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn filterbank_range_errors() {
        assert!(matches!(mel_filterbank(128, 2048, SR, 100.0, 50.0), Err(Error::InvalidRange(_))));
        assert!(matches!(mel_filterbank(128, 2048, SR, 0.0, 16_001.0), Err(Error::InvalidRange(_))));
        assert!(matches!(mel_filterbank(128, 2048, SR, -1.0, 100.0), Err(Error::InvalidRange(_))));
        // Too many bands for a short FFT leaves empty triangles.
        assert!(matches!(mel_filterbank(128, 64, SR, 0.0, 16_000.0), Err(Error::InvalidRange(_))));
    }

    #[test]
    fn mel_of_silence_and_scaling() {
        let fb = detector_bank();
        let m = mel_spectrogram(&AudioBuffer::silence(4096, SR).unwrap(), &fb, 512).unwrap();
        assert!(m.values.as_slice().iter().all(|&v| v == 0.0));

        let a = tone(440.0, 0.3, 8192);
        let b = tone(440.0, 0.6, 8192);
        let ma = mel_spectrogram(&a, &fb, 512).unwrap();
        let mb = mel_spectrogram(&b, &fb, 512).unwrap();
        for (x, y) in ma.values.as_slice().iter().zip(mb.values.as_slice()) {
            assert!((4.0 * x - y).abs() <= 1e-6 * y.abs().max(1e-12));
        }
    }

    #[test]
    fn mel_tone_lands_in_its_band() {
        let fb = detector_bank();
        let band = band_for_frequency(&fb, 440.0).unwrap();
        let m = mel_spectrogram(&tone(440.0, 0.5, 32_000), &fb, 512).unwrap();
        for row in m.values.iter_rows() {
            let argmax = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            assert_eq!(argmax, band);
        }
    }

    #[test]
    fn mel_rate_mismatch() {
        let fb = detector_bank();
        let a = AudioBuffer::silence(4096, 16_000).unwrap();
        assert!(matches!(mel_spectrogram(&a, &fb, 512), Err(Error::RateMismatch { .. })));
    }

    #[test]
    fn pure_tone_energy_is_stationary() {
        let fb = detector_bank();
        // Tones must be resolved by the 64 ms window.
        for f in [100.0, 440.0, 3000.0] {
            let m = mel_spectrogram(&tone(f, 0.5, 64_000), &fb, 512).unwrap();
            let totals: Vec<f64> = m.values.iter_rows().map(|r| r.iter().sum()).collect();
            let inner = &totals[1..totals.len() - 1];
            let mean = inner.iter().sum::<f64>() / inner.len() as f64;
            let sd = (inner.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / inner.len() as f64).sqrt();
            assert!(sd / mean < 0.05, "{f} Hz: cv {}", sd / mean);
        }
    }

    #[test]
    fn band_lookup() {
        let fb = detector_bank();
        let c = fb.band_centers_hz().to_vec();
        assert_eq!(band_for_frequency(&fb, c[10]).unwrap(), 10);
        assert_eq!(band_for_frequency(&fb, 0.5 * (c[10] + c[11])).unwrap(), 10);
        // Linear-scan oracle for 440 Hz.
        let oracle = c
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |(bi, bd), (i, x)| {
                let d = (x - 440.0).abs();
                if d < bd { (i, d) } else { (bi, bd) }
            })
            .0;
        assert_eq!(band_for_frequency(&fb, 440.0).unwrap(), oracle);
        assert!(matches!(band_for_frequency(&fb, 16_000.5), Err(Error::OutOfRange(_))));
        assert!(matches!(band_for_frequency(&fb, -1.0), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn distinct_band_cases() {
        let fb = detector_bank();
        assert!(!distinct_bands(&fb, 440.0, 440.0).unwrap());
        assert!(distinct_bands(&fb, 440.0, 880.0).unwrap());
        // Both below the first center (~17 Hz) at this resolution.
        assert_eq!(band_for_frequency(&fb, 5.0).unwrap(), 0);
        assert_eq!(band_for_frequency(&fb, 15.0).unwrap(), 0);
        assert!(!distinct_bands(&fb, 5.0, 15.0).unwrap());
        assert!(!distinct_bands(&fb, 5.0, 7.0).unwrap());
    }

    proptest! {
        #[test]
        fn band_lookup_is_monotone(a in 0.0f64..16_000.0, b in 0.0f64..16_000.0) {
            let fb = detector_bank();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(band_for_frequency(&fb, lo).unwrap() <= band_for_frequency(&fb, hi).unwrap());
        }
    }
}
