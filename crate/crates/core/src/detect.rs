//! Rule-based mel-band detector, AUC and best-of-n aggregation.
//!
//! The score of a clip is the linear mel power in the band nearest the
//! watermark frequency, summed over frames. Only the FFT bins inside that
//! band's support are evaluated, by direct DFT, so scoring costs a few bins
//! per frame instead of a full spectrum.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::spectral::{band_for_frequency, frame_count, mel_filterbank, MelAnalyzer, MelFilterbank, Window};
use crate::watermark::{WatermarkKind, WatermarkSpec};

/// Filterbank and framing used by the detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MelParams {
    pub n_mels: usize,
    pub n_fft: usize,
    pub hop: usize,
}

impl Default for MelParams {
    fn default() -> Self {
        Self {
            n_mels: 128,
            n_fft: 2048,
            hop: 512,
        }
    }
}

impl MelParams {
    /// Full-range filterbank for `sample_rate`.
    pub fn filterbank(&self, sample_rate: u32) -> Result<MelFilterbank> {
        mel_filterbank(self.n_mels, self.n_fft, sample_rate, 0.0, sample_rate as f64 / 2.0)
    }
}

/// Wider bands fall back to a full FFT.
const MAX_DIRECT_BINS: usize = 24;

/// Per-frame power of a single mel band.
#[derive(Debug, Clone)]
pub struct BandProbe {
    band: usize,
    center_hz: f64,
    params: MelParams,
    sample_rate: u32,
    weights: Vec<f64>,
    /// Windowed cosine and sine tables, one pair per supported bin.
    basis: Vec<(Vec<f64>, Vec<f64>)>,
    fallback: Option<Arc<MelAnalyzer>>,
}

impl BandProbe {
    /// Probe for the band nearest `f`.
    pub fn new(params: MelParams, sample_rate: u32, f: f64) -> Result<Self> {
        let fb = params.filterbank(sample_rate)?;
        let band = band_for_frequency(&fb, f)?;
        Self::for_band(&fb, params.hop, band)
    }

    pub fn for_band(fb: &MelFilterbank, hop: usize, band: usize) -> Result<Self> {
        if band >= fb.n_mels() {
            return Err(Error::OutOfRange(format!("band {band} of {}", fb.n_mels())));
        }
        if hop == 0 {
            return Err(Error::Config("hop must be positive".into()));
        }
        let n = fb.n_fft();
        let (first_bin, weights) = fb.support(band);
        let params = MelParams {
            n_mels: fb.n_mels(),
            n_fft: n,
            hop,
        };
        let (basis, fallback) = if weights.len() <= MAX_DIRECT_BINS {
            let window = Window::Hann.coefficients(n);
            let basis = (0..weights.len())
                .map(|j| {
                    let k = (first_bin + j) as u64;
                    let angle = |i: usize| {
                        // Reduce k·i mod n exactly before converting to an angle.
                        std::f64::consts::TAU * ((k * i as u64) % n as u64) as f64 / n as f64
                    };
                    let cos = (0..n).map(|i| window[i] * angle(i).cos()).collect();
                    let sin = (0..n).map(|i| window[i] * angle(i).sin()).collect();
                    (cos, sin)
                })
                .collect();
            (basis, None)
        } else {
            (Vec::new(), Some(Arc::new(MelAnalyzer::new(Arc::new(fb.clone()), hop)?)))
        };
        Ok(Self {
            band,
            center_hz: fb.band_centers_hz()[band],
            params,
            sample_rate: fb.sample_rate(),
            weights: weights.to_vec(),
            basis,
            fallback,
        })
    }

    pub fn band(&self) -> usize {
        self.band
    }

    pub fn center_hz(&self) -> f64 {
        self.center_hz
    }

    pub fn params(&self) -> MelParams {
        self.params
    }

    /// Band power of every frame.
    pub fn frame_energies(&self, audio: &AudioBuffer) -> Result<Vec<f64>> {
        if audio.sample_rate() != self.sample_rate {
            return Err(Error::RateMismatch {
                left: audio.sample_rate(),
                right: self.sample_rate,
            });
        }
        let n = self.params.n_fft;
        if audio.len() < n {
            return Err(Error::TooShort {
                needed: n,
                got: audio.len(),
            });
        }
        if let Some(analyzer) = &self.fallback {
            return Ok(analyzer.analyze(audio)?.band(self.band));
        }
        let samples = audio.samples();
        let frames = frame_count(samples.len(), n, self.params.hop);
        let mut out = Vec::with_capacity(frames);
        for j in 0..frames {
            let frame = &samples[j * self.params.hop..j * self.params.hop + n];
            let mut energy = 0.0;
            for ((cos, sin), w) in self.basis.iter().zip(&self.weights) {
                let mut re = 0.0;
                let mut im = 0.0;
                for ((x, c), s) in frame.iter().zip(cos).zip(sin) {
                    re += x * c;
                    im += x * s;
                }
                energy += w * (re * re + im * im);
            }
            out.push(energy);
        }
        Ok(out)
    }

    /// Sum over frames starting at or after `onset` seconds.
    pub fn score_from(&self, audio: &AudioBuffer, onset: f64) -> Result<f64> {
        let first = onset_frame(onset, self.sample_rate, self.params.hop)?;
        Ok(self.frame_energies(audio)?.iter().skip(first).sum())
    }

    /// Sum over frames lying entirely before `end` seconds.
    pub fn score_until(&self, audio: &AudioBuffer, end: f64) -> Result<f64> {
        let end_sample = (end * self.sample_rate as f64).floor().max(0.0) as usize;
        let frames = frame_count(end_sample, self.params.n_fft, self.params.hop);
        Ok(self.frame_energies(audio)?.iter().take(frames).sum())
    }

    pub fn score(&self, audio: &AudioBuffer) -> Result<f64> {
        Ok(self.frame_energies(audio)?.iter().sum())
    }
}

fn onset_frame(onset: f64, sample_rate: u32, hop: usize) -> Result<usize> {
    if !(onset >= 0.0 && onset.is_finite()) {
        return Err(Error::OutOfRange(format!("onset {onset} s must be finite and ≥ 0")));
    }
    let start_sample = (onset * sample_rate as f64).ceil() as usize;
    Ok(start_sample.div_ceil(hop))
}

/// Summed linear mel power in the band nearest `f`.
pub fn rule_score(audio: &AudioBuffer, f: f64, params: MelParams) -> Result<f64> {
    BandProbe::new(params, audio.sample_rate(), f)?.score(audio)
}

/// Rule score at the secret frequency `f2`, counting frames from `onset`.
/// Fails with a config error when `f` and `f2` share a band.
pub fn secret_score(audio: &AudioBuffer, f: f64, f2: f64, onset: f64, params: MelParams) -> Result<f64> {
    let fb = params.filterbank(audio.sample_rate())?;
    ensure_distinct(&fb, f, f2)?;
    let band = band_for_frequency(&fb, f2)?;
    BandProbe::for_band(&fb, params.hop, band)?.score_from(audio, onset)
}

fn ensure_distinct(fb: &MelFilterbank, f: f64, f2: f64) -> Result<()> {
    let (a, b) = (band_for_frequency(fb, f)?, band_for_frequency(fb, f2)?);
    if a == b {
        return Err(Error::Config(format!(
            "{f} Hz and {f2} Hz both fall in mel band {a}; the secret frequency must use a different band"
        )));
    }
    Ok(())
}

/// What a detector looks for in a clip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetectorRule {
    /// Presence of the band over the whole clip.
    Presence,
    /// Presence from `onset` seconds on.
    SecretFrom { onset: f64 },
    /// Presence before `end` seconds.
    PresenceUntil { end: f64 },
    /// Negated presence over the whole clip.
    Absence,
}

/// Detector matched to a watermark spec.
#[derive(Debug, Clone)]
pub struct Detector {
    probe: BandProbe,
    rule: DetectorRule,
}

impl Detector {
    pub fn new(probe: BandProbe, rule: DetectorRule) -> Self {
        Self { probe, rule }
    }

    /// Detector for clips that begin `offset` seconds into the watermarked
    /// timeline, as continuations of an `offset`-second prompt do.
    ///
    /// Tone scores `f` everywhere. Switch and Alternate score `f2` from the
    /// first switch point on. Stop scores `f` before `d`; when the clip
    /// starts after `d` it rewards absence of `f`.
    pub fn for_spec(spec: &WatermarkSpec, params: MelParams, sample_rate: u32, offset: f64) -> Result<Self> {
        spec.validate()?;
        let fb = params.filterbank(sample_rate)?;
        let band_of = |f| band_for_frequency(&fb, f);
        let (band, rule) = match spec.kind {
            WatermarkKind::Tone => (band_of(spec.f)?, DetectorRule::Presence),
            WatermarkKind::Switch | WatermarkKind::Alternate => {
                let f2 = spec.secret_frequency();
                ensure_distinct(&fb, spec.f, f2)?;
                let onset = (spec.d.unwrap_or(0.0) - offset).max(0.0);
                (band_of(f2)?, DetectorRule::SecretFrom { onset })
            }
            WatermarkKind::Stop => {
                let end = spec.d.unwrap_or(0.0) - offset;
                let rule = if end * sample_rate as f64 >= params.n_fft as f64 {
                    DetectorRule::PresenceUntil { end }
                } else {
                    DetectorRule::Absence
                };
                (band_of(spec.f)?, rule)
            }
        };
        Ok(Self::new(BandProbe::for_band(&fb, params.hop, band)?, rule))
    }

    /// Plain presence detector at `f`.
    pub fn presence(f: f64, params: MelParams, sample_rate: u32) -> Result<Self> {
        Ok(Self::new(BandProbe::new(params, sample_rate, f)?, DetectorRule::Presence))
    }

    pub fn rule(&self) -> DetectorRule {
        self.rule
    }

    pub fn probe(&self) -> &BandProbe {
        &self.probe
    }

    pub fn score(&self, audio: &AudioBuffer) -> Result<f64> {
        match self.rule {
            DetectorRule::Presence => self.probe.score(audio),
            DetectorRule::SecretFrom { onset } => self.probe.score_from(audio, onset),
            DetectorRule::PresenceUntil { end } => self.probe.score_until(audio, end),
            DetectorRule::Absence => Ok(-self.probe.score(audio)?),
        }
    }

    pub fn describe(&self) -> String {
        let band = format!("band {} ({:.1} Hz)", self.probe.band(), self.probe.center_hz());
        match self.rule {
            DetectorRule::Presence => format!("presence in {band}"),
            DetectorRule::SecretFrom { onset } => format!("presence in {band} from {onset} s"),
            DetectorRule::PresenceUntil { end } => format!("presence in {band} before {end} s"),
            DetectorRule::Absence => format!("absence in {band}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceLabel {
    Clean,
    Watermarked,
}

impl SourceLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceLabel::Clean => "clean",
            SourceLabel::Watermarked => "watermarked",
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            SourceLabel::Clean => SourceLabel::Watermarked,
            SourceLabel::Watermarked => SourceLabel::Clean,
        }
    }
}

impl std::str::FromStr for SourceLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "clean" => Ok(SourceLabel::Clean),
            "watermarked" => Ok(SourceLabel::Watermarked),
            other => Err(Error::BadCsv(format!("unknown source label {other:?}"))),
        }
    }
}

/// One scored continuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredOutput {
    pub id: String,
    pub prompt_id: String,
    pub replicate: usize,
    pub source_label: SourceLabel,
    pub score: f64,
}

fn split_scores(scores: &[ScoredOutput]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for s in scores {
        if !s.score.is_finite() {
            return Err(Error::OutOfRange(format!("score of {} is not finite", s.id)));
        }
        match s.source_label {
            SourceLabel::Watermarked => pos.push(s.score),
            SourceLabel::Clean => neg.push(s.score),
        }
    }
    Ok((pos, neg))
}

/// Mann–Whitney AUC with watermarked outputs as the positive class.
pub fn auc(scores: &[ScoredOutput]) -> Result<f64> {
    let (pos, neg) = split_scores(scores)?;
    auc_from_scores(&pos, &neg)
}

/// AUC from midranks: the fraction of (positive, negative) pairs ordered
/// correctly, ties counting one half.
pub fn auc_from_scores(positive: &[f64], negative: &[f64]) -> Result<f64> {
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::DegenerateLabels);
    }
    let mut all: Vec<(f64, bool)> = positive
        .iter()
        .map(|&s| (s, true))
        .chain(negative.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // Ranks i+1..=j+1 share their mean.
        let midrank = (i + j + 2) as f64 / 2.0;
        let positives = all[i..=j].iter().filter(|e| e.1).count();
        rank_sum += midrank * positives as f64;
        i = j + 1;
    }
    let (np, nn) = (positive.len() as f64, negative.len() as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Fraction of outputs whose thresholded score matches their label.
/// NaN for an empty set.
pub fn detection_accuracy(scores: &[ScoredOutput], threshold: f64) -> f64 {
    let correct = scores
        .iter()
        .filter(|s| (s.score > threshold) == (s.source_label == SourceLabel::Watermarked))
        .count();
    correct as f64 / scores.len() as f64
}

/// Linearly interpolated percentile, `q` in `[0, 100]`.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyGroup("percentile of no values".into()));
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::OutOfRange(format!("percentile {q}")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

/// Decision threshold at the 95th percentile of clean scores.
pub fn calibrate_threshold(scores: &[ScoredOutput]) -> Result<f64> {
    let clean: Vec<f64> = scores
        .iter()
        .filter(|s| s.source_label == SourceLabel::Clean)
        .map(|s| s.score)
        .collect();
    percentile(&clean, 95.0)
}

/// Per-prompt maximum score.
pub fn best_of_n(groups: &BTreeMap<String, Vec<f64>>) -> Result<BTreeMap<String, f64>> {
    groups
        .iter()
        .map(|(prompt, scores)| {
            scores
                .iter()
                .copied()
                .reduce(f64::max)
                .map(|best| (prompt.clone(), best))
                .ok_or_else(|| Error::EmptyGroup(format!("prompt {prompt} has no continuations")))
        })
        .collect()
}

/// Best-of-`n_used` per (label, prompt), using replicates `0..n_used`.
pub fn best_of_n_outputs(scores: &[ScoredOutput], n_used: usize) -> Result<Vec<ScoredOutput>> {
    let mut groups: BTreeMap<(SourceLabel, String), Vec<f64>> = BTreeMap::new();
    for s in scores {
        let entry = groups.entry((s.source_label, s.prompt_id.clone())).or_default();
        if s.replicate < n_used {
            entry.push(s.score);
        }
    }
    groups
        .into_iter()
        .map(|((label, prompt), v)| {
            let best = v.into_iter().reduce(f64::max).ok_or_else(|| {
                Error::EmptyGroup(format!("prompt {prompt} ({}) has no replicate below {n_used}", label.as_str()))
            })?;
            Ok(ScoredOutput {
                id: format!("{}-{prompt}-best{n_used}", label.as_str()),
                prompt_id: prompt,
                replicate: 0,
                source_label: label,
                score: best,
            })
        })
        .collect()
}

/// Warns when the clip lengths spread over more than one hop.
pub fn check_lengths(lengths: &[usize], hop: usize) {
    if let (Some(min), Some(max)) = (lengths.iter().min(), lengths.iter().max()) {
        if max - min > hop {
            log::warn!("scored clips differ in length by {} samples; scores are not length-normalized", max - min);
        }
    }
}

pub fn write_scores_csv(path: &Path, scores: &[ScoredOutput]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for s in scores {
        w.serialize(s)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoredOutput>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::BadCsv(format!("{other:?}")),
    })?;
    let rows: Vec<ScoredOutput> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    if rows.is_empty() {
        return Err(Error::BadCsv(format!("{} has no rows", path.display())));
    }
    Ok(rows)
}
