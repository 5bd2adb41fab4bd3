use std::sync::Arc;

use rayon::prelude::*;

use super::corpus::PreparedCorpus;
use super::manifest::ExperimentManifest;
use super::report::{SweepRow, SweepTable};
use crate::audio::{apply_attack, AttackSpec, AudioBuffer};
use crate::detect::{calibrate_threshold, detection_accuracy, Detector, ScoredOutput, SourceLabel};
use crate::error::{Error, Result};
use crate::metrics::{si_snr, MeanSd};
use crate::toygen::Codebook;
use crate::watermark::{multi_apply, Embedder};

/// What the audio passes through between embedding and detection.
#[derive(Debug, Clone)]
pub enum Channel {
    Identity,
    /// Encode then decode with a codebook.
    Codec(Arc<Codebook>),
    Attack(AttackSpec),
}

impl Channel {
    pub fn apply(&self, audio: &AudioBuffer) -> Result<AudioBuffer> {
        match self {
            Channel::Identity => Ok(audio.clone()),
            Channel::Codec(cb) => cb.decode(&cb.encode(audio)?),
            Channel::Attack(a) => apply_attack(audio, a),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessRow {
    pub k: usize,
    pub detection_accuracy: f64,
    /// Share of marked clips above the threshold. The calibration caps
    /// overall accuracy near 0.975, so this is the cleaner robustness read.
    pub true_positive_rate: f64,
    /// `None` when every clip is unchanged (`k = 0`).
    pub si_snr: Option<MeanSd>,
    pub pesq: Option<MeanSd>,
}

/// For each `k`: embed `k` times, pass clean and marked clips through the
/// channel, and report accuracy at the 95th percentile of clean scores.
pub fn run_robustness_sweep(
    clips: &[AudioBuffer],
    embedder: &dyn Embedder,
    detector: &Detector,
    k_values: &[usize],
    channel: &Channel,
) -> Result<Vec<RobustnessRow>> {
    if k_values.is_empty() {
        return Err(Error::Config("no k values to sweep".into()));
    }
    if clips.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let scored = |label: SourceLabel, i: usize, audio: &AudioBuffer| -> Result<ScoredOutput> {
        Ok(ScoredOutput {
            id: format!("{}-{i}", label.as_str()),
            prompt_id: i.to_string(),
            replicate: 0,
            source_label: label,
            score: detector.score(&channel.apply(audio)?)?,
        })
    };
    let clean: Vec<ScoredOutput> = clips
        .par_iter()
        .enumerate()
        .map(|(i, c)| scored(SourceLabel::Clean, i, c))
        .collect::<Result<_>>()?;
    k_values
        .iter()
        .map(|&k| {
            let marked: Vec<(ScoredOutput, f64)> = clips
                .par_iter()
                .enumerate()
                .map(|(i, c)| {
                    let w = multi_apply(embedder, c, k)?;
                    let snr = if k == 0 { f64::INFINITY } else { si_snr(c, &w)? };
                    Ok((scored(SourceLabel::Watermarked, i, &w)?, snr))
                })
                .collect::<Result<_>>()?;
            let snrs: Vec<f64> = marked.iter().map(|m| m.1).filter(|v| v.is_finite()).collect();
            let mut all = clean.clone();
            all.extend(marked.into_iter().map(|m| m.0));
            let threshold = calibrate_threshold(&all)?;
            let hits = all[clean.len()..].iter().filter(|s| s.score > threshold).count();
            Ok(RobustnessRow {
                k,
                detection_accuracy: detection_accuracy(&all, threshold),
                true_positive_rate: hits as f64 / clips.len() as f64,
                si_snr: MeanSd::of(&snrs),
                pesq: None,
            })
        })
        .collect()
}

/// Robustness sweep of the manifest's watermark over each seed's test
/// clips. The channel is that seed's codec unless `attack` is given.
pub fn robustness_sweep(
    manifest: &ExperimentManifest,
    corpus: &PreparedCorpus,
    k_values: &[usize],
    attack: Option<&AttackSpec>,
) -> Result<SweepTable> {
    manifest.validate()?;
    let spec = manifest
        .watermark
        .as_ref()
        .map(|w| w.spec.clone())
        .ok_or_else(|| Error::Config("robustness sweep needs a watermark".into()))?;
    let detector = Detector::for_spec(&spec, manifest.detector_params, manifest.target_sample_rate, 0.0)?;
    let mut per_seed: Vec<Vec<RobustnessRow>> = Vec::new();
    for &seed in &manifest.seeds {
        let state = corpus.seed_state(manifest, seed)?;
        let channel = match attack {
            Some(a) => Channel::Attack(a.clone()),
            None => Channel::Codec(Arc::clone(&state.codebook)),
        };
        let clips: Vec<AudioBuffer> = state
            .split
            .test
            .iter()
            .filter(|&&i| !corpus.is_silent(i))
            .map(|&i| corpus.clips()[i].clone())
            .collect();
        per_seed.push(run_robustness_sweep(&clips, &spec, &detector, k_values, &channel)?);
    }
    let rows = k_values
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let acc: Vec<f64> = per_seed.iter().map(|rows| rows[j].detection_accuracy).collect();
            let snr: Vec<f64> = per_seed.iter().filter_map(|rows| rows[j].si_snr.map(|s| s.mean)).collect();
            SweepRow::new(k as f64, vec![MeanSd::of(&acc), MeanSd::of(&snr)], acc)
        })
        .collect();
    let channel = match attack {
        Some(a) => a.to_string(),
        None => "codec round trip".into(),
    };
    Ok(SweepTable {
        title: format!("detection accuracy by repeated embedding, {} through {channel}", spec),
        param: "k".into(),
        columns: vec!["detection_accuracy".into(), "si_snr".into()],
        rows,
        manifest_hash: manifest.hash()?,
    })
}
