//! Datasets: the bundled synthetic corpus, WAV directories, and the
//! resampled per-seed cache the experiments run on.

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::ExperimentManifest;
use crate::audio::{load_wav, repeat, resample, rms, store_wav, AudioBuffer, WavEncoding};
use crate::error::{Error, Result};
use crate::rng::{self, derive_seed};
use crate::toygen::{fit_codebook_with, Codebook};

const SPLIT_STREAM: u64 = 0x5350;
const CODEBOOK_STREAM: u64 = 0xC0DE;

/// Procedurally generated music-like clips.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticCorpus {
    pub clips: usize,
    pub seconds: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for SyntheticCorpus {
    fn default() -> Self {
        Self {
            clips: 200,
            seconds: 10.0,
            sample_rate: 48_000,
            seed: 7,
        }
    }
}

/// A minor pentatonic, A2 to A5.
const SCALE: [f64; 16] = [
    110.0, 130.81, 146.83, 164.81, 196.0, 220.0, 261.63, 293.66, 329.63, 392.0, 440.0, 523.25, 587.33, 659.25,
    783.99, 880.0,
];
const BASS_ROOTS: [usize; 4] = [0, 1, 3, 4];

impl SyntheticCorpus {
    pub fn ids(&self) -> Vec<String> {
        (0..self.clips).map(|i| format!("synth{i:04}")).collect()
    }

    /// Clip `index`: a plucked melody over a bass line with light
    /// percussion, each clip with its own tempo, timbre and level.
    pub fn clip(&self, index: usize) -> Result<AudioBuffer> {
        let sr = self.sample_rate as f64;
        let n = (self.seconds * sr).round() as usize;
        let mut r = rng::seeded(derive_seed(self.seed, 0xA0D1, index as u64));
        let beat = 0.25 + 0.25 * rng::uniform(&mut r);
        let decay = 2.0 + 4.0 * rng::uniform(&mut r);
        let h2 = 0.1 + 0.3 * rng::uniform(&mut r);
        let h3 = 0.02 + 0.13 * rng::uniform(&mut r);
        let gain = 0.3 + 0.5 * rng::uniform(&mut r);
        let beat_len = (beat * sr) as usize;
        let mut out = vec![0.0; n];
        let mut degree = 5 + rng::below(&mut r, 8);
        let mut bass = SCALE[BASS_ROOTS[0]] / 2.0;
        for (b, start) in (0..n).step_by(beat_len.max(1)).enumerate() {
            let step = rng::below(&mut r, 5) as isize - 2;
            degree = (degree as isize + step).clamp(5, SCALE.len() as isize - 1) as usize;
            let f = SCALE[degree];
            if b % 4 == 0 {
                bass = SCALE[BASS_ROOTS[rng::below(&mut r, BASS_ROOTS.len())]] / 2.0;
            }
            let hit = 0.03 + 0.04 * rng::uniform(&mut r);
            let end = (start + beat_len).min(n);
            for (i, x) in out[start..end].iter_mut().enumerate() {
                let t = (start + i) as f64 / sr;
                let local = i as f64 / sr;
                let env = (1.0 - (-local / 0.01).exp()) * (-local * decay).exp();
                let w = TAU * f * t;
                let melody = env * (w.sin() + h2 * (2.0 * w).sin() + h3 * (3.0 * w).sin());
                let low = 0.3 * (TAU * bass * t).sin();
                let drum = hit * (-local / 0.03).exp() * rng::standard_normal(&mut r);
                *x = gain * (0.5 * melody + low) + drum + 0.002 * rng::standard_normal(&mut r);
            }
        }
        AudioBuffer::new(out, self.sample_rate)
    }
}

/// One dataset clip with its caption carried as opaque metadata.
#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub id: String,
    pub caption: String,
    pub audio: AudioBuffer,
}

/// Row of a dataset manifest (`manifest.json` in a dataset directory).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub file: PathBuf,
    #[serde(default)]
    pub caption: String,
    pub id: String,
}

pub const DATASET_MANIFEST: &str = "manifest.json";

/// Loads `dir/manifest.json` when present, otherwise every `.wav` in `dir`
/// in name order with the file stem as id.
pub fn load_dataset_dir(dir: &Path) -> Result<Vec<DatasetItem>> {
    let manifest = dir.join(DATASET_MANIFEST);
    let entries: Vec<DatasetEntry> = if manifest.exists() {
        let text = std::fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        serde_json::from_str(&text)?
    } else {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        files.sort();
        files
            .into_iter()
            .map(|p| DatasetEntry {
                id: p.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
                file: p.file_name().map(PathBuf::from).unwrap_or_default(),
                caption: String::new(),
            })
            .collect()
    };
    if entries.is_empty() {
        return Err(Error::EmptyDataset);
    }
    entries
        .into_iter()
        .enumerate()
        .map(|(row, e)| {
            let path = dir.join(&e.file);
            if !path.exists() {
                return Err(Error::MissingFile { file: path, row: row + 1 });
            }
            Ok(DatasetItem {
                id: e.id,
                caption: e.caption,
                audio: load_wav(&path)?,
            })
        })
        .collect()
}

/// Writes the synthetic corpus as float WAVs plus a dataset manifest.
pub fn write_synthetic_dataset(corpus: &SyntheticCorpus, dir: &Path) -> Result<Vec<DatasetEntry>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let entries: Vec<DatasetEntry> = corpus
        .ids()
        .into_par_iter()
        .enumerate()
        .map(|(i, id)| {
            let file = PathBuf::from(format!("{id}.wav"));
            store_wav(&corpus.clip(i)?, dir.join(&file), WavEncoding::Float32)?;
            Ok(DatasetEntry {
                file,
                caption: "synthetic pentatonic melody over bass and percussion".into(),
                id,
            })
        })
        .collect::<Result<_>>()?;
    let path = dir.join(DATASET_MANIFEST);
    let json = serde_json::to_string_pretty(&entries)?;
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(entries)
}

/// Dataset indices of one seed's split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles under `seed`, takes `test_count` clips for test and splits the
/// rest `train_frac` / `1 - train_frac`.
pub fn split_indices(n: usize, train_frac: f64, test_count: usize, seed: u64) -> Result<Split> {
    if n < test_count + 2 {
        return Err(Error::Config(format!(
            "{n} clips cannot hold a {test_count}-clip test set plus train and validation"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(derive_seed(seed, SPLIT_STREAM, 0)));
    let test = order[..test_count].to_vec();
    let rest = &order[test_count..];
    let n_train = ((rest.len() as f64 * train_frac).round() as usize).clamp(1, rest.len() - 1);
    Ok(Split {
        train: rest[..n_train].to_vec(),
        val: rest[n_train..].to_vec(),
        test,
    })
}

/// Per-seed state shared by every run over the same corpus and codec.
#[derive(Debug)]
pub struct SeedState {
    pub split: Split,
    pub codebook: Arc<Codebook>,
    /// Tokens of each repeated clean training clip, in `split.train` order.
    pub clean_tokens: Vec<Vec<u32>>,
}

/// A dataset resampled to the experiment rate, with lazily built per-seed
/// codebooks and clean token streams.
pub struct PreparedCorpus {
    ids: Vec<String>,
    clips: Vec<AudioBuffer>,
    silent: Vec<bool>,
    sample_rate: u32,
    cache: Mutex<HashMap<String, Arc<SeedState>>>,
}

impl std::fmt::Debug for PreparedCorpus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PreparedCorpus")
            .field("clips", &self.clips.len())
            .field("sample_rate", &self.sample_rate)
            .finish()
    }
}

impl PreparedCorpus {
    pub fn new(ids: Vec<String>, clips: Vec<AudioBuffer>, sample_rate: u32) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if ids.len() != clips.len() {
            return Err(Error::LengthMismatch {
                left: ids.len(),
                right: clips.len(),
            });
        }
        let clips: Vec<AudioBuffer> = clips
            .into_par_iter()
            .map(|c| if c.sample_rate() == sample_rate { Ok(c) } else { resample(&c, sample_rate) })
            .collect::<Result<_>>()?;
        let silent = clips
            .iter()
            .map(|c| Ok(c.is_empty() || rms(c)? == 0.0))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            ids,
            clips,
            silent,
            sample_rate,
            cache: Mutex::new(HashMap::new()),
        })
    }

    /// Generates and resamples clip by clip so the source-rate corpus is
    /// never held in memory at once.
    pub fn synthetic(corpus: &SyntheticCorpus, sample_rate: u32) -> Result<Self> {
        let clips = (0..corpus.clips)
            .into_par_iter()
            .map(|i| {
                let c = corpus.clip(i)?;
                if c.sample_rate() == sample_rate {
                    Ok(c)
                } else {
                    resample(&c, sample_rate)
                }
            })
            .collect::<Result<_>>()?;
        Self::new(corpus.ids(), clips, sample_rate)
    }

    pub fn from_dir(dir: &Path, sample_rate: u32) -> Result<Self> {
        let items = load_dataset_dir(dir)?;
        let (ids, clips) = items.into_iter().map(|i| (i.id, i.audio)).unzip();
        Self::new(ids, clips, sample_rate)
    }

    pub fn for_manifest(manifest: &ExperimentManifest) -> Result<Self> {
        match (&manifest.synthetic, &manifest.dataset_dir) {
            (Some(s), _) => Self::synthetic(s, manifest.target_sample_rate),
            (None, Some(dir)) => Self::from_dir(dir, manifest.target_sample_rate),
            (None, None) => Err(Error::Config("manifest needs dataset_dir or synthetic".into())),
        }
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn clips(&self) -> &[AudioBuffer] {
        &self.clips
    }

    pub fn is_silent(&self, index: usize) -> bool {
        self.silent[index]
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// `clip` repeated `times` times end to end.
    pub fn repeated(&self, index: usize, times: usize) -> Result<AudioBuffer> {
        repeat(&self.clips[index], times)
    }

    /// Split, codebook and clean training tokens for `seed`, built once per
    /// distinct codec and split configuration.
    pub fn seed_state(&self, manifest: &ExperimentManifest, seed: u64) -> Result<Arc<SeedState>> {
        if manifest.target_sample_rate != self.sample_rate {
            return Err(Error::RateMismatch {
                left: manifest.target_sample_rate,
                right: self.sample_rate,
            });
        }
        let key = format!(
            "{seed}|{:?}|{:?}|{}",
            manifest.split, manifest.codec, manifest.repeat_times
        );
        if let Some(state) = self.cache.lock().expect("cache poisoned").get(&key) {
            return Ok(Arc::clone(state));
        }
        let state = Arc::new(self.build_seed_state(manifest, seed)?);
        self.cache
            .lock()
            .expect("cache poisoned")
            .insert(key, Arc::clone(&state));
        Ok(state)
    }

    fn build_seed_state(&self, manifest: &ExperimentManifest, seed: u64) -> Result<SeedState> {
        let split = split_indices(
            self.len(),
            manifest.split.train_frac,
            manifest.split.test_count,
            seed,
        )?;
        let train: Vec<AudioBuffer> = split.train.iter().map(|&i| self.clips[i].clone()).collect();
        log::info!("seed {seed}: fitting a {}-entry codebook on {} clips", manifest.codec.k, train.len());
        let codebook = fit_codebook_with(
            &train,
            manifest.codec.k,
            manifest.codec.features(),
            derive_seed(seed, CODEBOOK_STREAM, 0),
            manifest.codec.kmeans(),
        )?;
        drop(train);
        let clean_tokens = split
            .train
            .par_iter()
            .map(|&i| codebook.encode(&self.repeated(i, manifest.repeat_times)?))
            .collect::<Result<_>>()?;
        Ok(SeedState {
            split,
            codebook: Arc::new(codebook),
            clean_tokens,
        })
    }
}
