//! File boundary for outputs produced outside this crate: WAV directories
//! with a labels CSV, and per-file PESQ scores.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::RunResult;
use crate::audio::{load_wav, AudioBuffer};
use crate::detect::{check_lengths, Detector, ScoredOutput, SourceLabel};
use crate::error::{Error, Result};
use crate::metrics::{LabelDistribution, MeanSd};

/// One row of a labels CSV: `file,source_label,prompt_id,replicate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub file: String,
    pub source_label: SourceLabel,
    pub prompt_id: String,
    pub replicate: usize,
}

/// A labelled output clip ready for scoring.
#[derive(Debug, Clone)]
pub struct ExternalOutput {
    /// File stem.
    pub id: String,
    pub file: PathBuf,
    pub prompt_id: String,
    pub replicate: usize,
    pub source_label: SourceLabel,
    pub audio: AudioBuffer,
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::BadCsv(format!("{}: {other:?}", path.display())),
        })
}

fn read_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = open_csv(path)?;
    let rows = r
        .deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::BadCsv(format!("{} row {}: {e}", path.display(), i + 1))))
        .collect::<Result<Vec<T>>>()?;
    if rows.is_empty() {
        return Err(Error::BadCsv(format!("{} has no rows", path.display())));
    }
    Ok(rows)
}

/// Loads every clip listed in `labels_csv`, resolving file names against
/// `dir`. Rows are numbered from 1 in errors.
pub fn ingest_external_outputs(dir: &Path, labels_csv: &Path) -> Result<Vec<ExternalOutput>> {
    let rows: Vec<LabelRow> = read_rows(labels_csv)?;
    let mut seen = HashSet::new();
    for (i, row) in rows.iter().enumerate() {
        if !seen.insert(&row.file) {
            return Err(Error::BadCsv(format!("row {} repeats file {}", i + 1, row.file)));
        }
        let path = dir.join(&row.file);
        if !path.is_file() {
            return Err(Error::MissingFile { file: path, row: i + 1 });
        }
    }
    let outputs: Vec<ExternalOutput> = rows
        .into_par_iter()
        .map(|row| {
            let file = dir.join(&row.file);
            let audio = load_wav(&file)?;
            Ok(ExternalOutput {
                id: Path::new(&row.file)
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| row.file.clone()),
                file,
                prompt_id: row.prompt_id,
                replicate: row.replicate,
                source_label: row.source_label,
                audio,
            })
        })
        .collect::<Result<_>>()?;
    let rate = outputs[0].audio.sample_rate();
    if let Some(o) = outputs.iter().find(|o| o.audio.sample_rate() != rate) {
        return Err(Error::RateMismatch {
            left: rate,
            right: o.audio.sample_rate(),
        });
    }
    let watermarked = outputs.iter().filter(|o| o.source_label == SourceLabel::Watermarked).count();
    if 2 * watermarked != outputs.len() {
        log::warn!(
            "unbalanced outputs: {watermarked} watermarked of {}",
            outputs.len()
        );
    }
    Ok(outputs)
}

/// Scores each output with `detector`, warning when clip lengths diverge.
pub fn score_outputs(outputs: &[ExternalOutput], detector: &Detector) -> Result<Vec<ScoredOutput>> {
    let lengths: Vec<usize> = outputs.iter().map(|o| o.audio.len()).collect();
    check_lengths(&lengths, detector.probe().params().hop);
    outputs
        .par_iter()
        .map(|o| {
            Ok(ScoredOutput {
                id: o.id.clone(),
                prompt_id: o.prompt_id.clone(),
                replicate: o.replicate,
                source_label: o.source_label,
                score: detector.score(&o.audio)?,
            })
        })
        .collect()
}

pub fn write_labels_csv(path: &Path, rows: &[LabelRow]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One row of an adapter metrics CSV: `file,pesq`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PesqRow {
    pub file: String,
    pub pesq: f64,
}

pub fn read_pesq_csv(path: &Path) -> Result<Vec<PesqRow>> {
    let rows: Vec<PesqRow> = read_rows(path)?;
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| !r.pesq.is_finite()) {
        return Err(Error::BadCsv(format!("row {} ({}) has a non-finite pesq", i + 1, r.file)));
    }
    Ok(rows)
}

/// Sets the result's PESQ to the mean ± sd of the given rows.
pub fn merge_pesq(result: &mut RunResult, rows: &[PesqRow]) {
    let values: Vec<f64> = rows.iter().map(|r| r.pesq).collect();
    result.pesq = MeanSd::of(&values);
}

/// Reads embedding rows from a CSV with a header. A leading `file` column
/// is skipped; every other cell must be numeric.
pub fn read_embeddings_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = open_csv(path)?;
    let skip = r.headers().map_err(|e| Error::BadCsv(format!("{}: {e}", path.display())))?.get(0) == Some("file");
    let rows = r
        .records()
        .enumerate()
        .map(|(i, rec)| {
            let bad = |e: String| Error::BadCsv(format!("{} row {}: {e}", path.display(), i + 1));
            rec.map_err(|e| bad(e.to_string()))?
                .iter()
                .skip(usize::from(skip))
                .map(|v| v.parse::<f64>().map_err(|e| bad(format!("{v:?}: {e}"))))
                .collect()
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    if rows.is_empty() {
        return Err(Error::BadCsv(format!("{} has no rows", path.display())));
    }
    Ok(rows)
}

#[derive(Deserialize)]
struct ProbRow {
    label: String,
    prob: f64,
}

/// Reads a `label,prob` CSV as a distribution.
pub fn read_label_distribution_csv(path: &Path) -> Result<LabelDistribution> {
    let rows: Vec<ProbRow> = read_rows(path)?;
    let (labels, probs) = rows.into_iter().map(|r| (r.label, r.prob)).unzip();
    LabelDistribution::new(labels, probs)
}
