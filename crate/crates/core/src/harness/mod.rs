//! Experiment orchestration: watermark a share of the training clips, train
//! a clean and a watermarked model on the same tokenizer, continue marked
//! prompts with both, and measure how well the detector tells them apart.

mod attribution;
mod corpus;
mod ingest;
mod manifest;
mod report;
mod robustness;

use rand::seq::index::sample;

pub use attribution::{
    run_attribution, run_attribution_with, run_best_of_n, sweep_proportion, AttributionRun, BestOfNRun, RunOptions,
};
pub use corpus::{
    load_dataset_dir, split_indices, write_synthetic_dataset, DatasetEntry, DatasetItem, PreparedCorpus, SeedState,
    Split, SyntheticCorpus, DATASET_MANIFEST,
};
pub use ingest::{
    ingest_external_outputs, merge_pesq, read_embeddings_csv, read_label_distribution_csv, read_pesq_csv,
    score_outputs, write_labels_csv, ExternalOutput, LabelRow, PesqRow,
};
pub use manifest::{
    CodecConfig, ExperimentManifest, GenerationSettings, ModelConfig, SplitConfig, MANIFEST_VERSION,
};
pub use report::{
    render_run, render_sweep, write_run_dir, ReportFormat, RunResult, SweepRow, SweepTable, MANIFEST_FILE, RESULTS_FILE,
    SCORES_FILE, SUMMARY_FILE,
};
pub use robustness::{robustness_sweep, run_robustness_sweep, Channel, RobustnessRow};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::rng;
use crate::watermark::Embedder;

/// `ceil(p * n)` indices drawn uniformly without replacement under `seed`.
pub fn selection_mask(n: usize, p: f64, seed: u64) -> Result<Vec<bool>> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::OutOfRange(format!("proportion {p} must lie in (0, 1]")));
    }
    // The slack keeps products like 0.1 * 100 from rounding up to 11.
    let count = ((p * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let mut mask = vec![false; n];
    for i in sample(&mut rng::seeded(seed), n, count) {
        mask[i] = true;
    }
    Ok(mask)
}

/// Embeds `embedder` into a uniformly chosen `ceil(p * N)` of the clips and
/// leaves the rest untouched. The mask marks the embedded clips.
pub fn watermark_dataset(
    dataset: &[AudioBuffer],
    embedder: &dyn Embedder,
    p: f64,
    seed: u64,
) -> Result<(Vec<AudioBuffer>, Vec<bool>)> {
    let mask = selection_mask(dataset.len(), p, seed)?;
    let out = dataset
        .iter()
        .zip(&mask)
        .map(|(a, &m)| if m { embedder.embed(a) } else { Ok(a.clone()) })
        .collect::<Result<_>>()?;
    Ok((out, mask))
}
