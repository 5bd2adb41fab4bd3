use std::path::PathBuf;

use rayon::prelude::*;

use super::corpus::PreparedCorpus;
use super::ingest::{write_labels_csv, LabelRow};
use super::manifest::ExperimentManifest;
use super::report::{RunResult, SweepRow, SweepTable};
use super::selection_mask;
use crate::audio::{prefix, store_wav, WavEncoding};
use crate::detect::{auc, best_of_n_outputs, calibrate_threshold, detection_accuracy, Detector, ScoredOutput, SourceLabel};
use crate::error::{Error, Result};
use crate::metrics::{default_extractor, fit_gaussian, frechet_distance, si_snr, EmbeddingExtractor, MeanSd};
use crate::rng::derive_seed;
use crate::toygen::{train_ngram, GenerationConfig, NGramModel};
use crate::watermark::Embedder;

const SELECT_STREAM: u64 = 0x5E1E;
const GENERATE_STREAM: u64 = 0x6E4E;

/// Execution knobs that do not affect results.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses every core.
    pub jobs: Option<usize>,
    /// Writes each continuation as a WAV plus `labels.csv` here.
    pub export_dir: Option<PathBuf>,
}

/// Aggregate result plus every scored continuation.
#[derive(Debug, Clone)]
pub struct AttributionRun {
    pub result: RunResult,
    /// Ids and prompt ids are prefixed with `s{seed}-`.
    pub scores: Vec<ScoredOutput>,
}

impl AttributionRun {
    /// Scores of one seed.
    pub fn seed_scores(&self, seed: u64) -> Vec<ScoredOutput> {
        let tag = format!("s{seed}-");
        self.scores.iter().filter(|s| s.id.starts_with(&tag)).cloned().collect()
    }
}

struct SeedOutcome {
    auc: f64,
    accuracy: f64,
    scores: Vec<ScoredOutput>,
    si_snr: Vec<f64>,
    fad_clean: Option<f64>,
    fad_watermarked: Option<f64>,
    silent_excluded: usize,
}

fn in_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match jobs {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(f),
    }
}

pub fn run_attribution(manifest: &ExperimentManifest, corpus: &PreparedCorpus) -> Result<AttributionRun> {
    run_attribution_with(manifest, corpus, &RunOptions::default())
}

/// Runs every seed of `manifest` and aggregates AUC over seeds.
pub fn run_attribution_with(
    manifest: &ExperimentManifest,
    corpus: &PreparedCorpus,
    options: &RunOptions,
) -> Result<AttributionRun> {
    manifest.validate()?;
    let detector = Detector::for_spec(
        &manifest.detector_spec()?,
        manifest.detector_params,
        manifest.target_sample_rate,
        manifest.prompt_seconds,
    )?;
    if let Some(dir) = &options.export_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let outcomes: Vec<SeedOutcome> = in_pool(options.jobs, || {
        manifest
            .seeds
            .iter()
            .map(|&seed| run_seed(manifest, corpus, &detector, seed, options))
            .collect()
    })?;

    let aucs: Vec<f64> = outcomes.iter().map(|o| o.auc).collect();
    let auc_stats = MeanSd::of(&aucs).expect("seeds are nonempty");
    let accuracies: Vec<f64> = outcomes.iter().map(|o| o.accuracy).collect();
    let si: Vec<f64> = outcomes.iter().flat_map(|o| o.si_snr.iter().copied()).filter(|v| v.is_finite()).collect();
    let collect = |f: fn(&SeedOutcome) -> Option<f64>| -> Option<MeanSd> {
        let v: Option<Vec<f64>> = outcomes.iter().map(f).collect();
        v.and_then(|v| MeanSd::of(&v))
    };
    let result = RunResult {
        watermark: manifest.label(),
        detector: detector.describe(),
        auc: auc_stats.mean,
        auc_sd: auc_stats.sd,
        auc_per_seed: aucs,
        seeds: manifest.seeds.clone(),
        detection_accuracy: MeanSd::of(&accuracies).map(|m| m.mean),
        fad_clean: collect(|o| o.fad_clean),
        fad_watermarked: collect(|o| o.fad_watermarked),
        kld_min: None,
        si_snr_stats: MeanSd::of(&si),
        pesq: None,
        n_prompts: manifest.n_prompts,
        continuations_per_prompt: manifest.continuations_per_prompt,
        n_outputs: outcomes.iter().map(|o| o.scores.len()).sum(),
        silent_excluded: outcomes.iter().map(|o| o.silent_excluded).sum(),
        manifest_hash: manifest.hash()?,
    };
    let scores = outcomes.into_iter().flat_map(|o| o.scores).collect::<Vec<_>>();
    if let Some(dir) = &options.export_dir {
        let rows: Vec<LabelRow> = scores
            .iter()
            .map(|s| LabelRow {
                file: format!("{}.wav", s.id),
                source_label: s.source_label,
                prompt_id: s.prompt_id.clone(),
                replicate: s.replicate,
            })
            .collect();
        write_labels_csv(&dir.join("labels.csv"), &rows)?;
    }
    Ok(AttributionRun { result, scores })
}

fn run_seed(
    manifest: &ExperimentManifest,
    corpus: &PreparedCorpus,
    detector: &Detector,
    seed: u64,
    options: &RunOptions,
) -> Result<SeedOutcome> {
    let state = corpus.seed_state(manifest, seed)?;
    let codebook = &state.codebook;
    let train = &state.split.train;
    let mask = selection_mask(train.len(), manifest.proportion_p, derive_seed(seed, SELECT_STREAM, 0))?;

    // Unselected clips are bit-identical, so their clean tokens are reused.
    let marked: Vec<(Vec<u32>, Option<f64>)> = train
        .par_iter()
        .zip(&state.clean_tokens)
        .zip(&mask)
        .map(|((&i, clean), &selected)| match (&manifest.watermark, selected) {
            (Some(wm), true) => {
                let audio = corpus.repeated(i, manifest.repeat_times)?;
                let embedded = wm.embed(&audio)?;
                let snr = if corpus.is_silent(i) { None } else { Some(si_snr(&audio, &embedded)?) };
                Ok((codebook.encode(&embedded)?, snr))
            }
            _ => Ok((clean.clone(), None)),
        })
        .collect::<Result<_>>()?;
    let si_snr_values: Vec<f64> = marked.iter().filter_map(|m| m.1).collect();
    let marked_tokens: Vec<Vec<u32>> = marked.into_iter().map(|m| m.0).collect();

    let k = codebook.size();
    let clean_model = train_ngram(&state.clean_tokens, manifest.model.order, k, manifest.model.smoothing)?;
    let marked_model = train_ngram(&marked_tokens, manifest.model.order, k, manifest.model.smoothing)?;
    drop(marked_tokens);

    let pool: Vec<usize> = state.split.val.iter().copied().filter(|&i| !corpus.is_silent(i)).collect();
    let silent_excluded = state.split.val.len() - pool.len();
    if silent_excluded > 0 {
        log::warn!("seed {seed}: excluded {silent_excluded} silent validation clips from prompts");
    }
    if pool.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if manifest.n_prompts > pool.len() {
        log::info!(
            "seed {seed}: {} prompts cycle over {} validation clips",
            manifest.n_prompts,
            pool.len()
        );
    }
    let prompt_tokens: Vec<Vec<u32>> = pool
        .par_iter()
        .map(|&i| {
            let clip = &corpus.clips()[i];
            let marked = match manifest.prompt_mark() {
                Some(wm) => wm.embed(clip)?,
                None => clip.clone(),
            };
            codebook.encode(&prefix(&marked, manifest.prompt_seconds)?)
        })
        .collect::<Result<_>>()?;

    let per_prompt = manifest.continuations_per_prompt;
    let length = manifest.continuation_tokens();
    let models: [(SourceLabel, &NGramModel); 2] =
        [(SourceLabel::Clean, &clean_model), (SourceLabel::Watermarked, &marked_model)];
    let extractor = default_extractor();
    let tasks: Vec<(usize, usize, usize)> = (0..manifest.n_prompts)
        .flat_map(|p| (0..per_prompt).flat_map(move |r| (0..2).map(move |m| (p, r, m))))
        .collect();
    let generated: Vec<(ScoredOutput, Option<Vec<f64>>)> = tasks
        .par_iter()
        .map(|&(p, r, m)| {
            let (label, model) = models[m];
            let task = ((p * per_prompt + r) * 2 + m) as u64;
            let config = GenerationConfig {
                top_k: manifest.generation.top_k,
                temperature: manifest.generation.temperature,
                seed: derive_seed(seed, GENERATE_STREAM, task),
                length,
            };
            let tokens = model.generate(&prompt_tokens[p % pool.len()], &config)?;
            let audio = codebook.decode(&tokens)?;
            let prompt_id = format!("s{seed}-p{p:03}");
            let id = format!("{prompt_id}-r{r:02}-{}", label.as_str());
            let embedding = if manifest.utility_metrics {
                Some(extractor.extract(&audio)?)
            } else {
                None
            };
            if let Some(dir) = &options.export_dir {
                store_wav(&audio, dir.join(format!("{id}.wav")), WavEncoding::Float32)?;
            }
            let score = detector.score(&audio)?;
            Ok((
                ScoredOutput {
                    id,
                    prompt_id,
                    replicate: r,
                    source_label: label,
                    score,
                },
                embedding,
            ))
        })
        .collect::<Result<_>>()?;

    let (fad_clean, fad_watermarked) = if manifest.utility_metrics {
        let reference: Vec<Vec<f64>> = state
            .split
            .test
            .par_iter()
            .map(|&i| extractor.extract(&corpus.clips()[i]))
            .collect::<Result<_>>()?;
        let reference = fit_gaussian(&reference)?;
        let fad_of = |label: SourceLabel| -> Result<f64> {
            let e: Vec<Vec<f64>> = generated
                .iter()
                .filter(|(s, _)| s.source_label == label)
                .filter_map(|(_, e)| e.clone())
                .collect();
            frechet_distance(&reference, &fit_gaussian(&e)?)
        };
        (Some(fad_of(SourceLabel::Clean)?), Some(fad_of(SourceLabel::Watermarked)?))
    } else {
        (None, None)
    };
    let scores: Vec<ScoredOutput> = generated.into_iter().map(|(s, _)| s).collect();
    let seed_auc = auc(&scores)?;
    let threshold = calibrate_threshold(&scores)?;
    let accuracy = detection_accuracy(&scores, threshold);
    log::info!("seed {seed}: AUC {seed_auc:.4} over {} continuations", scores.len());
    Ok(SeedOutcome {
        auc: seed_auc,
        accuracy,
        scores,
        si_snr: si_snr_values,
        fad_clean,
        fad_watermarked,
        silent_excluded,
    })
}

/// Attribution run with `continuations_per_prompt = n` plus the AUC of the
/// best-scoring continuation among the first `n_used`, for every `n_used`.
#[derive(Debug, Clone)]
pub struct BestOfNRun {
    pub run: AttributionRun,
    pub table: SweepTable,
}

pub fn run_best_of_n(manifest: &ExperimentManifest, corpus: &PreparedCorpus, options: &RunOptions) -> Result<BestOfNRun> {
    let run = run_attribution_with(manifest, corpus, options)?;
    let n = manifest.continuations_per_prompt;
    let rows = (1..=n)
        .map(|n_used| {
            let aucs: Vec<f64> = manifest
                .seeds
                .iter()
                .map(|&seed| auc(&best_of_n_outputs(&run.seed_scores(seed), n_used)?))
                .collect::<Result<_>>()?;
            Ok(SweepRow::new(n_used as f64, vec![MeanSd::of(&aucs)], aucs))
        })
        .collect::<Result<_>>()?;
    let table = SweepTable {
        title: format!("best-of-n AUC, {}", manifest.label()),
        param: "n".into(),
        columns: vec!["auc".into()],
        rows,
        manifest_hash: manifest.hash()?,
    };
    Ok(BestOfNRun { run, table })
}

/// Mean AUC over seeds at each training proportion.
pub fn sweep_proportion(
    manifest: &ExperimentManifest,
    corpus: &PreparedCorpus,
    proportions: &[f64],
    options: &RunOptions,
) -> Result<SweepTable> {
    if proportions.is_empty() {
        return Err(Error::Config("no proportions to sweep".into()));
    }
    let rows = proportions
        .iter()
        .map(|&p| {
            let mut m = manifest.clone();
            m.proportion_p = p;
            let run = run_attribution_with(&m, corpus, options)?;
            let r = run.result;
            Ok(SweepRow::new(p, vec![MeanSd::of(&r.auc_per_seed)], r.auc_per_seed))
        })
        .collect::<Result<_>>()?;
    Ok(SweepTable {
        title: format!("AUC by proportion, {}", manifest.label()),
        param: "p".into(),
        columns: vec!["auc".into()],
        rows,
        manifest_hash: manifest.hash()?,
    })
}
