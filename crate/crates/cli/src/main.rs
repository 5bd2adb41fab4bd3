//! `provmark`: watermark audio, score detectors, and run attribution
//! experiments from the command line.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use provmark::audio::{apply_attack, load_wav, store_wav, AttackSpec, WavEncoding};
use provmark::detect::{auc, calibrate_threshold, detection_accuracy, Detector, MelParams};
use provmark::error::{Error, ErrorKind};
use provmark::harness::{
    ingest_external_outputs, merge_pesq, read_embeddings_csv, read_label_distribution_csv, read_pesq_csv, render_run, render_sweep, robustness_sweep,
    run_attribution_with, run_best_of_n, score_outputs, sweep_proportion, write_run_dir, write_synthetic_dataset,
    ExperimentManifest, PreparedCorpus, ReportFormat, RunOptions, RunResult, SweepTable, SyntheticCorpus,
};
use provmark::metrics::{
    default_extractor, fad, fit_gaussian, frechet_distance, kld_min, si_snr, EmbeddingExtractor,
    MetricReport,
};
use provmark::toygen::{
    fit_codebook_with, load_codebook, save_codebook, tokens_from_json, tokens_to_json, FeatureParams, KMeansOptions,
};
use provmark::watermark::{ComposedWatermark, Embedder, WatermarkSpec};

#[derive(Parser)]
#[command(name = "provmark", version, about = "Audio watermarking and training-data attribution toolkit")]
struct Cli {
    /// Log progress to standard error.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Embed a tone-family watermark into a WAV file.
    Embed(EmbedArgs),
    /// Score a WAV file, or a labelled directory of outputs, with the mel-band detector.
    Detect(DetectArgs),
    /// Apply a signal-processing attack to a WAV file.
    Attack(AttackArgs),
    /// Compute SI-SNR, FAD or min-KLD.
    Metrics(MetricsArgs),
    /// Fit a codebook, or encode and decode audio with one.
    Tokenize(TokenizeArgs),
    /// Run the attribution experiment described by a manifest.
    Experiment(ExperimentArgs),
    /// Sweep the training proportion, embedding count or continuation count.
    Sweep(SweepArgs),
    /// Render a run or sweep directory as csv, json or markdown.
    Report(ReportArgs),
    /// Write the synthetic corpus as a dataset directory.
    Corpus(CorpusArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Encoding {
    Pcm16,
    Float32,
}

impl From<Encoding> for WavEncoding {
    fn from(e: Encoding) -> Self {
        match e {
            Encoding::Pcm16 => WavEncoding::Pcm16,
            Encoding::Float32 => WavEncoding::Float32,
        }
    }
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Watermark shorthand: tone:F, switch:F:F2:D, alternate:F:F2:D or stop:F:D.
    #[arg(long)]
    wm: WatermarkSpec,
    /// Tone amplitude relative to the input RMS.
    #[arg(long, default_value_t = 1.0)]
    strength: f64,
    /// Number of successive embeddings.
    #[arg(long, default_value_t = 1)]
    times: usize,
    #[arg(long, value_enum, default_value_t = Encoding::Float32)]
    encoding: Encoding,
}

#[derive(Args, Clone, Copy)]
struct MelArgs {
    #[arg(long, default_value_t = 128)]
    n_mels: usize,
    #[arg(long, default_value_t = 2048)]
    n_fft: usize,
    #[arg(long, default_value_t = 512)]
    hop: usize,
}

impl From<MelArgs> for MelParams {
    fn from(a: MelArgs) -> Self {
        MelParams {
            n_mels: a.n_mels,
            n_fft: a.n_fft,
            hop: a.hop,
        }
    }
}

#[derive(Args)]
struct DetectArgs {
    /// Single WAV file to score.
    #[arg(long = "in", conflicts_with_all = ["labels", "dir"], required_unless_present = "labels")]
    input: Option<PathBuf>,
    /// Labels CSV (file, source_label, prompt_id, replicate) for a directory of outputs.
    #[arg(long, requires = "dir")]
    labels: Option<PathBuf>,
    /// Directory holding the files named in --labels.
    #[arg(long, requires = "labels")]
    dir: Option<PathBuf>,
    /// Watermark whose detector to apply.
    #[arg(long)]
    wm: WatermarkSpec,
    /// Seconds of the watermark timeline that precede the scored audio.
    #[arg(long, default_value_t = 0.0)]
    offset: f64,
    /// Print machine-readable JSON to standard output.
    #[arg(long)]
    json: bool,
    /// Write per-file scores here (with --labels).
    #[arg(long, requires = "labels")]
    scores_out: Option<PathBuf>,
    #[command(flatten)]
    mel: MelArgs,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// highpass:HZ, lowpass:HZ, quantize:BITS or noise:SNR_DB:SEED.
    #[arg(long)]
    attack: AttackSpec,
    #[arg(long, value_enum, default_value_t = Encoding::Float32)]
    encoding: Encoding,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Sisnr,
    Fad,
    Kld,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long, value_enum)]
    metric: Metric,
    /// Reference: WAV (sisnr), WAV directory or embeddings CSV (fad), label,prob CSV (kld).
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Degraded or generated counterpart, same kinds as --ref.
    #[arg(long)]
    deg: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct TokenizeArgs {
    /// Codebook file to read, or to write with --fit.
    #[arg(long)]
    codebook: PathBuf,
    /// Fit a new codebook on the WAV dataset in this directory.
    #[arg(long, conflicts_with_all = ["input", "decode"])]
    fit: Option<PathBuf>,
    /// WAV to encode, or token JSON with --decode.
    #[arg(long = "in", required_unless_present = "fit")]
    input: Option<PathBuf>,
    /// Token JSON, or WAV with --decode.
    #[arg(long, required_unless_present = "fit")]
    out: Option<PathBuf>,
    /// Decode tokens to audio instead of encoding.
    #[arg(long)]
    decode: bool,
    /// Codebook size for --fit.
    #[arg(long, default_value_t = 256)]
    k: usize,
    /// k-means seed for --fit.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Resample the fitting data to this rate.
    #[arg(long, default_value_t = 32_000)]
    sample_rate: u32,
    #[command(flatten)]
    mel: MelArgs,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Also write every continuation as a WAV with labels.csv under out-dir/outputs.
    #[arg(long)]
    export_outputs: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepParam {
    /// Training proportion watermarked.
    P,
    /// Number of successive embeddings, scored through the codec or --attack.
    K,
    /// Continuations per prompt, best-of-n.
    N,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum)]
    param: SweepParam,
    /// Comma-separated values, e.g. 0.01,0.1,0.5.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Channel for --param k instead of the codec round trip.
    #[arg(long)]
    attack: Option<AttackSpec>,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
    Markdown,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Json => ReportFormat::Json,
            Format::Markdown => ReportFormat::Markdown,
        }
    }
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Markdown)]
    format: Format,
    /// Adapter PESQ CSV (file, pesq) merged into results.json first.
    #[arg(long)]
    pesq: Option<PathBuf>,
}

#[derive(Args)]
struct CorpusArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 200)]
    clips: usize,
    #[arg(long, default_value_t = 10.0)]
    seconds: f64,
    #[arg(long, default_value_t = 48_000)]
    sample_rate: u32,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.kind() {
            ErrorKind::Numeric => 3,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Error::from(e).into()
    }
}

type CliResult = Result<(), Failure>;

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: 2,
        message: format!("{}: {e}", path.display()),
    }
}

fn write_file(path: &Path, text: &str) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn stdout_line(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}");
}

fn embed_cmd(a: EmbedArgs) -> CliResult {
    let audio = load_wav(&a.input)?;
    let wm = ComposedWatermark {
        spec: a.wm.with_strength(a.strength),
        times: a.times,
    };
    wm.spec.validate()?;
    let marked = wm.embed(&audio)?;
    store_wav(&marked, &a.out, a.encoding.into())?;
    log::info!("embedded {} into {}", wm.name(), a.out.display());
    Ok(())
}

fn detect_cmd(a: DetectArgs) -> CliResult {
    let params: MelParams = a.mel.into();
    if let Some(input) = &a.input {
        let audio = load_wav(input)?;
        let detector = Detector::for_spec(&a.wm, params, audio.sample_rate(), a.offset)?;
        let score = detector.score(&audio)?;
        if a.json {
            stdout_line(&serde_json::json!({ "score": score }).to_string());
        } else {
            stdout_line(&score.to_string());
        }
        return Ok(());
    }
    let (labels, dir) = (a.labels.as_ref().expect("clap"), a.dir.as_ref().expect("clap"));
    let outputs = ingest_external_outputs(dir, labels)?;
    let detector = Detector::for_spec(&a.wm, params, outputs[0].audio.sample_rate(), a.offset)?;
    let scores = score_outputs(&outputs, &detector)?;
    if let Some(path) = &a.scores_out {
        provmark::detect::write_scores_csv(path, &scores)?;
    }
    let value = auc(&scores)?;
    let accuracy = detection_accuracy(&scores, calibrate_threshold(&scores)?);
    if a.json {
        let json = serde_json::json!({
            "auc": value,
            "detection_accuracy": accuracy,
            "n_outputs": scores.len(),
            "detector": detector.describe(),
        });
        stdout_line(&json.to_string());
    } else {
        stdout_line(&format!("AUC {value:.4} over {} outputs ({})", scores.len(), detector.describe()));
    }
    Ok(())
}

fn attack_cmd(a: AttackArgs) -> CliResult {
    let audio = load_wav(&a.input)?;
    store_wav(&apply_attack(&audio, &a.attack)?, &a.out, a.encoding.into())?;
    Ok(())
}

fn wav_dir(dir: &Path) -> Result<Vec<provmark::AudioBuffer>, Failure> {
    Ok(provmark::harness::load_dataset_dir(dir)?.into_iter().map(|i| i.audio).collect())
}

fn metrics_cmd(a: MetricsArgs) -> CliResult {
    let report = match a.metric {
        Metric::Sisnr => {
            let value = si_snr(&load_wav(&a.reference)?, &load_wav(&a.deg)?)?;
            MetricReport {
                metric: "si_snr".into(),
                value,
                n_reference: 1,
                n_generated: 1,
                extractor_name: None,
            }
        }
        Metric::Fad => {
            if a.reference.is_dir() != a.deg.is_dir() {
                return Err(Failure {
                    code: 1,
                    message: "--ref and --deg must both be WAV directories or both embeddings CSVs".into(),
                });
            }
            if a.reference.is_dir() {
                let (r, g) = (wav_dir(&a.reference)?, wav_dir(&a.deg)?);
                let extractor = default_extractor();
                MetricReport {
                    metric: "fad".into(),
                    value: fad(&r, &g, &extractor)?,
                    n_reference: r.len(),
                    n_generated: g.len(),
                    extractor_name: Some(extractor.name()),
                }
            } else {
                let (r, g) = (read_embeddings_csv(&a.reference)?, read_embeddings_csv(&a.deg)?);
                MetricReport {
                    metric: "fad".into(),
                    value: frechet_distance(&fit_gaussian(&r)?, &fit_gaussian(&g)?)?,
                    n_reference: r.len(),
                    n_generated: g.len(),
                    extractor_name: Some("external".into()),
                }
            }
        }
        Metric::Kld => MetricReport {
            metric: "kld_min".into(),
            value: kld_min(
                &read_label_distribution_csv(&a.reference)?,
                &read_label_distribution_csv(&a.deg)?,
            )?,
            n_reference: 1,
            n_generated: 1,
            extractor_name: None,
        },
    };
    if a.json {
        stdout_line(&serde_json::to_string(&report)?);
    } else {
        stdout_line(&report.value.to_string());
    }
    Ok(())
}

fn tokenize_cmd(a: TokenizeArgs) -> CliResult {
    let params: FeatureParams = a.mel.into();
    if let Some(dir) = &a.fit {
        let corpus = PreparedCorpus::from_dir(dir, a.sample_rate)?;
        let codebook = fit_codebook_with(corpus.clips(), a.k, params, a.seed, KMeansOptions::default())?;
        save_codebook(&a.codebook, &codebook)?;
        log::info!("fitted {} centroids on {} clips", a.k, corpus.len());
        return Ok(());
    }
    let (input, out) = (a.input.as_ref().expect("clap"), a.out.as_ref().expect("clap"));
    let codebook = load_codebook(&a.codebook)?;
    if a.decode {
        let text = std::fs::read_to_string(input).map_err(|e| io_err(input, e))?;
        let audio = codebook.decode(&tokens_from_json(&text)?)?;
        store_wav(&audio, out, WavEncoding::Float32)?;
    } else {
        let audio = load_wav(input)?;
        let audio = if audio.sample_rate() == codebook.sample_rate() {
            audio
        } else {
            provmark::audio::resample(&audio, codebook.sample_rate())?
        };
        write_file(out, &(tokens_to_json(&codebook.encode(&audio)?)? + "\n"))?;
    }
    Ok(())
}

fn load_manifest(path: &Path) -> Result<ExperimentManifest, Failure> {
    Ok(ExperimentManifest::load(path)?)
}

fn experiment_cmd(a: ExperimentArgs) -> CliResult {
    let manifest = load_manifest(&a.manifest)?;
    let corpus = PreparedCorpus::for_manifest(&manifest)?;
    let options = RunOptions {
        jobs: a.jobs,
        export_dir: a.export_outputs.then(|| a.out_dir.join("outputs")),
    };
    let run = if manifest.continuations_per_prompt > 1 {
        let best = run_best_of_n(&manifest, &corpus, &options)?;
        write_sweep_dir(&a.out_dir, &best.table)?;
        best.run
    } else {
        run_attribution_with(&manifest, &corpus, &options)?
    };
    write_run_dir(&a.out_dir, &manifest, &run.result, &run.scores)?;
    stdout_line(&format!("AUC {:.4} ± {:.4}", run.result.auc, run.result.auc_sd));
    Ok(())
}

const SWEEP_STEM: &str = "sweep";

fn write_sweep_dir(dir: &Path, table: &SweepTable) -> CliResult {
    for f in [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Markdown] {
        write_file(&dir.join(format!("{SWEEP_STEM}.{}", f.extension())), &render_sweep(table, f)?)?;
    }
    Ok(())
}

fn sweep_cmd(a: SweepArgs) -> CliResult {
    let manifest = load_manifest(&a.manifest)?;
    let corpus = PreparedCorpus::for_manifest(&manifest)?;
    let options = RunOptions {
        jobs: a.jobs,
        export_dir: None,
    };
    let counts = |name: &str| -> Result<Vec<usize>, Failure> {
        a.values
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(Failure {
                        code: 1,
                        message: format!("--values for {name} must be whole numbers, got {v}"),
                    })
                }
            })
            .collect()
    };
    if a.attack.is_some() && !matches!(a.param, SweepParam::K) {
        return Err(Failure {
            code: 1,
            message: "--attack applies only to --param k".into(),
        });
    }
    let table = match a.param {
        SweepParam::P => sweep_proportion(&manifest, &corpus, &a.values, &options)?,
        SweepParam::K => robustness_sweep(&manifest, &corpus, &counts("k")?, a.attack.as_ref())?,
        SweepParam::N => {
            let ns = counts("n")?;
            let max = ns.iter().copied().max().unwrap_or(0);
            if ns.contains(&0) {
                return Err(Failure {
                    code: 1,
                    message: "--values for n must be at least 1".into(),
                });
            }
            let mut m = manifest.clone();
            m.continuations_per_prompt = max;
            let mut table = run_best_of_n(&m, &corpus, &options)?.table;
            table.rows.retain(|r| ns.contains(&(r.value as usize)));
            table
        }
    };
    write_sweep_dir(&a.out_dir, &table)?;
    stdout_line(render_sweep(&table, ReportFormat::Markdown)?.trim_end());
    Ok(())
}

fn report_cmd(a: ReportArgs) -> CliResult {
    let format: ReportFormat = a.format.into();
    let results = a.run_dir.join("results.json");
    let sweep = a.run_dir.join(format!("{SWEEP_STEM}.json"));
    let mut rendered = Vec::new();
    if results.exists() {
        let text = std::fs::read_to_string(&results).map_err(|e| io_err(&results, e))?;
        let mut result: RunResult = serde_json::from_str(&text)?;
        if let Some(pesq) = &a.pesq {
            merge_pesq(&mut result, &read_pesq_csv(pesq)?);
            write_file(&results, &render_run(&result, ReportFormat::Json)?)?;
        }
        let text = render_run(&result, format)?;
        write_file(&a.run_dir.join(format!("report.{}", format.extension())), &text)?;
        rendered.push(text);
    } else if a.pesq.is_some() {
        return Err(Error::Config(format!("--pesq needs {}", results.display())).into());
    }
    if sweep.exists() {
        let text = std::fs::read_to_string(&sweep).map_err(|e| io_err(&sweep, e))?;
        let table: SweepTable = serde_json::from_str(&text)?;
        let text = render_sweep(&table, format)?;
        write_file(&a.run_dir.join(format!("sweep_report.{}", format.extension())), &text)?;
        rendered.push(text);
    }
    if rendered.is_empty() {
        return Err(Failure {
            code: 2,
            message: format!("{} holds neither results.json nor {SWEEP_STEM}.json", a.run_dir.display()),
        });
    }
    stdout_line(rendered.join("\n").trim_end());
    Ok(())
}

fn corpus_cmd(a: CorpusArgs) -> CliResult {
    let corpus = SyntheticCorpus {
        clips: a.clips,
        seconds: a.seconds,
        sample_rate: a.sample_rate,
        seed: a.seed,
    };
    let entries = write_synthetic_dataset(&corpus, &a.out_dir)?;
    log::info!("wrote {} clips to {}", entries.len(), a.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.verbose {
        "info"
    } else {
        "warn"
    }))
    .init();
    let result = match cli.verb {
        Verb::Embed(a) => embed_cmd(a),
        Verb::Detect(a) => detect_cmd(a),
        Verb::Attack(a) => attack_cmd(a),
        Verb::Metrics(a) => metrics_cmd(a),
        Verb::Tokenize(a) => tokenize_cmd(a),
        Verb::Experiment(a) => experiment_cmd(a),
        Verb::Sweep(a) => sweep_cmd(a),
        Verb::Report(a) => report_cmd(a),
        Verb::Corpus(a) => corpus_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
