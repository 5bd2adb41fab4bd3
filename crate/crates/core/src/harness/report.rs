use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::manifest::ExperimentManifest;
use crate::detect::{write_scores_csv, ScoredOutput};
use crate::error::{Error, Result};
use crate::metrics::MeanSd;

/// Aggregate outcome of one attribution experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub watermark: String,
    pub detector: String,
    /// Mean of the per-seed AUCs.
    pub auc: f64,
    pub auc_sd: f64,
    pub auc_per_seed: Vec<f64>,
    pub seeds: Vec<u64>,
    /// At a threshold on the 95th percentile of clean scores, mean over seeds.
    pub detection_accuracy: Option<f64>,
    pub fad_clean: Option<MeanSd>,
    pub fad_watermarked: Option<MeanSd>,
    pub kld_min: Option<MeanSd>,
    /// SI-SNR of the embedded training clips.
    pub si_snr_stats: Option<MeanSd>,
    pub pesq: Option<MeanSd>,
    pub n_prompts: usize,
    pub continuations_per_prompt: usize,
    pub n_outputs: usize,
    pub silent_excluded: usize,
    pub manifest_hash: String,
}

/// One swept parameter value with per-column mean ± sd.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub cells: Vec<Option<MeanSd>>,
    /// Per-seed values of the first column.
    pub per_seed: Vec<f64>,
}

impl SweepRow {
    pub fn new(value: f64, cells: Vec<Option<MeanSd>>, per_seed: Vec<f64>) -> Self {
        Self { value, cells, per_seed }
    }

    pub fn mean(&self, column: usize) -> Option<f64> {
        self.cells.get(column).copied().flatten().map(|c| c.mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub title: String,
    pub param: String,
    pub columns: Vec<String>,
    pub rows: Vec<SweepRow>,
    pub manifest_hash: String,
}

impl SweepTable {
    /// Means of `column` in row order; missing cells become NaN.
    pub fn column_means(&self, column: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.mean(column).unwrap_or(f64::NAN)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
            ReportFormat::Markdown => "md",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }
}

fn fmt_stat(stat: Option<MeanSd>, digits: usize) -> String {
    match stat {
        None => "N/A".into(),
        Some(s) if s.n > 1 => format!("{:.*} ± {:.*}", digits, s.mean, digits, s.sd),
        Some(s) => format!("{:.*}", digits, s.mean),
    }
}

fn csv_pair(stat: Option<MeanSd>) -> [String; 2] {
    match stat {
        None => [String::new(), String::new()],
        Some(s) => [s.mean.to_string(), s.sd.to_string()],
    }
}

fn csv_line(fields: &[String]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(fields)?;
    let bytes = w.into_inner().map_err(|e| Error::BadCsv(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn render_run(result: &RunResult, format: ReportFormat) -> Result<String> {
    let auc = Some(MeanSd {
        mean: result.auc,
        sd: result.auc_sd,
        n: result.auc_per_seed.len(),
    });
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(result)? + "\n"),
        ReportFormat::Markdown => {
            let mut s = String::new();
            s.push_str("| Watermark | AUC | PESQ | SI-SNR | FAD | KLD |\n");
            s.push_str("|---|---|---|---|---|---|\n");
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | {} |",
                result.watermark,
                fmt_stat(auc, 4),
                fmt_stat(result.pesq, 2),
                fmt_stat(result.si_snr_stats, 2),
                fmt_stat(result.fad_watermarked, 4),
                fmt_stat(result.kld_min, 4),
            );
            s.push('\n');
            let per_seed: Vec<String> = result
                .seeds
                .iter()
                .zip(&result.auc_per_seed)
                .map(|(seed, a)| format!("seed {seed}: {a:.4}"))
                .collect();
            let _ = writeln!(s, "Per-seed AUC: {}", per_seed.join(", "));
            let _ = writeln!(s, "Detector: {}", result.detector);
            if let Some(acc) = result.detection_accuracy {
                let _ = writeln!(s, "Detection accuracy: {acc:.4}");
            }
            if result.fad_clean.is_some() {
                let _ = writeln!(s, "FAD of the clean model: {}", fmt_stat(result.fad_clean, 4));
            }
            let _ = writeln!(
                s,
                "Outputs: {} ({} prompts × {} per prompt × 2 models × {} seeds)",
                result.n_outputs,
                result.n_prompts,
                result.continuations_per_prompt,
                result.seeds.len()
            );
            let _ = writeln!(s, "Manifest: {}", result.manifest_hash);
            Ok(s)
        }
        ReportFormat::Csv => {
            let header = [
                "watermark",
                "auc",
                "auc_sd",
                "pesq",
                "pesq_sd",
                "si_snr",
                "si_snr_sd",
                "fad",
                "fad_sd",
                "fad_clean",
                "fad_clean_sd",
                "kld",
                "kld_sd",
                "detection_accuracy",
                "n_outputs",
                "manifest_hash",
            ];
            let mut row = vec![result.watermark.clone(), result.auc.to_string(), result.auc_sd.to_string()];
            for stat in [result.pesq, result.si_snr_stats, result.fad_watermarked, result.fad_clean, result.kld_min] {
                row.extend(csv_pair(stat));
            }
            row.push(result.detection_accuracy.map(|a| a.to_string()).unwrap_or_default());
            row.push(result.n_outputs.to_string());
            row.push(result.manifest_hash.clone());
            let header: Vec<String> = header.iter().map(|h| h.to_string()).collect();
            Ok(csv_line(&header)? + &csv_line(&row)?)
        }
    }
}

pub fn render_sweep(table: &SweepTable, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(table)? + "\n"),
        ReportFormat::Markdown => {
            let mut s = String::new();
            let _ = writeln!(s, "{}\n", table.title);
            let _ = writeln!(s, "| {} | {} |", table.param, table.columns.join(" | "));
            let _ = writeln!(s, "|---|{}", "---|".repeat(table.columns.len()));
            for row in &table.rows {
                let cells: Vec<String> = row.cells.iter().map(|c| fmt_stat(*c, 4)).collect();
                let _ = writeln!(s, "| {} | {} |", row.value, cells.join(" | "));
            }
            let _ = writeln!(s, "\nManifest: {}", table.manifest_hash);
            Ok(s)
        }
        ReportFormat::Csv => {
            let mut header = vec![table.param.clone()];
            for c in &table.columns {
                header.push(c.clone());
                header.push(format!("{c}_sd"));
            }
            let mut out = csv_line(&header)?;
            for row in &table.rows {
                let mut fields = vec![row.value.to_string()];
                for c in &row.cells {
                    fields.extend(csv_pair(*c));
                }
                out += &csv_line(&fields)?;
            }
            Ok(out)
        }
    }
}

pub const RESULTS_FILE: &str = "results.json";
pub const SCORES_FILE: &str = "scores.csv";
pub const SUMMARY_FILE: &str = "summary.md";
pub const MANIFEST_FILE: &str = "manifest.json";

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `results.json`, `scores.csv`, `summary.md` and the canonical
/// manifest into `dir`.
pub fn write_run_dir(
    dir: &Path,
    manifest: &ExperimentManifest,
    result: &RunResult,
    scores: &[ScoredOutput],
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let canonical: serde_json::Value = serde_json::from_str(&manifest.canonical_json()?)?;
    write(&dir.join(MANIFEST_FILE), &(serde_json::to_string_pretty(&canonical)? + "\n"))?;
    write(&dir.join(RESULTS_FILE), &render_run(result, ReportFormat::Json)?)?;
    write(&dir.join(SUMMARY_FILE), &render_run(result, ReportFormat::Markdown)?)?;
    write_scores_csv(&dir.join(SCORES_FILE), scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(seeds: usize) -> RunResult {
        RunResult {
            watermark: "tone:440".into(),
            detector: "presence in band 18 (441.9 Hz)".into(),
            auc: 0.75,
            auc_sd: 0.0125,
            auc_per_seed: vec![0.75; seeds],
            seeds: (0..seeds as u64).collect(),
            detection_accuracy: Some(0.6),
            fad_clean: None,
            fad_watermarked: None,
            kld_min: None,
            si_snr_stats: Some(MeanSd { mean: 3.0103, sd: 0.001, n: 60 }),
            pesq: None,
            n_prompts: 200,
            continuations_per_prompt: 1,
            n_outputs: 400 * seeds,
            silent_excluded: 0,
            manifest_hash: "ab".repeat(32),
        }
    }

    #[test]
    fn markdown_mirrors_table_columns() {
        let md = render_run(&result(3), ReportFormat::Markdown).unwrap();
        assert!(md.starts_with("| Watermark | AUC | PESQ | SI-SNR | FAD | KLD |"));
        assert!(md.contains("| tone:440 | 0.7500 ± 0.0125 | N/A | 3.01 ± 0.00 | N/A | N/A |"));
        let single = render_run(&result(1), ReportFormat::Markdown).unwrap();
        assert!(single.contains("| tone:440 | 0.7500 | N/A |"));
    }

    #[test]
    fn renderings_are_deterministic_and_json_round_trips() {
        let r = result(3);
        for f in [ReportFormat::Csv, ReportFormat::Json, ReportFormat::Markdown] {
            assert_eq!(render_run(&r, f).unwrap(), render_run(&r, f).unwrap());
        }
        let back: RunResult = serde_json::from_str(&render_run(&r, ReportFormat::Json).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn csv_has_header_and_one_row() {
        let text = render_run(&result(3), ReportFormat::Csv).unwrap();
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let headers = rdr.headers().unwrap().clone();
        let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 1);
        let auc = headers.iter().position(|h| h == "auc").unwrap();
        assert_eq!(&rows[0][auc], "0.75");
        let pesq = headers.iter().position(|h| h == "pesq").unwrap();
        assert_eq!(&rows[0][pesq], "");
    }

    #[test]
    fn sweep_renders() {
        let t = SweepTable {
            title: "AUC by proportion".into(),
            param: "p".into(),
            columns: vec!["auc".into()],
            rows: vec![
                SweepRow::new(0.1, vec![MeanSd::of(&[0.6, 0.62])], vec![0.6, 0.62]),
                SweepRow::new(0.5, vec![None], vec![]),
            ],
            manifest_hash: "00".into(),
        };
        let md = render_sweep(&t, ReportFormat::Markdown).unwrap();
        assert!(md.contains("| 0.1 | 0.6100 ± 0.0141 |"));
        assert!(md.contains("| 0.5 | N/A |"));
        let csv = render_sweep(&t, ReportFormat::Csv).unwrap();
        assert!(csv.starts_with("p,auc,auc_sd\n0.1,0.61,"));
        let back: SweepTable = serde_json::from_str(&render_sweep(&t, ReportFormat::Json).unwrap()).unwrap();
        assert_eq!(back, t);
        assert!(t.column_means(0)[1].is_nan());
    }
}
