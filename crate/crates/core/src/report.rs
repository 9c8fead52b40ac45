//! Comparison tables, heatmap data and dataset summaries.
//!
//! Everything is computed at full precision; rounding happens only when a
//! table is rendered.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::detectors::{DetectorId, DetectorVerdict};
use crate::generation::ImageRecord;
use crate::groundtruth::{DatasetSummary, LabelCategory};
use crate::metrics::{
    self, category_bias_score, classification_metrics, counts_by_category, counts_from_truth,
    counts_from_verdicts, filtering_metrics, model_bias_pct_difference, model_bias_score,
    pbs_difference_by_prompt, prompt_bias_score, ClassificationReport, FilteringReport, GenderCounts,
    Mean,
};
use crate::prompts::{PromptCategory, PromptSpec};

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("{detector} verdicts are missing {count} manifest image(s): {sample}")]
    MissingVerdicts { detector: DetectorId, count: usize, sample: String },
    #[error("ground truth: {0}")]
    Truth(metrics::MetricError),
}

/// Rounds half away from zero. A small relative slack absorbs binary
/// representation error, so 0.125 rounds to 0.13 even though it is stored
/// as 0.12499999...
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    let m = 10f64.powi(decimals as i32);
    let scaled = x.abs() * m;
    let r = (scaled + 0.5 + scaled * 1e-12).floor() / m;
    if x < 0.0 && r != 0.0 {
        -r
    } else {
        r
    }
}

pub fn fmt_fixed(x: f64, decimals: u32) -> String {
    format!("{:.*}", decimals as usize, round_half_up(x, decimals))
}

/// `-` for undefined values, as in the published tables.
pub fn fmt_opt(x: Option<f64>, decimals: u32) -> String {
    x.map_or_else(|| "-".to_string(), |v| fmt_fixed(v, decimals))
}

fn fmt_pct(x: Option<f64>) -> String {
    fmt_opt(x.map(|v| v * 100.0), 2)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthSection {
    pub per_prompt: Vec<PromptScore>,
    pub per_category: BTreeMap<PromptCategory, Option<f64>>,
    pub model_bias: Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptScore {
    pub prompt_id: String,
    pub counts: GenderCounts,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectorRow {
    pub detector: DetectorId,
    pub per_prompt: Vec<PromptScore>,
    /// `None` when no prompt has a classified image (e.g. every call failed).
    pub model_bias: Option<Mean>,
    pub pct_difference: Option<f64>,
    pub pbs_difference: Option<Mean>,
    pub filtering: FilteringReport,
    pub classification: ClassificationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasReport {
    pub backend_id: String,
    pub truth: TruthSection,
    pub detectors: Vec<DetectorRow>,
}

fn prompt_scores(counts: Vec<GenderCounts>) -> Vec<PromptScore> {
    counts
        .into_iter()
        .map(|c| PromptScore { prompt_id: c.prompt_id.clone(), score: prompt_bias_score(&c), counts: c })
        .collect()
}

/// Ground-truth scores plus one row per detector for the images in
/// `records` (normally one backend's part of the manifest).
pub fn compare_detectors(
    backend_id: &str,
    records: &[ImageRecord],
    suite: &[PromptSpec],
    truth: &HashMap<String, LabelCategory>,
    verdict_sets: &[(DetectorId, Vec<DetectorVerdict>)],
) -> Result<BiasReport, ReportError> {
    let truth_counts = counts_from_truth(records, truth);
    let truth_mbs = model_bias_score(&truth_counts).map_err(ReportError::Truth)?;
    let per_category = counts_by_category(&truth_counts, suite)
        .into_iter()
        .map(|(cat, subset)| (cat, category_bias_score(&subset).ok().map(|m| m.value)))
        .collect();

    let ids: HashSet<&str> = records.iter().map(|r| r.image_id.as_str()).collect();
    let mut rows = Vec::new();
    for (detector, verdicts) in verdict_sets {
        let have: HashSet<&str> = verdicts.iter().map(|v| v.image_id.as_str()).collect();
        let missing: Vec<&str> = records
            .iter()
            .map(|r| r.image_id.as_str())
            .filter(|id| !have.contains(id))
            .collect();
        if !missing.is_empty() {
            return Err(ReportError::MissingVerdicts {
                detector: *detector,
                count: missing.len(),
                sample: missing.iter().take(5).copied().collect::<Vec<_>>().join(", "),
            });
        }
        let verdicts: Vec<DetectorVerdict> =
            verdicts.iter().filter(|v| ids.contains(v.image_id.as_str())).cloned().collect();
        let counts = counts_from_verdicts(records, &verdicts);
        let mbs = model_bias_score(&counts).ok();
        rows.push(DetectorRow {
            detector: *detector,
            pct_difference: mbs.and_then(|m| model_bias_pct_difference(m.value, truth_mbs.value).ok()),
            pbs_difference: pbs_difference_by_prompt(&counts, &truth_counts).ok(),
            model_bias: mbs,
            per_prompt: prompt_scores(counts),
            filtering: filtering_metrics(&verdicts, truth),
            classification: classification_metrics(&verdicts, truth),
        });
    }
    Ok(BiasReport {
        backend_id: backend_id.to_string(),
        truth: TruthSection { per_prompt: prompt_scores(truth_counts), per_category, model_bias: truth_mbs },
        detectors: rows,
    })
}

/// Score with the over/underestimate annotation, e.g. `0.686 (8.78% ↓)`.
pub fn fmt_score_with_arrow(mbs: Option<f64>, pct: Option<f64>) -> String {
    match (mbs, pct) {
        (Some(m), Some(p)) => {
            let arrow = if round_half_up(p, 2) > 0.0 {
                " ↑"
            } else if round_half_up(p, 2) < 0.0 {
                " ↓"
            } else {
                ""
            };
            format!("{} ({}%{arrow})", fmt_fixed(m, 3), fmt_fixed(p.abs(), 2))
        }
        (Some(m), None) => fmt_fixed(m, 3),
        _ => "-".to_string(),
    }
}

pub fn render_markdown(reports: &[BiasReport]) -> String {
    let mut out = String::from("# Detector comparison\n");
    for r in reports {
        let _ = writeln!(out, "\n## {}\n", r.backend_id);
        out.push_str("| Detector | Model bias | PBS difference | Precision | Recall | F1 | Filter rate | Acc. male | Acc. female | Acc. overall | Gap |\n");
        out.push_str("|---|---|---|---|---|---|---|---|---|---|---|\n");
        let truth = &r.truth.model_bias;
        let _ = writeln!(out, "| Ground Truth | {} | - | - | - | - | - | - | - | - | - |", fmt_fixed(truth.value, 3));
        for d in &r.detectors {
            let c = &d.classification;
            let f = &d.filtering;
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
                d.detector.display_name(),
                fmt_score_with_arrow(d.model_bias.map(|m| m.value), d.pct_difference),
                fmt_opt(d.pbs_difference.map(|m| m.value), 3),
                fmt_pct(f.precision),
                fmt_pct(f.recall),
                fmt_pct(f.f1),
                fmt_pct(f.filter_rate),
                fmt_pct(c.accuracy_male),
                fmt_pct(c.accuracy_female),
                fmt_pct(c.accuracy_overall),
                fmt_pct(c.accuracy_gap),
            );
        }
        let excluded = truth.excluded;
        let _ = writeln!(out, "\nGround truth: {} prompts scored, {excluded} without clear images.", truth.used);
        for d in &r.detectors {
            let skipped = d.model_bias.map_or(0, |m| m.excluded);
            let _ = writeln!(
                out,
                "{}: {skipped} prompts without classified images, {} provider errors, {} Others labels excluded.",
                d.detector.display_name(),
                d.filtering.excluded_provider_errors,
                d.filtering.excluded_others,
            );
        }
        if !r.truth.per_category.is_empty() {
            out.push_str("\n| Category | Ground-truth bias |\n|---|---|\n");
            for (cat, score) in &r.truth.per_category {
                let _ = writeln!(out, "| {} | {} |", cat.as_str(), fmt_opt(*score, 3));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatmapRow {
    pub prompt_id: String,
    pub category: PromptCategory,
    pub word: String,
    pub scores: Vec<Option<f64>>,
    /// Mean of the defined model columns.
    pub avg: Option<f64>,
}

/// One row per suite prompt; `columns` maps each model name to its
/// per-prompt scores.
pub fn heatmap_rows(suite: &[PromptSpec], columns: &[(String, HashMap<String, Option<f64>>)]) -> Vec<HeatmapRow> {
    suite
        .iter()
        .map(|p| {
            let scores: Vec<Option<f64>> =
                columns.iter().map(|(_, col)| col.get(&p.id).copied().flatten()).collect();
            let defined: Vec<f64> = scores.iter().flatten().copied().collect();
            let avg = (!defined.is_empty()).then(|| crate::metrics::mean(&defined));
            HeatmapRow { prompt_id: p.id.clone(), category: p.category, word: p.word.clone(), scores, avg }
        })
        .collect()
}

pub fn export_heatmap(suite: &[PromptSpec], columns: &[(String, HashMap<String, Option<f64>>)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["prompt".to_string(), "category".to_string()];
    header.extend(columns.iter().map(|(name, _)| name.clone()));
    header.push("avg".to_string());
    w.write_record(&header).expect("in-memory csv");
    for row in heatmap_rows(suite, columns) {
        let mut rec = vec![row.word.clone(), row.category.as_str().to_string()];
        rec.extend(row.scores.iter().map(|s| fmt_opt(*s, 2)));
        rec.push(fmt_opt(row.avg, 2));
        w.write_record(&rec).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
}

pub fn render_dataset_summary_csv(summary: &DatasetSummary) -> String {
    let mut out = String::from("backend,images,male_pct,female_pct,low_quality_pct,others_excluded\n");
    for r in summary.rows.iter().chain(std::iter::once(&summary.total)) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.backend_id,
            r.images,
            fmt_fixed(r.male_pct, 2),
            fmt_fixed(r.female_pct, 2),
            fmt_fixed(r.low_quality_pct, 2),
            r.others_excluded
        );
    }
    out
}
