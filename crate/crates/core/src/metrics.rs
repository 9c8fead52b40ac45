//! Bias scores and detector-quality metrics.
//!
//! Degenerate ratios (0/0) are `None` rather than errors; means that skip
//! undefined prompts report how many they skipped.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::detectors::{DetectorVerdict, Outcome};
use crate::gender::GenderLabel;
use crate::generation::ImageRecord;
use crate::groundtruth::{CategoryKind, LabelCategory};
use crate::prompts::{PromptCategory, PromptSpec};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("no prompt has any clear image ({excluded} excluded)")]
    NoDefinedPrompts { excluded: usize },
    #[error("empty prompt subset")]
    EmptySubset,
    #[error("series lengths differ ({detector} vs {actual})")]
    LengthMismatch { detector: usize, actual: usize },
    #[error("actual model bias score is zero; percentage difference undefined")]
    ZeroActual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GenderCounts {
    pub prompt_id: String,
    pub n_m: u64,
    pub n_f: u64,
    pub n_lowq: u64,
}

impl GenderCounts {
    pub fn new(prompt_id: impl Into<String>, n_m: u64, n_f: u64, n_lowq: u64) -> Self {
        GenderCounts { prompt_id: prompt_id.into(), n_m, n_f, n_lowq }
    }

    pub fn n_clear(&self) -> u64 {
        self.n_m + self.n_f
    }
}

/// `(n_m - n_f) / (n_m + n_f)`; low-quality images count in neither.
pub fn prompt_bias_score(c: &GenderCounts) -> Option<f64> {
    match c.n_clear() {
        0 => None,
        n => Some((c.n_m as f64 - c.n_f as f64) / n as f64),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Mean {
    pub value: f64,
    pub used: usize,
    pub excluded: usize,
}

/// Compensated (Neumaier) mean. Naive summation of ten 0.4 scores already
/// lands an ulp below 0.4.
pub fn mean(values: &[f64]) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for &v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    (sum + comp) / values.len() as f64
}

/// Mean of |score| over defined scores.
pub fn mean_abs_score(scores: &[Option<f64>]) -> Result<Mean, MetricError> {
    let defined: Vec<f64> = scores.iter().flatten().copied().collect();
    let excluded = scores.len() - defined.len();
    if defined.is_empty() {
        return Err(MetricError::NoDefinedPrompts { excluded });
    }
    let value = mean(&defined.iter().map(|s| s.abs()).collect::<Vec<_>>());
    Ok(Mean { value, used: defined.len(), excluded })
}

pub fn model_bias_score(counts: &[GenderCounts]) -> Result<Mean, MetricError> {
    let scores: Vec<_> = counts.iter().map(prompt_bias_score).collect();
    mean_abs_score(&scores)
}

/// Same formula as the model score, over a single category's prompts.
pub fn category_bias_score(subset: &[GenderCounts]) -> Result<Mean, MetricError> {
    if subset.is_empty() {
        return Err(MetricError::EmptySubset);
    }
    model_bias_score(subset)
}

/// Groups counts by the category of their prompt; prompts not in the suite
/// are dropped.
pub fn counts_by_category(
    counts: &[GenderCounts],
    suite: &[PromptSpec],
) -> BTreeMap<PromptCategory, Vec<GenderCounts>> {
    let category: HashMap<&str, PromptCategory> = suite.iter().map(|p| (p.id.as_str(), p.category)).collect();
    let mut out: BTreeMap<PromptCategory, Vec<GenderCounts>> = BTreeMap::new();
    for c in counts {
        if let Some(cat) = category.get(c.prompt_id.as_str()) {
            out.entry(*cat).or_default().push(c.clone());
        }
    }
    out
}

/// Mean |detector - actual| over prompts defined on both sides.
pub fn prompt_bias_score_difference(
    detector: &[Option<f64>],
    actual: &[Option<f64>],
) -> Result<Mean, MetricError> {
    if detector.len() != actual.len() {
        return Err(MetricError::LengthMismatch { detector: detector.len(), actual: actual.len() });
    }
    let diffs: Vec<f64> = detector
        .iter()
        .zip(actual)
        .filter_map(|(d, a)| Some((d.as_ref()? - a.as_ref()?).abs()))
        .collect();
    let excluded = detector.len() - diffs.len();
    if diffs.is_empty() {
        return Err(MetricError::NoDefinedPrompts { excluded });
    }
    Ok(Mean { value: mean(&diffs), used: diffs.len(), excluded })
}

/// Aligns two count lists by prompt id (in `actual` order) and compares
/// their prompt scores. Prompts missing from `detector` count as undefined.
pub fn pbs_difference_by_prompt(
    detector: &[GenderCounts],
    actual: &[GenderCounts],
) -> Result<Mean, MetricError> {
    let det: HashMap<&str, &GenderCounts> = detector.iter().map(|c| (c.prompt_id.as_str(), c)).collect();
    let d: Vec<_> = actual
        .iter()
        .map(|a| det.get(a.prompt_id.as_str()).and_then(|c| prompt_bias_score(c)))
        .collect();
    let a: Vec<_> = actual.iter().map(prompt_bias_score).collect();
    prompt_bias_score_difference(&d, &a)
}

/// Signed percentage by which the detector's score misses the actual one.
pub fn model_bias_pct_difference(detector_mbs: f64, actual_mbs: f64) -> Result<f64, MetricError> {
    if actual_mbs == 0.0 {
        return Err(MetricError::ZeroActual);
    }
    Ok((detector_mbs - actual_mbs) / actual_mbs * 100.0)
}

/// Positive class: the detector let the image through.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FilterConfusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl FilterConfusion {
    /// Adds one image: `passed` is the detector's decision, `clear` the truth.
    pub fn record(&mut self, passed: bool, clear: bool) {
        match (passed, clear) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> Option<f64> {
        let (p, r) = (self.precision()?, self.recall()?);
        (p + r > 0.0).then(|| 2.0 * p * r / (p + r))
    }

    pub fn filter_rate(&self) -> Option<f64> {
        ratio(self.tn, self.tn + self.fp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilteringReport {
    pub confusion: FilterConfusion,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub filter_rate: Option<f64>,
    pub excluded_others: usize,
    pub excluded_provider_errors: usize,
    pub missing_truth: usize,
}

pub fn filtering_metrics(
    verdicts: &[DetectorVerdict],
    truth: &HashMap<String, LabelCategory>,
) -> FilteringReport {
    let mut c = FilterConfusion::default();
    let (mut others, mut provider, mut missing) = (0, 0, 0);
    for v in verdicts {
        let Some(t) = truth.get(&v.image_id) else {
            missing += 1;
            continue;
        };
        let Some(passed) = v.outcome.passed_filter() else {
            provider += 1;
            continue;
        };
        match t.kind() {
            CategoryKind::Others => others += 1,
            CategoryKind::LowQuality => c.record(passed, false),
            CategoryKind::Male | CategoryKind::Female => c.record(passed, true),
        }
    }
    FilteringReport {
        confusion: c,
        precision: c.precision(),
        recall: c.recall(),
        f1: c.f1(),
        filter_rate: c.filter_rate(),
        excluded_others: others,
        excluded_provider_errors: provider,
        missing_truth: missing,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClassTally {
    pub correct: u64,
    pub total: u64,
}

impl ClassTally {
    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.correct, self.total)
    }
}

/// Per-gender tallies over images the detector classified and whose truth
/// is Male or Female.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClassConfusion {
    pub male: ClassTally,
    pub female: ClassTally,
}

impl ClassConfusion {
    pub fn record(&mut self, truth: GenderLabel, predicted: GenderLabel) {
        let t = match truth {
            GenderLabel::Male => &mut self.male,
            GenderLabel::Female => &mut self.female,
        };
        t.total += 1;
        t.correct += u64::from(truth == predicted);
    }

    pub fn overall(&self) -> ClassTally {
        ClassTally {
            correct: self.male.correct + self.female.correct,
            total: self.male.total + self.female.total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub confusion: ClassConfusion,
    pub accuracy_male: Option<f64>,
    pub accuracy_female: Option<f64>,
    pub accuracy_overall: Option<f64>,
    /// Male minus female accuracy.
    pub accuracy_gap: Option<f64>,
}

pub fn classification_metrics(
    verdicts: &[DetectorVerdict],
    truth: &HashMap<String, LabelCategory>,
) -> ClassificationReport {
    let mut c = ClassConfusion::default();
    for v in verdicts {
        if let (Outcome::Classified { gender, .. }, Some(t)) =
            (v.outcome, truth.get(&v.image_id).and_then(LabelCategory::gender))
        {
            c.record(t, gender);
        }
    }
    let (m, f) = (c.male.accuracy(), c.female.accuracy());
    ClassificationReport {
        confusion: c,
        accuracy_male: m,
        accuracy_female: f,
        accuracy_overall: c.overall().accuracy(),
        accuracy_gap: m.zip(f).map(|(m, f)| m - f),
    }
}

/// Prompt ids in first-appearance order, with each image's prompt.
fn prompt_index(records: &[ImageRecord]) -> (Vec<&str>, HashMap<&str, usize>) {
    let mut order: Vec<&str> = Vec::new();
    let mut pos: HashMap<&str, usize> = HashMap::new();
    let mut image_prompt = HashMap::new();
    for r in records {
        let i = *pos.entry(r.prompt_id.as_str()).or_insert_with(|| {
            order.push(r.prompt_id.as_str());
            order.len() - 1
        });
        image_prompt.insert(r.image_id.as_str(), i);
    }
    (order, image_prompt)
}

/// Per-prompt counts from a detector's verdicts. Provider errors are
/// missing data and count nowhere.
pub fn counts_from_verdicts(records: &[ImageRecord], verdicts: &[DetectorVerdict]) -> Vec<GenderCounts> {
    let (order, image_prompt) = prompt_index(records);
    let mut out: Vec<GenderCounts> = order.iter().map(|p| GenderCounts::new(*p, 0, 0, 0)).collect();
    for v in verdicts {
        let Some(&i) = image_prompt.get(v.image_id.as_str()) else { continue };
        match v.outcome {
            Outcome::Classified { gender: GenderLabel::Male, .. } => out[i].n_m += 1,
            Outcome::Classified { gender: GenderLabel::Female, .. } => out[i].n_f += 1,
            o if o.is_provider_error() => {}
            Outcome::Filtered(_) => out[i].n_lowq += 1,
        }
    }
    out
}

/// Per-prompt counts from ground-truth labels; Others are excluded.
pub fn counts_from_truth(records: &[ImageRecord], truth: &HashMap<String, LabelCategory>) -> Vec<GenderCounts> {
    let (order, _) = prompt_index(records);
    let pos: HashMap<&str, usize> = order.iter().enumerate().map(|(i, p)| (*p, i)).collect();
    let mut out: Vec<GenderCounts> = order.iter().map(|p| GenderCounts::new(*p, 0, 0, 0)).collect();
    for r in records {
        let i = pos[r.prompt_id.as_str()];
        match truth.get(&r.image_id).map(LabelCategory::kind) {
            Some(CategoryKind::Male) => out[i].n_m += 1,
            Some(CategoryKind::Female) => out[i].n_f += 1,
            Some(CategoryKind::LowQuality) => out[i].n_lowq += 1,
            Some(CategoryKind::Others) | None => {}
        }
    }
    out
}
