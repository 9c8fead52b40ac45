//! Published per-prompt bias scores for SDXL, SD3 and Dreamlike, rounded
//! to two decimals as released. Used to check the scoring arithmetic.

use serde::Deserialize;

use crate::prompts::PromptCategory;

pub const PROMPT_BIAS_SCORES_CSV: &str = include_str!("../data/reference/prompt_bias_scores.csv");

pub const MODELS: [&str; 3] = ["sdxl", "sd3", "dreamlike"];

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ReferenceRow {
    pub category: PromptCategory,
    pub word: String,
    pub sdxl: f64,
    pub sd3: f64,
    pub dreamlike: f64,
    /// As printed; not always the rounded mean of the three columns.
    pub avg: f64,
}

impl ReferenceRow {
    pub fn scores(&self) -> [f64; 3] {
        [self.sdxl, self.sd3, self.dreamlike]
    }
}

pub fn reference_rows() -> Vec<ReferenceRow> {
    csv::Reader::from_reader(PROMPT_BIAS_SCORES_CSV.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .expect("bundled reference table parses")
}

/// Column `model` (index into [`MODELS`]) as optional scores, one per prompt.
pub fn model_column(rows: &[ReferenceRow], model: usize) -> Vec<Option<f64>> {
    rows.iter().map(|r| Some(r.scores()[model])).collect()
}
