//! Human labels: storage with revision history, inter-annotator agreement,
//! adjudication and dataset proportions.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gender::GenderLabel;

#[derive(Debug, Error, PartialEq)]
pub enum GroundTruthError {
    #[error("unknown label category `{0}` (expected male, female, low_quality or others)")]
    UnknownCategory(String),
    #[error("unknown low-quality reason `{0}`")]
    UnknownReason(String),
    #[error("`others` labels need a free-text reason")]
    MissingOthersReason,
    #[error("the two annotators labeled different image sets ({only_a} only in A, {only_b} only in B)")]
    SetMismatch { only_a: usize, only_b: usize },
    #[error("the annotators share no images")]
    NoOverlap,
    #[error("image `{0}` has no manifest entry")]
    UnknownImage(String),
    #[error("bad timestamp `{0}`")]
    Timestamp(String),
    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for GroundTruthError {
    fn from(e: csv::Error) -> Self {
        GroundTruthError::Csv(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowQualityReason {
    MultiplePeople,
    NoPerson,
    NoFace,
    Blurred,
}

impl LowQualityReason {
    pub fn as_str(self) -> &'static str {
        match self {
            LowQualityReason::MultiplePeople => "multiple_people",
            LowQualityReason::NoPerson => "no_person",
            LowQualityReason::NoFace => "no_face",
            LowQualityReason::Blurred => "blurred",
        }
    }
}

impl FromStr for LowQualityReason {
    type Err = GroundTruthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace([' ', '-'], "_").as_str() {
            "multiple_people" => Ok(LowQualityReason::MultiplePeople),
            "no_person" => Ok(LowQualityReason::NoPerson),
            "no_face" => Ok(LowQualityReason::NoFace),
            "blurred" => Ok(LowQualityReason::Blurred),
            _ => Err(GroundTruthError::UnknownReason(s.to_string())),
        }
    }
}

/// The four-way category with reasons stripped; agreement compares these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryKind {
    Male,
    Female,
    LowQuality,
    Others,
}

impl CategoryKind {
    pub const ALL: [CategoryKind; 4] =
        [CategoryKind::Male, CategoryKind::Female, CategoryKind::LowQuality, CategoryKind::Others];

    pub fn as_str(self) -> &'static str {
        match self {
            CategoryKind::Male => "male",
            CategoryKind::Female => "female",
            CategoryKind::LowQuality => "low_quality",
            CategoryKind::Others => "others",
        }
    }
}

impl FromStr for CategoryKind {
    type Err = GroundTruthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace([' ', '-'], "_").as_str() {
            "male" | "m" => Ok(CategoryKind::Male),
            "female" | "f" => Ok(CategoryKind::Female),
            "low_quality" | "lowquality" | "low" => Ok(CategoryKind::LowQuality),
            "others" | "other" => Ok(CategoryKind::Others),
            _ => Err(GroundTruthError::UnknownCategory(s.to_string())),
        }
    }
}

impl fmt::Display for CategoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum LabelCategory {
    Male,
    Female,
    LowQuality(Option<LowQualityReason>),
    /// Gender cannot be inferred for a reason other than image quality.
    Others(String),
}

impl LabelCategory {
    pub fn kind(&self) -> CategoryKind {
        match self {
            LabelCategory::Male => CategoryKind::Male,
            LabelCategory::Female => CategoryKind::Female,
            LabelCategory::LowQuality(_) => CategoryKind::LowQuality,
            LabelCategory::Others(_) => CategoryKind::Others,
        }
    }

    pub fn gender(&self) -> Option<GenderLabel> {
        match self {
            LabelCategory::Male => Some(GenderLabel::Male),
            LabelCategory::Female => Some(GenderLabel::Female),
            _ => None,
        }
    }

    pub fn reason(&self) -> Option<String> {
        match self {
            LabelCategory::LowQuality(r) => r.map(|r| r.as_str().to_string()),
            LabelCategory::Others(text) => Some(text.clone()),
            _ => None,
        }
    }

    /// Builds a category from its CSV `category` and `reason` columns.
    pub fn from_parts(category: &str, reason: Option<&str>) -> Result<Self, GroundTruthError> {
        let reason = reason.map(str::trim).filter(|r| !r.is_empty());
        Ok(match category.parse::<CategoryKind>()? {
            CategoryKind::Male => LabelCategory::Male,
            CategoryKind::Female => LabelCategory::Female,
            CategoryKind::LowQuality => LabelCategory::LowQuality(reason.map(str::parse).transpose()?),
            CategoryKind::Others => {
                LabelCategory::Others(reason.ok_or(GroundTruthError::MissingOthersReason)?.to_string())
            }
        })
    }
}

impl From<GenderLabel> for LabelCategory {
    fn from(g: GenderLabel) -> Self {
        match g {
            GenderLabel::Male => LabelCategory::Male,
            GenderLabel::Female => LabelCategory::Female,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthLabel {
    pub image_id: String,
    pub annotator_id: String,
    pub category: LabelCategory,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    image_id: String,
    annotator_id: String,
    category: String,
    reason: Option<String>,
    timestamp: String,
}

impl From<&GroundTruthLabel> for LabelRow {
    fn from(l: &GroundTruthLabel) -> Self {
        LabelRow {
            image_id: l.image_id.clone(),
            annotator_id: l.annotator_id.clone(),
            category: l.category.kind().as_str().to_string(),
            reason: l.category.reason(),
            timestamp: l.timestamp.to_rfc3339_opts(SecondsFormat::Millis, true),
        }
    }
}

impl TryFrom<LabelRow> for GroundTruthLabel {
    type Error = GroundTruthError;

    fn try_from(r: LabelRow) -> Result<Self, Self::Error> {
        Ok(GroundTruthLabel {
            category: LabelCategory::from_parts(&r.category, r.reason.as_deref())?,
            timestamp: DateTime::parse_from_rfc3339(&r.timestamp)
                .map_err(|_| GroundTruthError::Timestamp(r.timestamp.clone()))?
                .with_timezone(&Utc),
            image_id: r.image_id,
            annotator_id: r.annotator_id,
        })
    }
}

/// Append-only label log. The latest write per (image, annotator) wins;
/// earlier ones stay available as revision history.
#[derive(Debug, Clone, Default)]
pub struct LabelStore {
    revisions: Vec<GroundTruthLabel>,
    latest: HashMap<(String, String), usize>,
}

impl LabelStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a label and returns its revision number (1 for the first).
    pub fn submit(&mut self, label: GroundTruthLabel) -> usize {
        let key = (label.image_id.clone(), label.annotator_id.clone());
        self.revisions.push(label);
        self.latest.insert(key.clone(), self.revisions.len() - 1);
        self.history(&key.0, &key.1).len()
    }

    pub fn revisions(&self) -> &[GroundTruthLabel] {
        &self.revisions
    }

    pub fn latest(&self, image_id: &str, annotator_id: &str) -> Option<&GroundTruthLabel> {
        self.latest
            .get(&(image_id.to_string(), annotator_id.to_string()))
            .map(|&i| &self.revisions[i])
    }

    pub fn history(&self, image_id: &str, annotator_id: &str) -> Vec<&GroundTruthLabel> {
        self.revisions
            .iter()
            .filter(|l| l.image_id == image_id && l.annotator_id == annotator_id)
            .collect()
    }

    pub fn annotators(&self) -> BTreeSet<String> {
        self.latest.keys().map(|(_, a)| a.clone()).collect()
    }

    /// Latest label per image for one annotator.
    pub fn labels_by(&self, annotator_id: &str) -> BTreeMap<String, LabelCategory> {
        self.latest
            .iter()
            .filter(|((_, a), _)| a == annotator_id)
            .map(|((img, _), &i)| (img.clone(), self.revisions[i].category.clone()))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), GroundTruthError> {
        let mut w = csv::Writer::from_writer(out);
        for l in &self.revisions {
            w.serialize(LabelRow::from(l))?;
        }
        w.flush().map_err(|e| GroundTruthError::Csv(e.to_string()))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, GroundTruthError> {
        let mut store = LabelStore::new();
        for row in csv::Reader::from_reader(input).deserialize::<LabelRow>() {
            store.submit(row?.try_into()?);
        }
        Ok(store)
    }
}

/// One label as a CSV line (no header), for append-only persistence.
pub fn label_csv_line(label: &GroundTruthLabel) -> Result<String, GroundTruthError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.serialize(LabelRow::from(label))?;
    let bytes = w.into_inner().map_err(|e| GroundTruthError::Csv(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub const LABELS_CSV_HEADER: &str = "image_id,annotator_id,category,reason,timestamp\n";

/// Cohen's kappa over paired four-way labels. `None` when chance agreement
/// is 1 (both annotators used one and the same category throughout) or
/// there are no pairs.
pub fn kappa_from_pairs(pairs: &[(CategoryKind, CategoryKind)]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let n = pairs.len() as f64;
    let mut agree = 0usize;
    let mut row = [0usize; 4];
    let mut col = [0usize; 4];
    for (a, b) in pairs {
        agree += usize::from(a == b);
        row[*a as usize] += 1;
        col[*b as usize] += 1;
    }
    let p_o = agree as f64 / n;
    let p_e: f64 = (0..4).map(|k| (row[k] as f64 / n) * (col[k] as f64 / n)).sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return None;
    }
    Some((p_o - p_e) / (1.0 - p_e))
}

/// Kappa for two annotators who labeled exactly the same images.
pub fn cohens_kappa(
    a: &BTreeMap<String, LabelCategory>,
    b: &BTreeMap<String, LabelCategory>,
) -> Result<Option<f64>, GroundTruthError> {
    let only_a = a.keys().filter(|k| !b.contains_key(*k)).count();
    let only_b = b.keys().filter(|k| !a.contains_key(*k)).count();
    if only_a > 0 || only_b > 0 {
        return Err(GroundTruthError::SetMismatch { only_a, only_b });
    }
    if a.is_empty() {
        return Err(GroundTruthError::NoOverlap);
    }
    kappa_on_overlap(a, b).map(|(k, _)| k)
}

/// Kappa over the images both annotators have labeled so far, with the
/// number of such images.
pub fn kappa_on_overlap(
    a: &BTreeMap<String, LabelCategory>,
    b: &BTreeMap<String, LabelCategory>,
) -> Result<(Option<f64>, usize), GroundTruthError> {
    let pairs: Vec<_> = a
        .iter()
        .filter_map(|(img, la)| b.get(img).map(|lb| (la.kind(), lb.kind())))
        .collect();
    if pairs.is_empty() {
        return Err(GroundTruthError::NoOverlap);
    }
    Ok((kappa_from_pairs(&pairs), pairs.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjudicationSource {
    Agreement,
    Discussion,
    ForcedLowQuality,
}

impl AdjudicationSource {
    pub fn as_str(self) -> &'static str {
        match self {
            AdjudicationSource::Agreement => "agreement",
            AdjudicationSource::Discussion => "discussion",
            AdjudicationSource::ForcedLowQuality => "forced_low_quality",
        }
    }
}

impl FromStr for AdjudicationSource {
    type Err = GroundTruthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "agreement" => Ok(AdjudicationSource::Agreement),
            "discussion" => Ok(AdjudicationSource::Discussion),
            "forced_low_quality" => Ok(AdjudicationSource::ForcedLowQuality),
            other => Err(GroundTruthError::Csv(format!("unknown adjudication source `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjudicatedLabel {
    pub image_id: String,
    pub final_label: LabelCategory,
    pub source: AdjudicationSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adjudication {
    pub labels: Vec<AdjudicatedLabel>,
    /// Resolutions supplied for images the annotators agreed on; ignored.
    pub warnings: Vec<String>,
}

/// Merges two complete label sets. Agreement is judged on the four-way
/// category; an agreed low-quality label keeps its reason only if both
/// annotators gave the same one.
pub fn adjudicate(
    a: &BTreeMap<String, LabelCategory>,
    b: &BTreeMap<String, LabelCategory>,
    resolutions: &BTreeMap<String, LabelCategory>,
) -> Result<Adjudication, GroundTruthError> {
    let only_a = a.keys().filter(|k| !b.contains_key(*k)).count();
    let only_b = b.keys().filter(|k| !a.contains_key(*k)).count();
    if only_a > 0 || only_b > 0 {
        return Err(GroundTruthError::SetMismatch { only_a, only_b });
    }
    let mut labels = Vec::with_capacity(a.len());
    let mut warnings = Vec::new();
    for (img, la) in a {
        let lb = &b[img];
        let (final_label, source) = if la.kind() == lb.kind() {
            if resolutions.contains_key(img) {
                warnings.push(format!("resolution for `{img}` ignored: annotators agree"));
            }
            let merged = match (la, lb) {
                (LabelCategory::LowQuality(x), LabelCategory::LowQuality(y)) if x != y => {
                    LabelCategory::LowQuality(None)
                }
                _ => la.clone(),
            };
            (merged, AdjudicationSource::Agreement)
        } else if let Some(r) = resolutions.get(img) {
            (r.clone(), AdjudicationSource::Discussion)
        } else {
            (LabelCategory::LowQuality(None), AdjudicationSource::ForcedLowQuality)
        };
        labels.push(AdjudicatedLabel { image_id: img.clone(), final_label, source });
    }
    for img in resolutions.keys().filter(|k| !a.contains_key(*k)) {
        warnings.push(format!("resolution for unknown image `{img}` ignored"));
    }
    Ok(Adjudication { labels, warnings })
}

#[derive(Debug, Serialize, Deserialize)]
struct AdjudicatedRow {
    image_id: String,
    #[serde(rename = "final")]
    final_label: String,
    source: String,
    #[serde(default)]
    reason: Option<String>,
}

pub fn write_adjudicated_csv<W: Write>(out: W, labels: &[AdjudicatedLabel]) -> Result<(), GroundTruthError> {
    let mut w = csv::Writer::from_writer(out);
    for l in labels {
        w.serialize(AdjudicatedRow {
            image_id: l.image_id.clone(),
            final_label: l.final_label.kind().as_str().to_string(),
            source: l.source.as_str().to_string(),
            reason: l.final_label.reason(),
        })?;
    }
    w.flush().map_err(|e| GroundTruthError::Csv(e.to_string()))
}

pub fn read_adjudicated_csv<R: Read>(input: R) -> Result<Vec<AdjudicatedLabel>, GroundTruthError> {
    csv::Reader::from_reader(input)
        .deserialize::<AdjudicatedRow>()
        .map(|row| {
            let row = row?;
            Ok(AdjudicatedLabel {
                final_label: LabelCategory::from_parts(&row.final_label, row.reason.as_deref())?,
                source: row.source.parse()?,
                image_id: row.image_id,
            })
        })
        .collect()
}

#[derive(Debug, Deserialize)]
struct ReleasedRow {
    image_id: String,
    backend_id: String,
    category: String,
    #[serde(default)]
    reason: Option<String>,
}

/// Final labels from a released dataset: CSV `image_id,backend_id,category`
/// with an optional `reason` column. Returns the labels and the
/// image-to-backend map.
pub fn import_released_labels<R: Read>(
    input: R,
) -> Result<(Vec<AdjudicatedLabel>, HashMap<String, String>), GroundTruthError> {
    let mut labels = Vec::new();
    let mut backends = HashMap::new();
    for row in csv::Reader::from_reader(input).deserialize::<ReleasedRow>() {
        let row = row?;
        let final_label = match LabelCategory::from_parts(&row.category, row.reason.as_deref()) {
            Err(GroundTruthError::MissingOthersReason) => LabelCategory::Others("unspecified".into()),
            other => other?,
        };
        backends.insert(row.image_id.clone(), row.backend_id);
        labels.push(AdjudicatedLabel {
            image_id: row.image_id,
            final_label,
            source: AdjudicationSource::Agreement,
        });
    }
    Ok((labels, backends))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub backend_id: String,
    /// Images counted in the percentages (Others excluded).
    pub images: usize,
    pub male_pct: f64,
    pub female_pct: f64,
    pub low_quality_pct: f64,
    pub others_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub rows: Vec<SummaryRow>,
    pub total: SummaryRow,
}

#[derive(Default)]
struct Tally {
    male: usize,
    female: usize,
    low: usize,
    others: usize,
}

impl Tally {
    fn add(&mut self, kind: CategoryKind) {
        match kind {
            CategoryKind::Male => self.male += 1,
            CategoryKind::Female => self.female += 1,
            CategoryKind::LowQuality => self.low += 1,
            CategoryKind::Others => self.others += 1,
        }
    }

    fn row(&self, backend_id: &str) -> SummaryRow {
        let n = self.male + self.female + self.low;
        let pct = |k: usize| if n == 0 { 0.0 } else { 100.0 * k as f64 / n as f64 };
        SummaryRow {
            backend_id: backend_id.to_string(),
            images: n,
            male_pct: pct(self.male),
            female_pct: pct(self.female),
            low_quality_pct: pct(self.low),
            others_excluded: self.others,
        }
    }
}

/// Male/Female/LowQuality percentages per backend (sorted by id) and overall.
pub fn dataset_summary(
    labels: &[AdjudicatedLabel],
    image_backend: &HashMap<String, String>,
) -> Result<DatasetSummary, GroundTruthError> {
    let mut per: BTreeMap<&str, Tally> = BTreeMap::new();
    let mut total = Tally::default();
    for l in labels {
        let backend = image_backend
            .get(&l.image_id)
            .ok_or_else(|| GroundTruthError::UnknownImage(l.image_id.clone()))?;
        per.entry(backend).or_default().add(l.final_label.kind());
        total.add(l.final_label.kind());
    }
    Ok(DatasetSummary {
        rows: per.iter().map(|(b, t)| t.row(b)).collect(),
        total: total.row("total"),
    })
}
