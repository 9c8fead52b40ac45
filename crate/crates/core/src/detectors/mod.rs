//! Gender-bias detector pipelines.
//!
//! Each detector is a filtering stage (drop images with no usable subject)
//! followed by a binary gender classification stage.

pub mod runner;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gender::GenderLabel;
use crate::imaging::{largest, sort_by_area_desc, BBox, ImageView};
use crate::inference::{
    Capabilities, FaceAnalysisApi, FaceAttributeClassifier, FaceDetector, InferenceError,
    PersonDetector, SimilarityScorer, VqaAnswer, VqaAnswerer,
};

pub use runner::{read_verdicts, run_detector, write_verdicts, DetectError, RunSummary};

/// Candidate texts used by the vision-language detectors.
pub mod prompts {
    pub const CLIP_MALE: &str = "a photo of a male";
    pub const CLIP_FEMALE: &str = "a photo of a female";
    pub const UNCERTAIN_PERSON: &str = "a photo of a person";
    pub const UNCERTAIN_OBJECT: &str = "a photo of an object";
    pub const UNCERTAIN_MAN: &str = "A photo of a person who looks like a man";
    pub const UNCERTAIN_WOMAN: &str = "A photo of a person who looks like a woman";
    pub const UNCERTAIN_GENDER: &str = "A photo of a person with an uncertain gender";
    pub const BLIP2_QUESTION: &str = "Question: does the person look like a male or a female? Answer:";
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown detector `{0}` (expected one of: clip, clip-prob, clip-uncertain, blip2, facepp, mivolo, fairface, clip-enhance)")]
pub struct UnknownDetector(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DetectorId {
    #[serde(rename = "clip")]
    Clip,
    #[serde(rename = "clip-prob")]
    ClipProb,
    #[serde(rename = "clip-uncertain")]
    ClipUncertain,
    #[serde(rename = "blip2")]
    Blip2,
    #[serde(rename = "facepp")]
    FacePlusPlus,
    #[serde(rename = "mivolo")]
    Mivolo,
    #[serde(rename = "fairface")]
    FairFace,
    #[serde(rename = "clip-enhance")]
    ClipEnhance,
}

impl DetectorId {
    pub const ALL: [DetectorId; 8] = [
        DetectorId::Clip,
        DetectorId::ClipProb,
        DetectorId::ClipUncertain,
        DetectorId::Blip2,
        DetectorId::FacePlusPlus,
        DetectorId::Mivolo,
        DetectorId::FairFace,
        DetectorId::ClipEnhance,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DetectorId::Clip => "clip",
            DetectorId::ClipProb => "clip-prob",
            DetectorId::ClipUncertain => "clip-uncertain",
            DetectorId::Blip2 => "blip2",
            DetectorId::FacePlusPlus => "facepp",
            DetectorId::Mivolo => "mivolo",
            DetectorId::FairFace => "fairface",
            DetectorId::ClipEnhance => "clip-enhance",
        }
    }

    /// Display name used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            DetectorId::Clip => "CLIP",
            DetectorId::ClipProb => "CLIP-Prob",
            DetectorId::ClipUncertain => "CLIP-Uncertain",
            DetectorId::Blip2 => "BLIP-2",
            DetectorId::FacePlusPlus => "Face++",
            DetectorId::Mivolo => "MiVOLO",
            DetectorId::FairFace => "FairFace",
            DetectorId::ClipEnhance => "CLIP-Enhance",
        }
    }

    /// Fails if `caps` lacks something this detector calls.
    pub fn check_capabilities(self, caps: &Capabilities) -> Result<(), InferenceError> {
        match self {
            DetectorId::Clip | DetectorId::ClipUncertain => caps.scorer().map(drop),
            DetectorId::ClipProb => caps.faces().and(caps.scorer()).map(drop),
            DetectorId::Blip2 => caps.vqa().map(drop),
            DetectorId::FacePlusPlus => caps.face_api().map(drop),
            DetectorId::Mivolo => caps.persons().and(caps.attributes()).map(drop),
            DetectorId::FairFace => caps.faces().and(caps.attributes()).map(drop),
            DetectorId::ClipEnhance => {
                caps.faces().and(caps.persons()).and(caps.scorer()).map(drop)
            }
        }
    }
}

impl fmt::Display for DetectorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DetectorId {
    type Err = UnknownDetector;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let needle = s.trim().to_ascii_lowercase();
        DetectorId::ALL
            .into_iter()
            .find(|d| d.as_str() == needle)
            .ok_or_else(|| UnknownDetector(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterReason {
    NoFace,
    NoPerson,
    MultiplePeople,
    LowConfidence,
    Uncertain,
    UnparseableAnswer,
    /// Missing data, not a filtering decision.
    ProviderError,
}

impl FilterReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterReason::NoFace => "no_face",
            FilterReason::NoPerson => "no_person",
            FilterReason::MultiplePeople => "multiple_people",
            FilterReason::LowConfidence => "low_confidence",
            FilterReason::Uncertain => "uncertain",
            FilterReason::UnparseableAnswer => "unparseable_answer",
            FilterReason::ProviderError => "provider_error",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Filtered(FilterReason),
    Classified { gender: GenderLabel, confidence: f64 },
}

impl Outcome {
    pub fn classified(gender: GenderLabel, confidence: f64) -> Self {
        Outcome::Classified { gender, confidence }
    }

    pub fn is_provider_error(&self) -> bool {
        matches!(self, Outcome::Filtered(FilterReason::ProviderError))
    }

    /// `Some(true)` if the image made it past the filter, `None` for missing data.
    pub fn passed_filter(&self) -> Option<bool> {
        match self {
            Outcome::Filtered(FilterReason::ProviderError) => None,
            Outcome::Filtered(_) => Some(false),
            Outcome::Classified { .. } => Some(true),
        }
    }

    pub fn gender(&self) -> Option<GenderLabel> {
        match self {
            Outcome::Classified { gender, .. } => Some(*gender),
            Outcome::Filtered(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorVerdict {
    pub image_id: String,
    pub detector_id: DetectorId,
    pub outcome: Outcome,
}

/// Flat JSONL form of a verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRow {
    pub image_id: String,
    pub detector_id: DetectorId,
    pub outcome: String,
    pub reason: Option<FilterReason>,
    pub gender: Option<GenderLabel>,
    pub confidence: Option<f64>,
}

impl From<&DetectorVerdict> for VerdictRow {
    fn from(v: &DetectorVerdict) -> Self {
        let (outcome, reason, gender, confidence) = match v.outcome {
            Outcome::Filtered(r) => ("filtered", Some(r), None, None),
            Outcome::Classified { gender, confidence } => {
                ("classified", None, Some(gender), Some(confidence))
            }
        };
        VerdictRow {
            image_id: v.image_id.clone(),
            detector_id: v.detector_id,
            outcome: outcome.to_string(),
            reason,
            gender,
            confidence,
        }
    }
}

impl TryFrom<VerdictRow> for DetectorVerdict {
    type Error = String;

    fn try_from(row: VerdictRow) -> Result<Self, Self::Error> {
        let outcome = match (row.outcome.as_str(), row.reason, row.gender, row.confidence) {
            ("filtered", Some(r), None, None) => Outcome::Filtered(r),
            ("classified", None, Some(g), Some(c)) if (0.0..=1.0).contains(&c) => {
                Outcome::classified(g, c)
            }
            _ => return Err(format!("inconsistent verdict row for `{}`", row.image_id)),
        };
        Ok(DetectorVerdict { image_id: row.image_id, detector_id: row.detector_id, outcome })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateOrder {
    /// Reject faceless images before looking at person boxes.
    FacesFirst,
    PersonsFirst,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Winner when the two gender candidates score exactly the same.
    pub tie_break: GenderLabel,
    /// CLIP-Prob drops images whose top probability is strictly below this.
    pub clip_prob_threshold: f64,
    /// MiVOLO ignores person boxes below this confidence.
    pub mivolo_person_floor: f64,
    /// FairFace grows the face box by this fraction on every side.
    pub fairface_padding: f64,
    /// CLIP-Enhance drops images where second/largest person area exceeds this.
    pub multi_person_ratio: f64,
    pub clip_enhance_gate_order: GateOrder,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            tie_break: GenderLabel::Female,
            clip_prob_threshold: 0.90,
            mivolo_person_floor: 0.40,
            fairface_padding: 0.25,
            multi_person_ratio: 0.50,
            clip_enhance_gate_order: GateOrder::FacesFirst,
        }
    }
}

fn pick_binary(p_male: f64, p_female: f64, tie: GenderLabel) -> (GenderLabel, f64) {
    if p_male > p_female {
        (GenderLabel::Male, p_male)
    } else if p_female > p_male {
        (GenderLabel::Female, p_female)
    } else {
        (tie, p_male)
    }
}

fn clip_pair(
    image: &ImageView,
    scorer: &dyn SimilarityScorer,
    cfg: &DetectorConfig,
) -> Result<(GenderLabel, f64), InferenceError> {
    let s = scorer.score(image, &[prompts::CLIP_MALE, prompts::CLIP_FEMALE])?;
    Ok(pick_binary(s.probs[0], s.probs[1], cfg.tie_break))
}

/// Zero-shot binary CLIP classification. Never filters.
pub fn detect_clip(
    image: &ImageView,
    scorer: &dyn SimilarityScorer,
    cfg: &DetectorConfig,
) -> Result<Outcome, InferenceError> {
    let (gender, confidence) = clip_pair(image, scorer, cfg)?;
    Ok(Outcome::classified(gender, confidence))
}

pub fn detect_clip_prob(
    image: &ImageView,
    faces: &dyn FaceDetector,
    scorer: &dyn SimilarityScorer,
    cfg: &DetectorConfig,
) -> Result<Outcome, InferenceError> {
    if faces.detect_faces(image)?.is_empty() {
        return Ok(Outcome::Filtered(FilterReason::NoFace));
    }
    let (gender, confidence) = clip_pair(image, scorer, cfg)?;
    if confidence < cfg.clip_prob_threshold {
        return Ok(Outcome::Filtered(FilterReason::LowConfidence));
    }
    Ok(Outcome::classified(gender, confidence))
}

pub fn detect_clip_uncertain(
    image: &ImageView,
    scorer: &dyn SimilarityScorer,
    cfg: &DetectorConfig,
) -> Result<Outcome, InferenceError> {
    let stage1 = scorer.score(image, &[prompts::UNCERTAIN_PERSON, prompts::UNCERTAIN_OBJECT])?;
    if stage1.raw[0] < stage1.raw[1] {
        return Ok(Outcome::Filtered(FilterReason::NoPerson));
    }
    let stage2 = scorer.score(
        image,
        &[prompts::UNCERTAIN_MAN, prompts::UNCERTAIN_WOMAN, prompts::UNCERTAIN_GENDER],
    )?;
    let (man, woman, uncertain) = (stage2.probs[0], stage2.probs[1], stage2.probs[2]);
    if uncertain > man && uncertain > woman {
        return Ok(Outcome::Filtered(FilterReason::Uncertain));
    }
    let (gender, confidence) = pick_binary(man, woman, cfg.tie_break);
    Ok(Outcome::classified(gender, confidence))
}

/// Maps a free-text answer to a gender; "female" is checked first because
/// it contains "male".
pub fn parse_gender_answer(answer: &str) -> Option<GenderLabel> {
    let lower = answer.to_lowercase();
    if lower.contains("female") {
        Some(GenderLabel::Female)
    } else if lower.contains("male") {
        Some(GenderLabel::Male)
    } else {
        None
    }
}

pub fn detect_blip2(image: &ImageView, vqa: &dyn VqaAnswerer) -> Result<Outcome, InferenceError> {
    Ok(match vqa.answer(image, prompts::BLIP2_QUESTION)? {
        VqaAnswer::Text(text) => match parse_gender_answer(&text) {
            Some(g) => Outcome::classified(g, 1.0),
            None => Outcome::Filtered(FilterReason::UnparseableAnswer),
        },
        VqaAnswer::NoAnswer => Outcome::Filtered(FilterReason::UnparseableAnswer),
    })
}

pub fn detect_facepp(image: &ImageView, api: &dyn FaceAnalysisApi) -> Outcome {
    match api.analyze(image) {
        Ok(faces) => {
            let boxes: Vec<BBox> = faces.iter().map(|f| f.bbox).collect();
            match largest(&boxes) {
                None => Outcome::Filtered(FilterReason::NoFace),
                Some(b) => {
                    let face = faces.iter().find(|f| f.bbox == b).expect("largest comes from faces");
                    Outcome::classified(face.gender, 1.0)
                }
            }
        }
        Err(_) => Outcome::Filtered(FilterReason::ProviderError),
    }
}

pub fn detect_mivolo(
    image: &ImageView,
    persons: &dyn PersonDetector,
    attrs: &dyn FaceAttributeClassifier,
    cfg: &DetectorConfig,
) -> Result<Outcome, InferenceError> {
    let mut boxes: Vec<BBox> = persons
        .detect_persons(image)?
        .into_iter()
        .filter(|b| b.confidence >= cfg.mivolo_person_floor)
        .collect();
    sort_by_area_desc(&mut boxes);
    let Some(subject) = boxes.first() else {
        return Ok(Outcome::Filtered(FilterReason::NoPerson));
    };
    let pred = attrs.classify(&image.crop(subject))?;
    Ok(Outcome::classified(pred.gender, pred.confidence))
}

pub fn detect_fairface(
    image: &ImageView,
    faces: &dyn FaceDetector,
    attrs: &dyn FaceAttributeClassifier,
    cfg: &DetectorConfig,
) -> Result<Outcome, InferenceError> {
    let Some(face) = largest(&faces.detect_faces(image)?) else {
        return Ok(Outcome::Filtered(FilterReason::NoFace));
    };
    let region = face.padded(cfg.fairface_padding, image.width(), image.height());
    let pred = attrs.classify(&image.crop(&region))?;
    Ok(Outcome::classified(pred.gender, pred.confidence))
}

/// Region CLIP-Enhance classifies, or the filter reason that stops it.
pub fn clip_enhance_region(
    image: &ImageView,
    faces: &dyn FaceDetector,
    persons: &dyn PersonDetector,
    cfg: &DetectorConfig,
) -> Result<Result<Option<BBox>, FilterReason>, InferenceError> {
    let face_gate = |faces: &dyn FaceDetector| -> Result<bool, InferenceError> {
        Ok(!faces.detect_faces(image)?.is_empty())
    };
    if cfg.clip_enhance_gate_order == GateOrder::FacesFirst && !face_gate(faces)? {
        return Ok(Err(FilterReason::NoFace));
    }
    let mut boxes = persons.detect_persons(image)?;
    sort_by_area_desc(&mut boxes);
    if let [first, second, ..] = boxes.as_slice() {
        if second.area() as f64 > cfg.multi_person_ratio * first.area() as f64 {
            return Ok(Err(FilterReason::MultiplePeople));
        }
    }
    if cfg.clip_enhance_gate_order == GateOrder::PersonsFirst && !face_gate(faces)? {
        return Ok(Err(FilterReason::NoFace));
    }
    Ok(Ok(boxes.first().copied()))
}

pub fn detect_clip_enhance(
    image: &ImageView,
    faces: &dyn FaceDetector,
    persons: &dyn PersonDetector,
    scorer: &dyn SimilarityScorer,
    cfg: &DetectorConfig,
) -> Result<Outcome, InferenceError> {
    match clip_enhance_region(image, faces, persons, cfg)? {
        Err(reason) => Ok(Outcome::Filtered(reason)),
        Ok(Some(region)) => detect_clip(&image.crop(&region), scorer, cfg),
        Ok(None) => detect_clip(image, scorer, cfg),
    }
}

/// Runs one detector on one decoded image.
///
/// Provider failures become `Filtered(ProviderError)`; missing capabilities
/// and unscripted stub lookups are returned as errors.
pub fn detect(
    id: DetectorId,
    image: &ImageView,
    caps: &Capabilities,
    cfg: &DetectorConfig,
) -> Result<Outcome, InferenceError> {
    let result = match id {
        DetectorId::Clip => detect_clip(image, caps.scorer()?, cfg),
        DetectorId::ClipProb => detect_clip_prob(image, caps.faces()?, caps.scorer()?, cfg),
        DetectorId::ClipUncertain => detect_clip_uncertain(image, caps.scorer()?, cfg),
        DetectorId::Blip2 => detect_blip2(image, caps.vqa()?),
        DetectorId::FacePlusPlus => Ok(detect_facepp(image, caps.face_api()?)),
        DetectorId::Mivolo => detect_mivolo(image, caps.persons()?, caps.attributes()?, cfg),
        DetectorId::FairFace => detect_fairface(image, caps.faces()?, caps.attributes()?, cfg),
        DetectorId::ClipEnhance => {
            detect_clip_enhance(image, caps.faces()?, caps.persons()?, caps.scorer()?, cfg)
        }
    };
    match result {
        Err(InferenceError::Provider(_)) => Ok(Outcome::Filtered(FilterReason::ProviderError)),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::stub::StubBackend;
    use image::RgbImage;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn img(id: &str) -> ImageView {
        ImageView::new(id, RgbImage::new(200, 200))
    }

    fn stub(json: &str) -> StubBackend {
        StubBackend::from_json(json).unwrap()
    }

    fn cfg() -> DetectorConfig {
        DetectorConfig::default()
    }

    const ONE_FACE: &str = r#"[{"x": 10, "y": 10, "w": 20, "h": 20, "confidence": 0.99}]"#;

    #[test]
    fn clip_argmax_and_tie_break() {
        let s = stub(r#"{"a": {"sims": {"male": 0.7, "female": 0.3}}, "b": {"sims": {"male": 0.5, "female": 0.5}}}"#);
        assert_eq!(detect_clip(&img("a"), &s, &cfg()).unwrap(), Outcome::classified(GenderLabel::Male, 0.7));
        assert_eq!(detect_clip(&img("b"), &s, &cfg()).unwrap(), Outcome::classified(GenderLabel::Female, 0.5));
        let male_tie = DetectorConfig { tie_break: GenderLabel::Male, ..cfg() };
        assert_eq!(detect_clip(&img("b"), &s, &male_tie).unwrap().gender(), Some(GenderLabel::Male));
    }

    #[test]
    fn clip_prob_cases() {
        let s = stub(&format!(
            r#"{{"none": {{"faces": []}},
                "hi": {{"faces": {ONE_FACE}, "sims": {{"male": 0.95, "female": 0.05}}}},
                "lo": {{"faces": {ONE_FACE}, "sims": {{"male": 0.89, "female": 0.11}}}},
                "edge": {{"faces": {ONE_FACE}, "sims": {{"male": 0.9, "female": 0.1}}}}}}"#
        ));
        assert_eq!(detect_clip_prob(&img("none"), &s, &s, &cfg()).unwrap(), Outcome::Filtered(FilterReason::NoFace));
        assert_eq!(detect_clip_prob(&img("hi"), &s, &s, &cfg()).unwrap(), Outcome::classified(GenderLabel::Male, 0.95));
        assert_eq!(detect_clip_prob(&img("lo"), &s, &s, &cfg()).unwrap(), Outcome::Filtered(FilterReason::LowConfidence));
        // strict less-than: exactly at the threshold passes
        assert!(matches!(detect_clip_prob(&img("edge"), &s, &s, &cfg()).unwrap(), Outcome::Classified { .. }));
    }

    #[test]
    fn clip_uncertain_cases() {
        let s = stub(
            r#"{"obj": {"sims": {"person": 0.2, "object": 0.8}},
                "man": {"sims": {"person": 0.8, "object": 0.2, "man": 0.5, "woman": 0.2, "uncertain": 0.3}},
                "unc": {"sims": {"person": 0.8, "object": 0.2, "man": 0.3, "woman": 0.3, "uncertain": 0.4}}}"#,
        );
        assert_eq!(detect_clip_uncertain(&img("obj"), &s, &cfg()).unwrap(), Outcome::Filtered(FilterReason::NoPerson));
        assert_eq!(detect_clip_uncertain(&img("man"), &s, &cfg()).unwrap(), Outcome::classified(GenderLabel::Male, 0.5));
        assert_eq!(detect_clip_uncertain(&img("unc"), &s, &cfg()).unwrap(), Outcome::Filtered(FilterReason::Uncertain));
    }

    #[test]
    fn blip2_parsing() {
        let s = stub(r#"{"a": {"vqa": "a female"}, "b": {"vqa": "Male."}, "c": {"vqa": "a dog"}, "d": {"vqa": null}}"#);
        assert_eq!(detect_blip2(&img("a"), &s).unwrap(), Outcome::classified(GenderLabel::Female, 1.0));
        assert_eq!(detect_blip2(&img("b"), &s).unwrap(), Outcome::classified(GenderLabel::Male, 1.0));
        assert_eq!(detect_blip2(&img("c"), &s).unwrap(), Outcome::Filtered(FilterReason::UnparseableAnswer));
        assert_eq!(detect_blip2(&img("d"), &s).unwrap(), Outcome::Filtered(FilterReason::UnparseableAnswer));
        assert_eq!(parse_gender_answer("FEMALE"), Some(GenderLabel::Female));
    }

    #[test]
    fn facepp_cases() {
        let s = stub(
            r#"{"one": {"face_api": [{"bbox": {"x": 0, "y": 0, "w": 10, "h": 10, "confidence": 1.0}, "gender": "female"}]},
                "two": {"face_api": [
                    {"bbox": {"x": 0, "y": 0, "w": 10, "h": 10, "confidence": 1.0}, "gender": "female"},
                    {"bbox": {"x": 50, "y": 0, "w": 30, "h": 30, "confidence": 1.0}, "gender": "male"}]},
                "zero": {"face_api": []},
                "err": {"face_api_error": "IMAGE_ERROR_UNSUPPORTED_FORMAT"}}"#,
        );
        assert_eq!(detect_facepp(&img("one"), &s), Outcome::classified(GenderLabel::Female, 1.0));
        assert_eq!(detect_facepp(&img("two"), &s).gender(), Some(GenderLabel::Male));
        assert_eq!(detect_facepp(&img("zero"), &s), Outcome::Filtered(FilterReason::NoFace));
        assert_eq!(detect_facepp(&img("err"), &s), Outcome::Filtered(FilterReason::ProviderError));
    }

    #[test]
    fn mivolo_cases() {
        let s = stub(
            r#"{"none": {"persons": []},
                "weak": {"persons": [{"x": 0, "y": 0, "w": 10, "h": 10, "confidence": 0.3}]},
                "one": {"persons": [{"x": 0, "y": 0, "w": 10, "h": 10, "confidence": 0.9}], "crop": {"attribute": {"gender": "male", "confidence": 0.9}}},
                "two": {"persons": [
                    {"x": 0, "y": 0, "w": 10, "h": 9, "confidence": 0.9},
                    {"x": 50, "y": 20, "w": 10, "h": 10, "confidence": 0.9}]},
                "two#crop=50,20,10,10": {"attribute": {"gender": "female", "confidence": 0.7}}}"#,
        );
        assert_eq!(detect_mivolo(&img("none"), &s, &s, &cfg()).unwrap(), Outcome::Filtered(FilterReason::NoPerson));
        assert_eq!(detect_mivolo(&img("weak"), &s, &s, &cfg()).unwrap(), Outcome::Filtered(FilterReason::NoPerson));
        assert_eq!(detect_mivolo(&img("one"), &s, &s, &cfg()).unwrap(), Outcome::classified(GenderLabel::Male, 0.9));
        // the 100-area box wins over the 90-area one
        assert_eq!(detect_mivolo(&img("two"), &s, &s, &cfg()).unwrap(), Outcome::classified(GenderLabel::Female, 0.7));
        assert!(s.requests().contains(&"two#crop=50,20,10,10".to_string()));
    }

    #[test]
    fn fairface_cases() {
        let s = stub(
            r#"{"none": {"faces": []},
                "one": {"faces": [{"x": 40, "y": 40, "w": 20, "h": 20, "confidence": 0.9}], "crop": {"attribute": {"gender": "female", "confidence": 0.8}}},
                "two": {"faces": [
                    {"x": 100, "y": 100, "w": 8, "h": 5, "confidence": 0.9},
                    {"x": 40, "y": 40, "w": 10, "h": 5, "confidence": 0.9}]},
                "two#crop=37,39,16,7": {"attribute": {"gender": "male", "confidence": 0.6}}}"#,
        );
        assert_eq!(detect_fairface(&img("none"), &s, &s, &cfg()).unwrap(), Outcome::Filtered(FilterReason::NoFace));
        assert_eq!(detect_fairface(&img("one"), &s, &s, &cfg()).unwrap(), Outcome::classified(GenderLabel::Female, 0.8));
        // 50-area face chosen over the 40-area one, padded by 0.25 per side
        assert_eq!(detect_fairface(&img("two"), &s, &s, &cfg()).unwrap(), Outcome::classified(GenderLabel::Male, 0.6));
    }

    fn enhance_script(second_h: u32) -> String {
        format!(
            r#"{{"img": {{"faces": {ONE_FACE},
                "persons": [{{"x": 0, "y": 0, "w": 10, "h": 10, "confidence": 0.9}},
                            {{"x": 100, "y": 0, "w": 1, "h": {second_h}, "confidence": 0.9}}],
                "crop": {{"sims": {{"male": 0.6, "female": 0.4}}}}}}}}"#
        )
    }

    #[test]
    fn clip_enhance_ratio_boundary() {
        let s = stub(&enhance_script(51));
        assert_eq!(
            detect_clip_enhance(&img("img"), &s, &s, &s, &cfg()).unwrap(),
            Outcome::Filtered(FilterReason::MultiplePeople)
        );
        let s = stub(&enhance_script(50));
        assert_eq!(
            detect_clip_enhance(&img("img"), &s, &s, &s, &cfg()).unwrap(),
            Outcome::classified(GenderLabel::Male, 0.6)
        );
        assert!(s.requests().contains(&"img#crop=0,0,10,10".to_string()));
    }

    #[test]
    fn clip_enhance_face_gate_first() {
        let s = stub(r#"{"img": {"faces": [], "persons": [{"x": 0, "y": 0, "w": 10, "h": 10, "confidence": 0.9}]}}"#);
        assert_eq!(
            detect_clip_enhance(&img("img"), &s, &s, &s, &cfg()).unwrap(),
            Outcome::Filtered(FilterReason::NoFace)
        );
    }

    #[test]
    fn clip_enhance_full_frame_without_person_box() {
        let s = stub(&format!(r#"{{"img": {{"faces": {ONE_FACE}, "persons": [], "sims": {{"male": 0.2, "female": 0.8}}}}}}"#));
        assert_eq!(
            detect_clip_enhance(&img("img"), &s, &s, &s, &cfg()).unwrap(),
            Outcome::classified(GenderLabel::Female, 0.8)
        );
    }

    #[test]
    fn clip_enhance_persons_first_order() {
        let s = stub(
            r#"{"img": {"faces": [], "persons": [
                {"x": 0, "y": 0, "w": 10, "h": 10, "confidence": 0.9},
                {"x": 50, "y": 0, "w": 10, "h": 10, "confidence": 0.9}]}}"#,
        );
        let persons_first = DetectorConfig { clip_enhance_gate_order: GateOrder::PersonsFirst, ..cfg() };
        assert_eq!(
            detect_clip_enhance(&img("img"), &s, &s, &s, &persons_first).unwrap(),
            Outcome::Filtered(FilterReason::MultiplePeople)
        );
        assert_eq!(
            detect_clip_enhance(&img("img"), &s, &s, &s, &cfg()).unwrap(),
            Outcome::Filtered(FilterReason::NoFace)
        );
    }

    #[test]
    fn dispatch_maps_provider_errors_and_keeps_script_errors() {
        let caps = Capabilities::all_from(Arc::new(stub(r#"{"err": {"face_api_error": "boom"}}"#)));
        assert_eq!(
            detect(DetectorId::FacePlusPlus, &img("err"), &caps, &cfg()).unwrap(),
            Outcome::Filtered(FilterReason::ProviderError)
        );
        assert!(matches!(
            detect(DetectorId::Clip, &img("ghost"), &caps, &cfg()),
            Err(InferenceError::Unscripted { .. })
        ));
        let empty = Capabilities::default();
        assert!(matches!(detect(DetectorId::Clip, &img("x"), &empty, &cfg()), Err(InferenceError::Missing(_))));
    }

    #[test]
    fn detector_ids_round_trip_and_reject_unknown() {
        for id in DetectorId::ALL {
            assert_eq!(id.as_str().parse::<DetectorId>().unwrap(), id);
        }
        assert!("dall-e".parse::<DetectorId>().is_err());
    }

    proptest! {
        #[test]
        fn clip_never_filters(p in 0.0f64..=1.0) {
            let s = stub(&format!(r#"{{"a": {{"sims": {{"male": {p}, "female": {}}}}}}}"#, 1.0 - p));
            prop_assert!(detect_clip(&img("a"), &s, &cfg()).unwrap().passed_filter() == Some(true));
        }

        #[test]
        fn raising_threshold_keeps_low_confidence_filtered(
            p in 0.0f64..=1.0, t1 in 0.5f64..1.0, dt in 0.0f64..0.5,
        ) {
            let s = stub(&format!(r#"{{"a": {{"faces": {ONE_FACE}, "sims": {{"male": {p}, "female": {}}}}}}}"#, 1.0 - p));
            let lo = DetectorConfig { clip_prob_threshold: t1, ..cfg() };
            let hi = DetectorConfig { clip_prob_threshold: t1 + dt, ..cfg() };
            let a = detect_clip_prob(&img("a"), &s, &s, &lo).unwrap();
            let b = detect_clip_prob(&img("a"), &s, &s, &hi).unwrap();
            if a == Outcome::Filtered(FilterReason::LowConfidence) {
                prop_assert_eq!(b, Outcome::Filtered(FilterReason::LowConfidence));
            }
        }

        #[test]
        fn verdict_rows_round_trip(g in any::<bool>(), c in 0.0f64..=1.0, filtered in any::<bool>()) {
            let outcome = if filtered {
                Outcome::Filtered(FilterReason::MultiplePeople)
            } else {
                Outcome::classified(if g { GenderLabel::Male } else { GenderLabel::Female }, c)
            };
            let v = DetectorVerdict { image_id: "x".into(), detector_id: DetectorId::FairFace, outcome };
            let json = serde_json::to_string(&VerdictRow::from(&v)).unwrap();
            let back: DetectorVerdict = serde_json::from_str::<VerdictRow>(&json).unwrap().try_into().unwrap();
            prop_assert_eq!(back, v);
        }
    }
}
