//! Scripted capability provider for tests.
//!
//! A script is JSON keyed by image id:
//!
//! ```json
//! {
//!   "img1": {
//!     "sims": {"male": 0.6, "female": 0.4},
//!     "faces": [{"x": 10, "y": 8, "w": 20, "h": 20, "confidence": 0.99}],
//!     "persons": [{"x": 0, "y": 0, "w": 60, "h": 100, "confidence": 0.9}],
//!     "vqa": "a female",
//!     "attribute": {"gender": "female", "confidence": 0.8},
//!     "face_api": [{"bbox": {"x": 10, "y": 8, "w": 20, "h": 20, "confidence": 1.0}, "gender": "female"}],
//!     "crop": {"sims": {"male": 0.7, "female": 0.3}}
//!   }
//! }
//! ```
//!
//! `sims` keys are candidate texts or the short aliases in [`ALIASES`].
//! Crops of an image resolve to an exact entry for the crop id first, then
//! to the parent's `crop` entry. Every lookup is logged so tests can check
//! which regions were requested.

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{
    AnalyzedFace, AttributePrediction, FaceAnalysisApi, FaceAttributeClassifier, FaceDetector,
    InferenceError, PersonDetector, Similarity, SimilarityScorer, VqaAnswer, VqaAnswerer,
};
use crate::detectors::prompts as texts;
use crate::gender::GenderLabel;
use crate::imaging::{sort_by_area_desc, BBox, ImageView};

pub const ALIASES: &[(&str, &str)] = &[
    ("male", texts::CLIP_MALE),
    ("female", texts::CLIP_FEMALE),
    ("person", texts::UNCERTAIN_PERSON),
    ("object", texts::UNCERTAIN_OBJECT),
    ("man", texts::UNCERTAIN_MAN),
    ("woman", texts::UNCERTAIN_WOMAN),
    ("uncertain", texts::UNCERTAIN_GENDER),
];

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScriptedAttribute {
    pub gender: GenderLabel,
    pub confidence: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptedFace {
    pub bbox: BBox,
    pub gender: GenderLabel,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sims: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub faces: Option<Vec<BBox>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persons: Option<Vec<BBox>>,
    /// `null` scripts an explicit no-answer.
    #[serde(default, skip_serializing_if = "Option::is_none", with = "double_option")]
    pub vqa: Option<Option<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<ScriptedAttribute>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face_api: Option<Vec<ScriptedFace>>,
    /// Provider failure message returned by the face analysis API.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face_api_error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop: Option<Box<ScriptEntry>>,
}

mod double_option {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Option<String>>, s: S) -> Result<S::Ok, S::Error> {
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Option<String>>, D::Error> {
        Option::<String>::deserialize(d).map(Some)
    }
}

pub type Script = BTreeMap<String, ScriptEntry>;

pub struct StubBackend {
    script: Script,
    log: Mutex<Vec<String>>,
}

impl StubBackend {
    pub fn new(script: Script) -> Self {
        StubBackend { script, log: Mutex::new(Vec::new()) }
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        Ok(StubBackend::new(serde_json::from_str(json)?))
    }

    /// Image ids (including crop ids) looked up so far, in call order.
    pub fn requests(&self) -> Vec<String> {
        self.log.lock().unwrap().clone()
    }

    fn entry(&self, image_id: &str) -> Option<&ScriptEntry> {
        self.log.lock().unwrap().push(image_id.to_string());
        if let Some(e) = self.script.get(image_id) {
            return Some(e);
        }
        let (parent, _) = image_id.split_once("#crop=")?;
        self.script.get(parent)?.crop.as_deref()
    }

    fn lookup<T>(
        &self,
        image: &ImageView,
        capability: &str,
        pick: impl FnOnce(&ScriptEntry) -> Option<T>,
    ) -> Result<T, InferenceError> {
        self.entry(&image.id).and_then(pick).ok_or_else(|| InferenceError::Unscripted {
            image_id: image.id.clone(),
            capability: capability.to_string(),
        })
    }
}

fn resolve_alias(key: &str) -> &str {
    ALIASES.iter().find(|(a, _)| *a == key).map_or(key, |(_, t)| t)
}

impl SimilarityScorer for StubBackend {
    fn score(&self, image: &ImageView, candidates: &[&str]) -> Result<Similarity, InferenceError> {
        let sims = self.lookup(image, "similarity", |e| e.sims.clone())?;
        let scripted: BTreeMap<&str, f64> =
            sims.iter().map(|(k, v)| (resolve_alias(k), *v)).collect();
        let raw = candidates
            .iter()
            .map(|c| {
                scripted.get(c).copied().ok_or_else(|| InferenceError::Unscripted {
                    image_id: image.id.clone(),
                    capability: format!("similarity for `{c}`"),
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        let total: f64 = raw.iter().sum();
        let probs = if total > 0.0 && raw.iter().all(|v| *v >= 0.0) {
            raw.iter().map(|v| v / total).collect()
        } else {
            vec![1.0 / raw.len() as f64; raw.len()]
        };
        Ok(Similarity { raw, probs })
    }
}

impl VqaAnswerer for StubBackend {
    fn answer(&self, image: &ImageView, _question: &str) -> Result<VqaAnswer, InferenceError> {
        let answer = self.lookup(image, "vqa answer", |e| e.vqa.clone())?;
        Ok(match answer {
            Some(text) if !text.trim().is_empty() => VqaAnswer::Text(text),
            _ => VqaAnswer::NoAnswer,
        })
    }
}

impl FaceDetector for StubBackend {
    fn detect_faces(&self, image: &ImageView) -> Result<Vec<BBox>, InferenceError> {
        self.lookup(image, "faces", |e| e.faces.clone())
    }
}

impl PersonDetector for StubBackend {
    fn detect_persons(&self, image: &ImageView) -> Result<Vec<BBox>, InferenceError> {
        let mut boxes = self.lookup(image, "persons", |e| e.persons.clone())?;
        sort_by_area_desc(&mut boxes);
        Ok(boxes)
    }
}

impl FaceAttributeClassifier for StubBackend {
    fn classify(&self, image: &ImageView) -> Result<AttributePrediction, InferenceError> {
        let a = self.lookup(image, "attribute", |e| e.attribute)?;
        Ok(AttributePrediction { gender: a.gender, confidence: a.confidence })
    }
}

impl FaceAnalysisApi for StubBackend {
    fn analyze(&self, image: &ImageView) -> Result<Vec<AnalyzedFace>, InferenceError> {
        let entry = self.lookup(image, "face analysis", |e| {
            if e.face_api.is_some() || e.face_api_error.is_some() {
                Some(e.clone())
            } else {
                None
            }
        })?;
        if let Some(msg) = entry.face_api_error {
            return Err(InferenceError::Provider(msg));
        }
        Ok(entry
            .face_api
            .unwrap_or_default()
            .into_iter()
            .map(|f| AnalyzedFace { bbox: f.bbox, gender: f.gender })
            .collect())
    }
}
