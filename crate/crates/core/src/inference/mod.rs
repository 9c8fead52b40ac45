//! Neural capabilities the detectors depend on.
//!
//! Detectors only see these traits. Real models plug in as adapters; the
//! crate ships a scripted [`stub::StubBackend`], a pixel-reading
//! [`synthetic::SceneReader`] for mock images, and the remote
//! [`facepp::FacePlusPlusClient`].

pub mod facepp;
pub mod stub;
pub mod synthetic;

use std::sync::Arc;

use thiserror::Error;

use crate::gender::GenderLabel;
use crate::imaging::{BBox, ImageView};

/// Logit scale released with the ViT-L/14 CLIP checkpoint.
pub const DEFAULT_LOGIT_SCALE: f64 = 100.0;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum InferenceError {
    #[error("image `{image_id}` has no scripted {capability}")]
    Unscripted { image_id: String, capability: String },
    #[error("capability `{0}` is not configured")]
    Missing(&'static str),
    #[error("provider error: {0}")]
    Provider(String),
}

/// Raw image-text similarities and their normalized probabilities, in
/// candidate order.
#[derive(Debug, Clone, PartialEq)]
pub struct Similarity {
    pub raw: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Similarity {
    /// Probabilities from raw similarities via `softmax(scale * raw)`.
    pub fn from_raw(raw: Vec<f64>, scale: f64) -> Self {
        let probs = softmax(&raw, scale);
        Similarity { raw, probs }
    }
}

pub fn softmax(raw: &[f64], scale: f64) -> Vec<f64> {
    if raw.is_empty() {
        return Vec::new();
    }
    let max = raw.iter().map(|r| r * scale).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = raw.iter().map(|r| (r * scale - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub trait SimilarityScorer: Send + Sync {
    fn score(&self, image: &ImageView, candidates: &[&str]) -> Result<Similarity, InferenceError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VqaAnswer {
    Text(String),
    NoAnswer,
}

pub trait VqaAnswerer: Send + Sync {
    fn answer(&self, image: &ImageView, question: &str) -> Result<VqaAnswer, InferenceError>;
}

pub trait FaceDetector: Send + Sync {
    fn detect_faces(&self, image: &ImageView) -> Result<Vec<BBox>, InferenceError>;
}

/// Returns boxes of class "person" only, largest area first.
pub trait PersonDetector: Send + Sync {
    fn detect_persons(&self, image: &ImageView) -> Result<Vec<BBox>, InferenceError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttributePrediction {
    pub gender: GenderLabel,
    pub confidence: f64,
}

pub trait FaceAttributeClassifier: Send + Sync {
    fn classify(&self, image: &ImageView) -> Result<AttributePrediction, InferenceError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzedFace {
    pub bbox: BBox,
    pub gender: GenderLabel,
}

/// Remote face analysis: every face found with its gender attribute.
pub trait FaceAnalysisApi: Send + Sync {
    fn analyze(&self, image: &ImageView) -> Result<Vec<AnalyzedFace>, InferenceError>;
}

/// The set of capability handles a detector run may draw on.
#[derive(Clone, Default)]
pub struct Capabilities {
    pub scorer: Option<Arc<dyn SimilarityScorer>>,
    pub vqa: Option<Arc<dyn VqaAnswerer>>,
    pub faces: Option<Arc<dyn FaceDetector>>,
    pub persons: Option<Arc<dyn PersonDetector>>,
    pub attributes: Option<Arc<dyn FaceAttributeClassifier>>,
    pub face_api: Option<Arc<dyn FaceAnalysisApi>>,
}

impl Capabilities {
    /// Uses one provider for every capability.
    pub fn all_from<P>(provider: Arc<P>) -> Self
    where
        P: SimilarityScorer
            + VqaAnswerer
            + FaceDetector
            + PersonDetector
            + FaceAttributeClassifier
            + FaceAnalysisApi
            + 'static,
    {
        Capabilities {
            scorer: Some(provider.clone()),
            vqa: Some(provider.clone()),
            faces: Some(provider.clone()),
            persons: Some(provider.clone()),
            attributes: Some(provider.clone()),
            face_api: Some(provider),
        }
    }

    pub fn scorer(&self) -> Result<&dyn SimilarityScorer, InferenceError> {
        self.scorer.as_deref().ok_or(InferenceError::Missing("similarity scorer"))
    }

    pub fn vqa(&self) -> Result<&dyn VqaAnswerer, InferenceError> {
        self.vqa.as_deref().ok_or(InferenceError::Missing("vqa answerer"))
    }

    pub fn faces(&self) -> Result<&dyn FaceDetector, InferenceError> {
        self.faces.as_deref().ok_or(InferenceError::Missing("face detector"))
    }

    pub fn persons(&self) -> Result<&dyn PersonDetector, InferenceError> {
        self.persons.as_deref().ok_or(InferenceError::Missing("person detector"))
    }

    pub fn attributes(&self) -> Result<&dyn FaceAttributeClassifier, InferenceError> {
        self.attributes.as_deref().ok_or(InferenceError::Missing("face attribute classifier"))
    }

    pub fn face_api(&self) -> Result<&dyn FaceAnalysisApi, InferenceError> {
        self.face_api.as_deref().ok_or(InferenceError::Missing("face analysis api"))
    }
}
