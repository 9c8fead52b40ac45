//! Client for the Face++ detect endpoint.
//!
//! Images go up as a multipart POST with `return_attributes=gender`; the
//! JSON reply carries a `faces` array. Credentials come from
//! `FACEPP_API_KEY` / `FACEPP_API_SECRET`.

use std::time::Duration;

use serde::Deserialize;

use super::{AnalyzedFace, FaceAnalysisApi, InferenceError};
use crate::gender::GenderLabel;
use crate::imaging::{BBox, ImageView};

pub const DEFAULT_ENDPOINT: &str = "https://api-us.faceplusplus.com/facepp/v3/detect";
pub const KEY_VAR: &str = "FACEPP_API_KEY";
pub const SECRET_VAR: &str = "FACEPP_API_SECRET";

#[derive(Debug, Clone)]
pub struct FacePlusPlusConfig {
    pub endpoint: String,
    pub api_key: String,
    pub api_secret: String,
    pub max_retries: u32,
    pub timeout: Duration,
    pub retry_backoff: Duration,
}

impl FacePlusPlusConfig {
    pub fn from_env(endpoint: Option<String>) -> Result<Self, InferenceError> {
        let var = |name: &str| {
            std::env::var(name)
                .map_err(|_| InferenceError::Provider(format!("environment variable {name} is not set")))
        };
        Ok(FacePlusPlusConfig {
            endpoint: endpoint.unwrap_or_else(|| DEFAULT_ENDPOINT.to_string()),
            api_key: var(KEY_VAR)?,
            api_secret: var(SECRET_VAR)?,
            max_retries: 3,
            timeout: Duration::from_secs(30),
            retry_backoff: Duration::from_millis(500),
        })
    }
}

pub struct FacePlusPlusClient {
    config: FacePlusPlusConfig,
    agent: ureq::Agent,
}

#[derive(Debug, Deserialize)]
struct Rectangle {
    top: u32,
    left: u32,
    width: u32,
    height: u32,
}

#[derive(Debug, Deserialize)]
struct GenderValue {
    value: String,
}

#[derive(Debug, Deserialize)]
struct Attributes {
    gender: Option<GenderValue>,
}

#[derive(Debug, Deserialize)]
struct Face {
    face_rectangle: Rectangle,
    #[serde(default)]
    attributes: Option<Attributes>,
}

#[derive(Debug, Deserialize)]
struct DetectResponse {
    #[serde(default)]
    faces: Vec<Face>,
    #[serde(default)]
    error_message: Option<String>,
}

/// Parses a detect response body. Faces without a gender attribute are
/// dropped.
pub fn parse_response(body: &str) -> Result<Vec<AnalyzedFace>, InferenceError> {
    let resp: DetectResponse = serde_json::from_str(body)
        .map_err(|e| InferenceError::Provider(format!("malformed Face++ response: {e}")))?;
    if let Some(msg) = resp.error_message {
        return Err(InferenceError::Provider(msg));
    }
    Ok(resp
        .faces
        .into_iter()
        .filter_map(|f| {
            let gender = f.attributes?.gender?.value.parse::<GenderLabel>().ok()?;
            let r = f.face_rectangle;
            Some(AnalyzedFace { bbox: BBox::new(r.left, r.top, r.width.max(1), r.height.max(1), 1.0), gender })
        })
        .collect())
}

const BOUNDARY: &str = "----genbias-facepp-boundary";

fn multipart_body(fields: &[(&str, &str)], image_png: &[u8]) -> Vec<u8> {
    let mut body = Vec::with_capacity(image_png.len() + 512);
    for (name, value) in fields {
        body.extend_from_slice(
            format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{name}\"\r\n\r\n{value}\r\n")
                .as_bytes(),
        );
    }
    body.extend_from_slice(
        format!(
            "--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"image_file\"; filename=\"image.png\"\r\nContent-Type: image/png\r\n\r\n"
        )
        .as_bytes(),
    );
    body.extend_from_slice(image_png);
    body.extend_from_slice(format!("\r\n--{BOUNDARY}--\r\n").as_bytes());
    body
}

impl FacePlusPlusClient {
    pub fn new(config: FacePlusPlusConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        FacePlusPlusClient { config, agent }
    }

    fn attempt(&self, body: &[u8]) -> Result<Vec<AnalyzedFace>, (bool, InferenceError)> {
        let mut resp = self
            .agent
            .post(&self.config.endpoint)
            .header("Content-Type", format!("multipart/form-data; boundary={BOUNDARY}"))
            .send(body)
            .map_err(|e| (true, InferenceError::Provider(e.to_string())))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| (true, InferenceError::Provider(e.to_string())))?;
        match status {
            200 => parse_response(&text).map_err(|e| (false, e)),
            // Face++ signals rate limiting with 403 CONCURRENCY_LIMIT_EXCEEDED.
            403 if text.contains("CONCURRENCY_LIMIT_EXCEEDED") => {
                Err((true, InferenceError::Provider(text)))
            }
            s if s >= 500 => Err((true, InferenceError::Provider(format!("HTTP {s}: {text}")))),
            s => Err((false, InferenceError::Provider(format!("HTTP {s}: {text}")))),
        }
    }
}

impl FaceAnalysisApi for FacePlusPlusClient {
    fn analyze(&self, image: &ImageView) -> Result<Vec<AnalyzedFace>, InferenceError> {
        let png = image.encode_png().map_err(|e| InferenceError::Provider(e.to_string()))?;
        let body = multipart_body(
            &[
                ("api_key", &self.config.api_key),
                ("api_secret", &self.config.api_secret),
                ("return_attributes", "gender"),
            ],
            &png,
        );
        let mut tries = 0;
        loop {
            match self.attempt(&body) {
                Ok(faces) => return Ok(faces),
                Err((true, _)) if tries < self.config.max_retries => {
                    tries += 1;
                    std::thread::sleep(self.config.retry_backoff * tries);
                }
                Err((_, e)) => return Err(e),
            }
        }
    }
}
