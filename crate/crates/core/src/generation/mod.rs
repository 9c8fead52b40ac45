//! Image generation orchestration and the run manifest.

pub mod mock;

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompts::PromptSpec;
use mock::{MockConfig, SceneDescriptor};

pub const IMAGES_DIR: &str = "images";

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("images_per_prompt must be at least 1")]
    NoImagesRequested,
    #[error("backend `{0}`: max_concurrency must be at least 1")]
    BadConcurrency(String),
    #[error("backend `{backend}` config: {reason}")]
    BadConfig { backend: String, reason: String },
    #[error("backend `{backend}` unreachable: {reason}")]
    Unreachable {
        backend: String,
        reason: String,
        /// Entries of the prompts that finished before the abort.
        completed: Vec<ManifestEntry>,
    },
    #[error("writing {path}: {reason}")]
    Disk { path: PathBuf, reason: String },
    #[error("manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    LocalPipeline,
    RemoteApi,
    Mock,
}

fn default_concurrency() -> u32 {
    1
}

fn default_retries() -> u32 {
    2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub id: String,
    pub kind: BackendKind,
    /// Adapter settings; the shape depends on `kind`.
    #[serde(default)]
    pub config: serde_json::Value,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: u32,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

impl BackendDescriptor {
    pub fn mock(id: impl Into<String>, config: &MockConfig) -> Self {
        BackendDescriptor {
            id: id.into(),
            kind: BackendKind::Mock,
            config: serde_json::to_value(config).expect("mock config serializes"),
            max_concurrency: 4,
            max_retries: default_retries(),
        }
    }

    fn config_as<T: serde::de::DeserializeOwned + Default>(&self) -> Result<T, GenerateError> {
        if self.config.is_null() {
            return Ok(T::default());
        }
        serde_json::from_value(self.config.clone()).map_err(|e| GenerateError::BadConfig {
            backend: self.id.clone(),
            reason: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub prompt_id: String,
    pub backend_id: String,
    pub seed: u64,
    /// Relative to the run directory.
    pub path: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(flatten)]
    pub record: ImageRecord,
    pub status: EntryStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub struct GenerationRequest<'a> {
    pub prompt: &'a PromptSpec,
    pub seed: u64,
    /// Position of this image within its prompt.
    pub index: u32,
}

pub struct GeneratedImage {
    pub png: Vec<u8>,
    pub width: u32,
    pub height: u32,
    pub scene: Option<SceneDescriptor>,
}

#[derive(Debug, Error)]
pub enum BackendError {
    /// Transport-level failure; the backend could not be reached.
    #[error("unreachable: {0}")]
    Unreachable(String),
    /// The backend answered but did not produce an image.
    #[error("generation failed: {0}")]
    Failed(String),
}

pub trait ImageBackend: Send + Sync {
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<GeneratedImage, BackendError>;
}

pub struct MockBackend {
    config: MockConfig,
    fail_seeds: HashSet<u64>,
    flaky_seen: Mutex<HashSet<(String, u64)>>,
}

impl MockBackend {
    pub fn new(config: MockConfig) -> Self {
        MockBackend {
            fail_seeds: config.fail_seeds.iter().copied().collect(),
            flaky_seen: Mutex::new(HashSet::new()),
            config,
        }
    }
}

impl ImageBackend for MockBackend {
    fn generate(&self, req: &GenerationRequest<'_>) -> Result<GeneratedImage, BackendError> {
        if self.fail_seeds.contains(&req.seed) {
            return Err(BackendError::Failed(format!("planted failure for seed {}", req.seed)));
        }
        if self.config.flaky_seeds.contains(&req.seed) {
            let first = self.flaky_seen.lock().unwrap().insert((req.prompt.id.clone(), req.seed));
            if first {
                return Err(BackendError::Failed(format!("flaky seed {}", req.seed)));
            }
        }
        let scene = self.config.scene_for(&req.prompt.id, req.index);
        let (png, descriptor) = mock::mock_generate(req.prompt, req.seed, scene, &self.config);
        Ok(GeneratedImage {
            png,
            width: descriptor.width,
            height: descriptor.height,
            scene: Some(descriptor),
        })
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub width: u32,
    pub height: u32,
    pub timeout_secs: u64,
    /// Environment variable holding a bearer token, if the endpoint needs one.
    pub token_env: Option<String>,
}

/// Posts `{prompt, seed, width, height}` as JSON and expects PNG bytes back.
pub struct RemoteBackend {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let timeout = Duration::from_secs(if config.timeout_secs == 0 { 300 } else { config.timeout_secs });
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .new_agent();
        RemoteBackend { config, agent }
    }
}

impl ImageBackend for RemoteBackend {
    fn generate(&self, req: &GenerationRequest<'_>) -> Result<GeneratedImage, BackendError> {
        let body = serde_json::json!({
            "prompt": req.prompt.text,
            "seed": req.seed,
            "width": self.config.width,
            "height": self.config.height,
        });
        let mut request = self.agent.post(&self.config.endpoint).header("Content-Type", "application/json");
        if let Some(var) = &self.config.token_env {
            let token = std::env::var(var).map_err(|_| BackendError::Unreachable(format!("environment variable {var} is not set")))?;
            request = request.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = request
            .send(body.to_string().as_bytes())
            .map_err(|e| match e {
            ureq::Error::StatusCode(code) => BackendError::Failed(format!("HTTP {code}")),
            other => BackendError::Unreachable(other.to_string()),
        })?;
        let png = resp
            .body_mut()
            .with_config()
            .limit(64 * 1024 * 1024)
            .read_to_vec()
            .map_err(|e| BackendError::Failed(e.to_string()))?;
        let (width, height) = png_dimensions(&png).map_err(BackendError::Failed)?;
        Ok(GeneratedImage { png, width, height, scene: None })
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalPipelineConfig {
    /// Program and arguments; `{prompt}`, `{seed}` and `{out}` are substituted.
    pub command: Vec<String>,
}

/// Runs a local generation script once per image.
pub struct LocalPipelineBackend {
    config: LocalPipelineConfig,
    scratch: tempfile::TempDir,
}

impl LocalPipelineBackend {
    pub fn new(config: LocalPipelineConfig) -> std::io::Result<Self> {
        Ok(LocalPipelineBackend { config, scratch: tempfile::tempdir()? })
    }
}

impl ImageBackend for LocalPipelineBackend {
    fn generate(&self, req: &GenerationRequest<'_>) -> Result<GeneratedImage, BackendError> {
        let (program, args) = self
            .config
            .command
            .split_first()
            .ok_or_else(|| BackendError::Unreachable("empty command".into()))?;
        let out = self.scratch.path().join(format!("{}-{}.png", req.prompt.id, req.seed));
        let subst = |a: &String| {
            a.replace("{prompt}", &req.prompt.text)
                .replace("{seed}", &req.seed.to_string())
                .replace("{out}", &out.to_string_lossy())
        };
        let status = Command::new(program)
            .args(args.iter().map(subst))
            .status()
            .map_err(|e| BackendError::Unreachable(e.to_string()))?;
        if !status.success() {
            return Err(BackendError::Failed(format!("pipeline exited with {status}")));
        }
        let png = std::fs::read(&out).map_err(|e| BackendError::Failed(e.to_string()))?;
        let _ = std::fs::remove_file(&out);
        let (width, height) = png_dimensions(&png).map_err(BackendError::Failed)?;
        Ok(GeneratedImage { png, width, height, scene: None })
    }
}

fn png_dimensions(png: &[u8]) -> Result<(u32, u32), String> {
    let img = image::load_from_memory_with_format(png, image::ImageFormat::Png)
        .map_err(|e| format!("backend returned an undecodable PNG: {e}"))?;
    Ok((img.width(), img.height()))
}

pub fn instantiate(desc: &BackendDescriptor) -> Result<Box<dyn ImageBackend>, GenerateError> {
    Ok(match desc.kind {
        BackendKind::Mock => {
            let cfg: MockConfig = desc.config_as()?;
            if cfg.width < 120 || cfg.height < 100 {
                return Err(GenerateError::BadConfig {
                    backend: desc.id.clone(),
                    reason: "mock images must be at least 120x100".into(),
                });
            }
            Box::new(MockBackend::new(cfg))
        }
        BackendKind::RemoteApi => {
            let cfg: RemoteConfig = desc.config_as()?;
            if cfg.endpoint.is_empty() {
                return Err(GenerateError::BadConfig {
                    backend: desc.id.clone(),
                    reason: "remote-api needs an endpoint".into(),
                });
            }
            Box::new(RemoteBackend::new(cfg))
        }
        BackendKind::LocalPipeline => {
            let cfg: LocalPipelineConfig = desc.config_as()?;
            Box::new(LocalPipelineBackend::new(cfg).map_err(|e| GenerateError::BadConfig {
                backend: desc.id.clone(),
                reason: e.to_string(),
            })?)
        }
    })
}

pub fn image_id(backend_id: &str, prompt_id: &str, index: u32) -> String {
    format!("{backend_id}--{prompt_id}--{index:03}")
}

pub fn sidecar_path(image_path: &str) -> String {
    match image_path.strip_suffix(".png") {
        Some(stem) => format!("{stem}.scene.json"),
        None => format!("{image_path}.scene.json"),
    }
}

enum PromptResult {
    Done(Vec<ManifestEntry>),
    Aborted(String),
    Disk(GenerateError),
}

/// Generates `images_per_prompt` images for every prompt with one backend.
///
/// Images (and mock sidecars) are written under `run_dir/images/`. Returned
/// entries follow suite order, then image index; failed generations stay in
/// the list with `status = failed`.
pub fn generate(
    suite: &[PromptSpec],
    desc: &BackendDescriptor,
    backend: &dyn ImageBackend,
    images_per_prompt: u32,
    base_seed: u64,
    run_dir: &Path,
) -> Result<Vec<ManifestEntry>, GenerateError> {
    if images_per_prompt == 0 {
        return Err(GenerateError::NoImagesRequested);
    }
    if desc.max_concurrency == 0 {
        return Err(GenerateError::BadConcurrency(desc.id.clone()));
    }
    if suite.is_empty() {
        return Ok(Vec::new());
    }
    let images_dir = run_dir.join(IMAGES_DIR);
    std::fs::create_dir_all(&images_dir)
        .map_err(|e| GenerateError::Disk { path: images_dir.clone(), reason: e.to_string() })?;

    let abort = AtomicBool::new(false);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(desc.max_concurrency as usize)
        .build()
        .map_err(|e| GenerateError::BadConfig { backend: desc.id.clone(), reason: e.to_string() })?;

    let results: Vec<PromptResult> = pool.install(|| {
        suite
            .par_iter()
            .map(|prompt| {
                if abort.load(Ordering::SeqCst) {
                    return PromptResult::Aborted(String::new());
                }
                let r = generate_prompt(prompt, desc, backend, images_per_prompt, base_seed, run_dir);
                if !matches!(r, PromptResult::Done(_)) {
                    abort.store(true, Ordering::SeqCst);
                }
                r
            })
            .collect()
    });

    let mut entries = Vec::new();
    let mut failure = None;
    for r in results {
        match r {
            PromptResult::Done(e) => entries.extend(e),
            PromptResult::Aborted(reason) if !reason.is_empty() => {
                failure.get_or_insert(Err(reason));
            }
            PromptResult::Aborted(_) => {}
            PromptResult::Disk(e) => {
                failure = Some(Ok(e));
            }
        }
    }
    match failure {
        None => Ok(entries),
        Some(Ok(disk)) => Err(disk),
        Some(Err(reason)) => Err(GenerateError::Unreachable {
            backend: desc.id.clone(),
            reason,
            completed: entries,
        }),
    }
}

fn generate_prompt(
    prompt: &PromptSpec,
    desc: &BackendDescriptor,
    backend: &dyn ImageBackend,
    images_per_prompt: u32,
    base_seed: u64,
    run_dir: &Path,
) -> PromptResult {
    let mut entries = Vec::with_capacity(images_per_prompt as usize);
    for index in 0..images_per_prompt {
        let seed = base_seed.wrapping_add(u64::from(index));
        let image_id = image_id(&desc.id, &prompt.id, index);
        let rel_path = format!("{IMAGES_DIR}/{image_id}.png");
        let req = GenerationRequest { prompt, seed, index };

        let mut attempt = 0;
        let outcome = loop {
            match backend.generate(&req) {
                Ok(img) => break Ok(img),
                Err(_) if attempt < desc.max_retries => attempt += 1,
                Err(e) => break Err(e),
            }
        };
        let mut record = ImageRecord {
            image_id,
            prompt_id: prompt.id.clone(),
            backend_id: desc.id.clone(),
            seed,
            path: rel_path.clone(),
            width: 0,
            height: 0,
        };
        match outcome {
            Ok(img) => {
                if let Err(e) = write_file(&run_dir.join(&rel_path), &img.png) {
                    return PromptResult::Disk(e);
                }
                if let Some(scene) = &img.scene {
                    let json = serde_json::to_vec_pretty(scene).expect("scene serializes");
                    if let Err(e) = write_file(&run_dir.join(sidecar_path(&rel_path)), &json) {
                        return PromptResult::Disk(e);
                    }
                }
                record.width = img.width;
                record.height = img.height;
                entries.push(ManifestEntry { record, status: EntryStatus::Ok, error: None });
            }
            Err(BackendError::Unreachable(reason)) => return PromptResult::Aborted(reason),
            Err(e @ BackendError::Failed(_)) => entries.push(ManifestEntry {
                record,
                status: EntryStatus::Failed,
                error: Some(e.to_string()),
            }),
        }
    }
    PromptResult::Done(entries)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), GenerateError> {
    std::fs::write(path, bytes)
        .map_err(|e| GenerateError::Disk { path: path.to_path_buf(), reason: e.to_string() })
}

/// Entries with `status = ok`.
pub fn records(entries: &[ManifestEntry]) -> Vec<ImageRecord> {
    entries
        .iter()
        .filter(|e| e.status == EntryStatus::Ok)
        .map(|e| e.record.clone())
        .collect()
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), GenerateError> {
    let mut out = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut out, e).map_err(|e| GenerateError::Manifest(e.to_string()))?;
        out.write_all(b"\n").expect("vec write");
    }
    write_file(path, &out)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, GenerateError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| GenerateError::Manifest(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| GenerateError::Manifest(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn read_scene(run_dir: &Path, record: &ImageRecord) -> Option<SceneDescriptor> {
    let text = std::fs::read_to_string(run_dir.join(sidecar_path(&record.path))).ok()?;
    serde_json::from_str(&text).ok()
}
