//! HTTP service behind the annotation UI.
//!
//! Each annotator walks their own seeded permutation of the image set.
//! Labels go to the append-only [`LabelStore`] and, when a state directory
//! is configured, to `labels.csv` plus `cursors.json` so a restart picks up
//! where everyone left off.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::groundtruth::{
    kappa_on_overlap, label_csv_line, GroundTruthLabel, LabelCategory, LabelStore, LABELS_CSV_HEADER,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOKEN_HEADER: &str = "x-annotation-token";
pub const LABELS_FILE: &str = "labels.csv";
pub const CURSORS_FILE: &str = "cursors.json";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationImage {
    pub image_id: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    pub images: Vec<AnnotationImage>,
    /// Base seed for the per-annotator shuffles.
    pub seed: u64,
    /// Shared secret required in [`TOKEN_HEADER`] when set.
    pub token: Option<String>,
    pub state_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"schema_version": SCHEMA_VERSION, "error": self.message}))).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub completed: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskView {
    pub schema_version: u32,
    pub task_id: String,
    pub annotator: String,
    pub done: bool,
    pub image_id: Option<String>,
    pub image_url: Option<String>,
    pub progress: Progress,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub annotator: String,
    pub image_id: String,
    pub category: String,
    #[serde(default)]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitAck {
    pub schema_version: u32,
    pub accepted: bool,
    /// 1 for a first label, higher for resubmissions.
    pub revision: usize,
    pub advanced: bool,
    pub progress: Progress,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressView {
    pub schema_version: u32,
    pub annotator: String,
    pub done: bool,
    pub progress: Progress,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementView {
    pub schema_version: u32,
    pub annotators: Vec<String>,
    /// Images labeled by both annotators.
    pub overlap: usize,
    pub defined: bool,
    pub kappa: Option<f64>,
    /// Disagreement counts keyed `a_category/b_category`.
    pub disagreements: BTreeMap<String, usize>,
    /// Images the two annotators disagree on, pending discussion.
    pub unresolved: Vec<String>,
}

struct Inner {
    store: LabelStore,
    cursors: BTreeMap<String, usize>,
    queues: HashMap<String, Vec<usize>>,
}

pub struct AnnotationService {
    config: ServiceConfig,
    index: HashMap<String, usize>,
    inner: Mutex<Inner>,
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

impl AnnotationService {
    /// Builds the service, restoring labels and cursors from the state
    /// directory if present.
    pub fn new(mut config: ServiceConfig) -> std::io::Result<Self> {
        config.images.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        config.images.dedup_by(|a, b| a.image_id == b.image_id);
        let index = config.images.iter().enumerate().map(|(i, im)| (im.image_id.clone(), i)).collect();
        let (mut store, mut cursors) = (LabelStore::new(), BTreeMap::new());
        if let Some(dir) = &config.state_dir {
            fs::create_dir_all(dir)?;
            let labels = dir.join(LABELS_FILE);
            if labels.exists() {
                store = LabelStore::read_csv(fs::File::open(&labels)?)
                    .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))?;
            }
            let cur = dir.join(CURSORS_FILE);
            if cur.exists() {
                cursors = serde_json::from_slice(&fs::read(&cur)?)?;
            }
        }
        Ok(AnnotationService {
            config,
            index,
            inner: Mutex::new(Inner { store, cursors, queues: HashMap::new() }),
        })
    }

    pub fn total(&self) -> usize {
        self.config.images.len()
    }

    /// Image order for an annotator: a seeded shuffle of the sorted ids.
    pub fn queue(&self, annotator: &str) -> Vec<String> {
        self.make_queue(annotator).into_iter().map(|i| self.config.images[i].image_id.clone()).collect()
    }

    fn make_queue(&self, annotator: &str) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.config.images.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.config.seed ^ fnv1a(annotator)));
        order
    }

    fn queue_in<'a>(&self, inner: &'a mut Inner, annotator: &str) -> &'a [usize] {
        inner.queues.entry(annotator.to_string()).or_insert_with(|| self.make_queue(annotator))
    }

    fn progress_in(&self, inner: &Inner, annotator: &str) -> Progress {
        Progress { completed: inner.cursors.get(annotator).copied().unwrap_or(0), total: self.total() }
    }

    pub fn next_task(&self, annotator: &str) -> TaskView {
        let mut inner = self.inner.lock().unwrap();
        let cursor = inner.cursors.get(annotator).copied().unwrap_or(0);
        let current = self.queue_in(&mut inner, annotator).get(cursor).copied();
        let image_id = current.map(|i| self.config.images[i].image_id.clone());
        TaskView {
            schema_version: SCHEMA_VERSION,
            task_id: format!("{annotator}@{}", self.config.seed),
            annotator: annotator.to_string(),
            done: image_id.is_none(),
            image_url: image_id.as_ref().map(|id| format!("/api/images/{id}")),
            image_id,
            progress: self.progress_in(&inner, annotator),
        }
    }

    pub fn progress(&self, annotator: &str) -> ProgressView {
        let inner = self.inner.lock().unwrap();
        let progress = self.progress_in(&inner, annotator);
        ProgressView {
            schema_version: SCHEMA_VERSION,
            annotator: annotator.to_string(),
            done: progress.completed >= progress.total,
            progress,
        }
    }

    pub fn submit(&self, req: &SubmitRequest) -> Result<SubmitAck, ApiError> {
        if req.annotator.trim().is_empty() {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, "annotator is required"));
        }
        let Some(&img) = self.index.get(&req.image_id) else {
            return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown image `{}`", req.image_id)));
        };
        let category = LabelCategory::from_parts(&req.category, req.reason.as_deref())
            .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
        let label = GroundTruthLabel {
            image_id: req.image_id.clone(),
            annotator_id: req.annotator.clone(),
            category,
            timestamp: chrono::Utc::now(),
        };

        let mut inner = self.inner.lock().unwrap();
        self.persist_label(&label)?;
        let revision = inner.store.submit(label);
        let cursor = inner.cursors.get(&req.annotator).copied().unwrap_or(0);
        let advanced = self.queue_in(&mut inner, &req.annotator).get(cursor) == Some(&img);
        if advanced {
            inner.cursors.insert(req.annotator.clone(), cursor + 1);
            self.persist_cursors(&inner.cursors)?;
        }
        Ok(SubmitAck {
            schema_version: SCHEMA_VERSION,
            accepted: true,
            revision,
            advanced,
            progress: self.progress_in(&inner, &req.annotator),
        })
    }

    /// Live agreement between two annotators (default: the first two by id).
    pub fn agreement(&self, a: Option<&str>, b: Option<&str>) -> AgreementView {
        let inner = self.inner.lock().unwrap();
        let known: Vec<String> = inner.store.annotators().into_iter().collect();
        let pair = match (a, b) {
            (Some(a), Some(b)) => Some((a.to_string(), b.to_string())),
            _ if known.len() >= 2 => Some((known[0].clone(), known[1].clone())),
            _ => None,
        };
        let mut view = AgreementView {
            schema_version: SCHEMA_VERSION,
            annotators: Vec::new(),
            overlap: 0,
            defined: false,
            kappa: None,
            disagreements: BTreeMap::new(),
            unresolved: Vec::new(),
        };
        let Some((a, b)) = pair else { return view };
        let (la, lb) = (inner.store.labels_by(&a), inner.store.labels_by(&b));
        view.annotators = vec![a, b];
        if let Ok((kappa, overlap)) = kappa_on_overlap(&la, &lb) {
            view.overlap = overlap;
            view.kappa = kappa;
            view.defined = kappa.is_some();
        }
        for (img, ca) in &la {
            if let Some(cb) = lb.get(img) {
                if ca.kind() != cb.kind() {
                    *view.disagreements.entry(format!("{}/{}", ca.kind(), cb.kind())).or_default() += 1;
                    view.unresolved.push(img.clone());
                }
            }
        }
        view
    }

    /// Snapshot of every label revision received so far.
    pub fn labels(&self) -> LabelStore {
        self.inner.lock().unwrap().store.clone()
    }

    pub fn image_path(&self, image_id: &str) -> Option<&Path> {
        self.index.get(image_id).map(|&i| self.config.images[i].path.as_path())
    }

    fn persist_label(&self, label: &GroundTruthLabel) -> Result<(), ApiError> {
        let Some(dir) = &self.config.state_dir else { return Ok(()) };
        let io = |e: std::io::Error| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
        let path = dir.join(LABELS_FILE);
        let fresh = !path.exists();
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        let line = label_csv_line(label).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        if fresh {
            f.write_all(LABELS_CSV_HEADER.as_bytes()).map_err(io)?;
        }
        f.write_all(line.as_bytes()).map_err(io)?;
        f.sync_data().map_err(io)
    }

    fn persist_cursors(&self, cursors: &BTreeMap<String, usize>) -> Result<(), ApiError> {
        let Some(dir) = &self.config.state_dir else { return Ok(()) };
        let io = |e: std::io::Error| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
        tmp.write_all(&serde_json::to_vec_pretty(cursors).expect("cursor map serializes")).map_err(io)?;
        tmp.persist(dir.join(CURSORS_FILE)).map_err(|e| io(e.error))?;
        Ok(())
    }
}

type Shared = Arc<AnnotationService>;

#[derive(Debug, Deserialize)]
struct AnnotatorQuery {
    annotator: Option<String>,
}

#[derive(Debug, Deserialize)]
struct PairQuery {
    a: Option<String>,
    b: Option<String>,
}

fn require_annotator(q: AnnotatorQuery) -> Result<String, ApiError> {
    q.annotator
        .filter(|a| !a.trim().is_empty())
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "query parameter `annotator` is required"))
}

async fn next_task(State(s): State<Shared>, Query(q): Query<AnnotatorQuery>) -> Result<Json<TaskView>, ApiError> {
    Ok(Json(s.next_task(&require_annotator(q)?)))
}

async fn progress(State(s): State<Shared>, Query(q): Query<AnnotatorQuery>) -> Result<Json<ProgressView>, ApiError> {
    Ok(Json(s.progress(&require_annotator(q)?)))
}

async fn submit(State(s): State<Shared>, body: Result<Json<SubmitRequest>, axum::extract::rejection::JsonRejection>) -> Result<Json<SubmitAck>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.body_text()))?;
    s.submit(&req).map(Json)
}

async fn agreement(State(s): State<Shared>, Query(q): Query<PairQuery>) -> Json<AgreementView> {
    Json(s.agreement(q.a.as_deref(), q.b.as_deref()))
}

async fn image(State(s): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let path = s
        .image_path(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown image `{id}`")))?;
    let bytes = fs::read(path).map_err(|e| ApiError::new(StatusCode::NOT_FOUND, format!("image `{id}` unreadable: {e}")))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn check_token(State(s): State<Shared>, headers: HeaderMap, req: Request, next: Next) -> Response {
    if let Some(token) = &s.config.token {
        let given = headers.get(TOKEN_HEADER).and_then(|v| v.to_str().ok());
        if given != Some(token.as_str()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, format!("missing or wrong {TOKEN_HEADER} header"))
                .into_response();
        }
    }
    next.run(req).await
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "no such endpoint")
}

pub fn router(service: Shared) -> Router {
    Router::new()
        .route("/api/tasks/next", get(next_task))
        .route("/api/images/{image_id}", get(image))
        .route("/api/labels", post(submit))
        .route("/api/stats/agreement", get(agreement))
        .route("/api/progress", get(progress))
        .fallback(fallback)
        .layer(middleware::from_fn_with_state(service.clone(), check_token))
        .with_state(service)
}

/// Serves until Ctrl-C.
pub async fn serve(service: Shared, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
