//! Command-line workflow over a run directory.
//!
//! ```text
//! runs/<run_id>/
//!   run.json            schema version marker
//!   prompts.jsonl
//!   manifest.jsonl
//!   images/
//!   truth/planted.csv   mock ground truth (adjudicated format)
//!   truth/adjudicated.csv
//!   verdicts/<detector>.jsonl
//!   annotations/        annotation service state
//!   reports/
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::annoserve::{self, AnnotationImage, AnnotationService, ServiceConfig};
use crate::detectors::runner::RunOptions;
use crate::detectors::{read_verdicts, run_detector, DetectorConfig, DetectorId, DetectorVerdict};
use crate::generation::mock::{MockConfig, PlantedScene};
use crate::generation::{self, BackendDescriptor, GenerateError, ImageRecord, ManifestEntry};
use crate::groundtruth::{
    adjudicate, cohens_kappa, dataset_summary, import_released_labels, read_adjudicated_csv,
    write_adjudicated_csv, AdjudicatedLabel, AdjudicationSource, LabelCategory, LabelStore,
    LowQualityReason,
};
use crate::inference::facepp::{FacePlusPlusClient, FacePlusPlusConfig};
use crate::inference::stub::StubBackend;
use crate::inference::synthetic::SceneReader;
use crate::inference::{Capabilities, DEFAULT_LOGIT_SCALE};
use crate::metrics::{counts_from_truth, counts_from_verdicts, model_bias_pct_difference, model_bias_score, pbs_difference_by_prompt, prompt_bias_score};
use crate::prompts::{build_suite, bundled_word_lists, read_suite_jsonl, read_word_lists, write_suite_jsonl, PromptSpec};
use crate::report::{compare_detectors, export_heatmap, render_dataset_summary_csv, render_markdown, BiasReport};

pub const RUN_SCHEMA_VERSION: u32 = 1;
pub const ANNOTATION_TOKEN_VAR: &str = "GENBIAS_ANNOTATION_TOKEN";

/// A failure reported as one machine-parseable line.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl fmt::Display) -> Self {
        CliError { kind, message: message.to_string() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = serde_json::to_string(&self.message).expect("strings serialize");
        write!(f, "error kind={} message={msg}", self.kind)
    }
}

impl std::error::Error for CliError {}

type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::new("io", format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    /// Reads mock images by their palette.
    #[default]
    Synthetic,
    /// Scripted answers from `stub_script`.
    Stub,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaceApiKind {
    /// Use the main provider.
    #[default]
    Provider,
    /// The remote Face++ API; credentials from the environment.
    Facepp,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CapabilityConfig {
    pub provider: ProviderKind,
    pub stub_script: Option<PathBuf>,
    pub logit_scale: f64,
    pub face_api: FaceApiKind,
    pub facepp_endpoint: Option<String>,
}

impl Default for CapabilityConfig {
    fn default() -> Self {
        CapabilityConfig {
            provider: ProviderKind::Synthetic,
            stub_script: None,
            logit_scale: DEFAULT_LOGIT_SCALE,
            face_api: FaceApiKind::Provider,
            facepp_endpoint: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotationConfig {
    pub bind: String,
    pub seed: u64,
}

impl Default for AnnotationConfig {
    fn default() -> Self {
        AnnotationConfig { bind: "127.0.0.1:8080".into(), seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub run_id: String,
    pub output_root: PathBuf,
    /// Word-list CSV; the bundled list when absent.
    pub words: Option<PathBuf>,
    pub images_per_prompt: u32,
    pub base_seed: u64,
    pub detectors: Vec<DetectorId>,
    pub backends: Vec<BackendDescriptor>,
    pub capabilities: CapabilityConfig,
    pub detector: DetectorConfig,
    pub annotation: AnnotationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run_id: "default".into(),
            output_root: PathBuf::from("runs"),
            words: None,
            images_per_prompt: 20,
            base_seed: 0,
            detectors: vec![DetectorId::ClipEnhance],
            backends: vec![BackendDescriptor::mock("mock", &MockConfig::default())],
            capabilities: CapabilityConfig::default(),
            detector: DetectorConfig::default(),
            annotation: AnnotationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::new("bad_config", e.to_string().replace('\n', " ")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LabelFormat {
    /// Detect from the CSV header.
    Auto,
    /// `image_id,backend_id,category[,reason]` final labels.
    Released,
    /// Raw two-annotator labels, adjudicated on import.
    Annotations,
    /// `image_id,final,source[,reason]`.
    Adjudicated,
}

#[derive(Debug, Parser)]
#[command(name = "genbias", version, about = "Measure gender bias in text-to-image models")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub run_id: Option<String>,
    /// Directory holding run directories (default `runs`).
    #[arg(long, global = true)]
    pub root: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the prompt suite to prompts.jsonl.
    GenPrompts {
        #[arg(long)]
        words: Option<PathBuf>,
    },
    /// Generate images for every prompt with the configured backends.
    Generate {
        /// Only these backend ids.
        #[arg(long)]
        backend: Vec<String>,
        #[arg(long)]
        images_per_prompt: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run detectors over the manifest (resumable).
    Detect {
        #[arg(long)]
        detector: Vec<String>,
        /// Stop after this many new verdicts per detector.
        #[arg(long, hide = true)]
        stop_after: Option<usize>,
    },
    /// Model bias scores for the ground truth and each detector.
    Score {
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        detector: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Detector-vs-truth comparison tables.
    Compare {
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        detector: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// All reports: comparison, heatmap and dataset summary.
    Report {
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        detector: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the annotation API for this run's images.
    AnnotateServe {
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Import labels into truth/adjudicated.csv.
    ImportLabels {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, value_enum, default_value = "auto")]
        format: LabelFormat,
        /// Discussion outcomes for disagreements (adjudicated format).
        #[arg(long)]
        resolutions: Option<PathBuf>,
    },
}

/// Paths inside one run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn meta(&self) -> PathBuf {
        self.dir.join("run.json")
    }
    pub fn prompts(&self) -> PathBuf {
        self.dir.join("prompts.jsonl")
    }
    pub fn manifest(&self) -> PathBuf {
        self.dir.join("manifest.jsonl")
    }
    pub fn planted_truth(&self) -> PathBuf {
        self.dir.join("truth").join("planted.csv")
    }
    pub fn adjudicated_truth(&self) -> PathBuf {
        self.dir.join("truth").join("adjudicated.csv")
    }
    pub fn image_backends(&self) -> PathBuf {
        self.dir.join("truth").join("image_backends.csv")
    }
    pub fn verdicts(&self, id: DetectorId) -> PathBuf {
        self.dir.join("verdicts").join(format!("{id}.jsonl"))
    }
    pub fn annotations(&self) -> PathBuf {
        self.dir.join("annotations")
    }
    pub fn reports(&self) -> PathBuf {
        self.dir.join("reports")
    }
}

struct Ctx {
    config: RunConfig,
    paths: RunPaths,
}

impl Ctx {
    fn open(cli: &Cli) -> CliResult<Self> {
        let mut config = match &cli.config {
            Some(p) => RunConfig::from_toml(&fs::read_to_string(p).map_err(|e| {
                CliError::new("bad_config", format!("{}: {e}", p.display()))
            })?)?,
            None => RunConfig::default(),
        };
        if let Some(id) = &cli.run_id {
            config.run_id = id.clone();
        }
        if let Some(root) = &cli.root {
            config.output_root = root.clone();
        }
        if config.run_id.is_empty() || config.run_id.contains(['/', '\\']) || config.run_id.starts_with('.') {
            return Err(CliError::new("bad_run_id", format!("invalid run id `{}`", config.run_id)));
        }
        let paths = RunPaths { dir: config.output_root.join(&config.run_id) };
        let ctx = Ctx { config, paths };
        ctx.check_schema()?;
        Ok(ctx)
    }

    fn check_schema(&self) -> CliResult<()> {
        let meta = self.paths.meta();
        if !meta.exists() {
            return Ok(());
        }
        let v: serde_json::Value = serde_json::from_slice(&fs::read(&meta).map_err(io_err(&meta))?)
            .map_err(|e| CliError::new("schema_version", format!("{}: {e}", meta.display())))?;
        match v.get("schema_version").and_then(|s| s.as_u64()) {
            Some(n) if n == u64::from(RUN_SCHEMA_VERSION) => Ok(()),
            other => Err(CliError::new(
                "schema_version",
                format!("run schema version {other:?} does not match supported version {RUN_SCHEMA_VERSION}"),
            )),
        }
    }

    fn ensure_dir(&self, dir: &Path) -> CliResult<()> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let meta = self.paths.meta();
        if !meta.exists() {
            let body = serde_json::to_vec_pretty(&json!({
                "schema_version": RUN_SCHEMA_VERSION,
                "run_id": self.config.run_id,
            }))
            .expect("json");
            fs::create_dir_all(&self.paths.dir).map_err(io_err(&self.paths.dir))?;
            fs::write(&meta, body).map_err(io_err(&meta))?;
        }
        Ok(())
    }

    fn suite(&self) -> CliResult<Vec<PromptSpec>> {
        let p = self.paths.prompts();
        let text = fs::read_to_string(&p)
            .map_err(|_| CliError::new("missing_prompts", format!("{} not found; run gen-prompts first", p.display())))?;
        read_suite_jsonl(&text).map_err(|e| CliError::new("bad_prompts", e))
    }

    fn manifest(&self) -> CliResult<Vec<ManifestEntry>> {
        let p = self.paths.manifest();
        if !p.exists() {
            return Err(CliError::new("missing_manifest", format!("{} not found; run generate first", p.display())));
        }
        generation::read_manifest(&p).map_err(|e| CliError::new("bad_manifest", e))
    }

    fn records(&self) -> CliResult<Vec<ImageRecord>> {
        let records = generation::records(&self.manifest()?);
        if records.is_empty() {
            return Err(CliError::new("empty_manifest", "manifest has no generated images"));
        }
        Ok(records)
    }

    fn capabilities(&self) -> CliResult<Capabilities> {
        let c = &self.config.capabilities;
        let mut caps = match c.provider {
            ProviderKind::Synthetic => Capabilities::all_from(Arc::new(SceneReader { logit_scale: c.logit_scale })),
            ProviderKind::Stub => {
                let path = c
                    .stub_script
                    .as_ref()
                    .ok_or_else(|| CliError::new("bad_config", "provider `stub` needs capabilities.stub_script"))?;
                let text = fs::read_to_string(path).map_err(io_err(path))?;
                Capabilities::all_from(Arc::new(
                    StubBackend::from_json(&text).map_err(|e| CliError::new("bad_config", format!("stub script: {e}")))?,
                ))
            }
        };
        if c.face_api == FaceApiKind::Facepp {
            let cfg = FacePlusPlusConfig::from_env(c.facepp_endpoint.clone())
                .map_err(|e| CliError::new("missing_credentials", e))?;
            caps.face_api = Some(Arc::new(FacePlusPlusClient::new(cfg)));
        }
        Ok(caps)
    }

    fn detectors(&self, flags: &[String]) -> CliResult<Vec<DetectorId>> {
        parse_detectors(flags).map(|d| if d.is_empty() { self.config.detectors.clone() } else { d })
    }

    /// Requested detectors, or every detector with a verdict file.
    fn scored_detectors(&self, flags: &[String]) -> CliResult<Vec<DetectorId>> {
        let d = parse_detectors(flags)?;
        if !d.is_empty() {
            return Ok(d);
        }
        Ok(DetectorId::ALL.into_iter().filter(|id| self.paths.verdicts(*id).exists()).collect())
    }

    fn verdicts(&self, id: DetectorId) -> CliResult<Vec<DetectorVerdict>> {
        let p = self.paths.verdicts(id);
        if !p.exists() {
            return Err(CliError::new("missing_verdicts", format!("{} not found; run detect --detector {id}", p.display())));
        }
        read_verdicts(&p).map_err(|e| CliError::new("bad_verdicts", e))
    }

    fn truth_path(&self, flag: &Option<PathBuf>) -> CliResult<PathBuf> {
        if let Some(p) = flag {
            return Ok(p.clone());
        }
        [self.paths.adjudicated_truth(), self.paths.planted_truth()]
            .into_iter()
            .find(|p| p.exists())
            .ok_or_else(|| CliError::new("missing_truth", "no --truth given and the run has no truth labels"))
    }

    fn reports_dir(&self, out: &Option<PathBuf>) -> CliResult<PathBuf> {
        let dir = out.clone().unwrap_or_else(|| self.paths.reports());
        self.ensure_dir(&dir)?;
        Ok(dir)
    }
}

fn parse_detectors(flags: &[String]) -> CliResult<Vec<DetectorId>> {
    let mut out = Vec::new();
    for f in flags.iter().flat_map(|f| f.split(',')) {
        let id: DetectorId = f.parse().map_err(|e| CliError::new("unknown_detector", e))?;
        if !out.contains(&id) {
            out.push(id);
        }
    }
    Ok(out)
}

/// Truth labels from any supported CSV layout, keyed by image id.
pub fn load_truth(path: &Path, format: LabelFormat) -> CliResult<(Vec<AdjudicatedLabel>, HashMap<String, String>)> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let header = text.lines().next().unwrap_or_default();
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let format = match format {
        LabelFormat::Auto if cols.contains(&"final") => LabelFormat::Adjudicated,
        LabelFormat::Auto if cols.contains(&"annotator_id") => LabelFormat::Annotations,
        LabelFormat::Auto if cols.contains(&"backend_id") => LabelFormat::Released,
        LabelFormat::Auto => {
            return Err(CliError::new("bad_truth", format!("{}: unrecognised label header `{header}`", path.display())))
        }
        f => f,
    };
    let bad = |e: crate::groundtruth::GroundTruthError| CliError::new("bad_truth", format!("{}: {e}", path.display()));
    match format {
        LabelFormat::Adjudicated => Ok((read_adjudicated_csv(text.as_bytes()).map_err(bad)?, HashMap::new())),
        LabelFormat::Released => import_released_labels(text.as_bytes()).map_err(bad),
        LabelFormat::Annotations => {
            let store = LabelStore::read_csv(text.as_bytes()).map_err(bad)?;
            let labels = adjudicate_store(&store, &BTreeMap::new())?.0;
            Ok((labels, HashMap::new()))
        }
        LabelFormat::Auto => unreachable!("resolved above"),
    }
}

fn adjudicate_store(
    store: &LabelStore,
    resolutions: &BTreeMap<String, LabelCategory>,
) -> CliResult<(Vec<AdjudicatedLabel>, Option<f64>, Vec<String>)> {
    let annotators: Vec<String> = store.annotators().into_iter().collect();
    let [a, b] = annotators.as_slice() else {
        return Err(CliError::new(
            "bad_truth",
            format!("adjudication needs exactly two annotators, found {}", annotators.len()),
        ));
    };
    let (la, lb) = (store.labels_by(a), store.labels_by(b));
    let kappa = cohens_kappa(&la, &lb).map_err(|e| CliError::new("incomplete_labels", e))?;
    let out = adjudicate(&la, &lb, resolutions).map_err(|e| CliError::new("incomplete_labels", e))?;
    Ok((out.labels, kappa, out.warnings))
}

fn truth_map(labels: &[AdjudicatedLabel]) -> HashMap<String, LabelCategory> {
    labels.iter().map(|l| (l.image_id.clone(), l.final_label.clone())).collect()
}

/// Ground truth implied by the scenes the mock planted.
pub fn planted_label(scene: PlantedScene) -> LabelCategory {
    match scene {
        PlantedScene::Single(g) => g.into(),
        PlantedScene::NoFace(_) => LabelCategory::LowQuality(Some(LowQualityReason::NoFace)),
        PlantedScene::NoPerson => LabelCategory::LowQuality(Some(LowQualityReason::NoPerson)),
        PlantedScene::Multiple { .. } => LabelCategory::LowQuality(Some(LowQualityReason::MultiplePeople)),
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

fn by_backend(records: &[ImageRecord]) -> BTreeMap<String, Vec<ImageRecord>> {
    let mut out: BTreeMap<String, Vec<ImageRecord>> = BTreeMap::new();
    for r in records {
        out.entry(r.backend_id.clone()).or_default().push(r.clone());
    }
    out
}

fn cmd_gen_prompts(ctx: &Ctx, words: &Option<PathBuf>) -> CliResult<()> {
    let words = words.clone().or_else(|| ctx.config.words.clone());
    let lists = match &words {
        Some(p) => read_word_lists(fs::File::open(p).map_err(io_err(p))?).map_err(|e| CliError::new("bad_words", e))?,
        None => bundled_word_lists(),
    };
    let suite = build_suite(&lists).map_err(|e| CliError::new("bad_words", e))?;
    ctx.ensure_dir(&ctx.paths.dir)?;
    let mut buf = Vec::new();
    write_suite_jsonl(&mut buf, &suite).map_err(|e| CliError::new("io", e))?;
    write_file(&ctx.paths.prompts(), buf)?;
    println!("gen-prompts prompts={} path={}", suite.len(), ctx.paths.prompts().display());
    Ok(())
}

fn cmd_generate(ctx: &Ctx, only: &[String], images: Option<u32>, seed: Option<u64>) -> CliResult<()> {
    let suite = ctx.suite()?;
    let images = images.unwrap_or(ctx.config.images_per_prompt);
    let seed = seed.unwrap_or(ctx.config.base_seed);
    let chosen: Vec<&BackendDescriptor> =
        ctx.config.backends.iter().filter(|b| only.is_empty() || only.contains(&b.id)).collect();
    if let Some(missing) = only.iter().find(|id| !ctx.config.backends.iter().any(|b| &b.id == *id)) {
        return Err(CliError::new("unknown_backend", format!("backend `{missing}` is not configured")));
    }
    if chosen.is_empty() {
        return Err(CliError::new("unknown_backend", "no backends configured"));
    }
    ctx.ensure_dir(&ctx.paths.dir)?;
    // keep other backends' entries when regenerating a subset
    let mut entries: Vec<ManifestEntry> = if ctx.paths.manifest().exists() {
        ctx.manifest()?.into_iter().filter(|e| !chosen.iter().any(|b| b.id == e.record.backend_id)).collect()
    } else {
        Vec::new()
    };
    for desc in chosen {
        let backend = generation::instantiate(desc).map_err(|e| CliError::new("bad_backend", e))?;
        match generation::generate(&suite, desc, backend.as_ref(), images, seed, &ctx.paths.dir) {
            Ok(mut e) => {
                let failed = e.iter().filter(|x| x.status == generation::EntryStatus::Failed).count();
                println!("generate backend={} images={} failed={failed}", desc.id, e.len() - failed);
                entries.append(&mut e);
            }
            Err(GenerateError::Unreachable { backend, reason, mut completed }) => {
                entries.append(&mut completed);
                generation::write_manifest(&ctx.paths.manifest(), &entries).map_err(|e| CliError::new("io", e))?;
                return Err(CliError::new("backend_unreachable", format!("backend `{backend}` unreachable: {reason}")));
            }
            Err(e) => return Err(CliError::new("generate_failed", e)),
        }
    }
    generation::write_manifest(&ctx.paths.manifest(), &entries).map_err(|e| CliError::new("io", e))?;

    let planted: Vec<AdjudicatedLabel> = generation::records(&entries)
        .iter()
        .filter_map(|r| {
            let scene = generation::read_scene(&ctx.paths.dir, r)?;
            Some(AdjudicatedLabel {
                image_id: r.image_id.clone(),
                final_label: planted_label(scene.scene),
                source: AdjudicationSource::Agreement,
            })
        })
        .collect();
    if !planted.is_empty() {
        let mut buf = Vec::new();
        write_adjudicated_csv(&mut buf, &planted).map_err(|e| CliError::new("io", e))?;
        write_file(&ctx.paths.planted_truth(), buf)?;
    }
    Ok(())
}

fn cmd_detect(ctx: &Ctx, flags: &[String], stop_after: Option<usize>) -> CliResult<()> {
    let detectors = ctx.detectors(flags)?;
    let records = ctx.records()?;
    let caps = ctx.capabilities()?;
    for id in detectors {
        let opts = RunOptions { checkpoint: Some(ctx.paths.verdicts(id)), stop_after };
        let s = run_detector(id, &records, &ctx.paths.dir, &caps, &ctx.config.detector, &opts).map_err(|e| {
            let kind = match e {
                crate::detectors::DetectError::Capability { .. } => "missing_capability",
                crate::detectors::DetectError::Checkpoint { .. } => "stale_checkpoint",
                crate::detectors::DetectError::Io { .. } => "io",
            };
            CliError::new(kind, e)
        })?;
        println!(
            "detect detector={id} verdicts={} reused={} computed={} complete={}",
            s.verdicts.len(),
            s.reused,
            s.computed,
            s.complete
        );
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub backend_id: String,
    pub truth_model_bias: Option<f64>,
    pub truth_prompts_excluded: usize,
    pub detectors: Vec<DetectorScore>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DetectorScore {
    pub detector: DetectorId,
    pub model_bias: Option<f64>,
    pub prompts_excluded: usize,
    pub pct_difference: Option<f64>,
    pub pbs_difference: Option<f64>,
    pub per_prompt: BTreeMap<String, Option<f64>>,
}

fn cmd_score(ctx: &Ctx, truth: &Option<PathBuf>, flags: &[String], out: &Option<PathBuf>) -> CliResult<()> {
    let records = ctx.records()?;
    let truth = truth_map(&load_truth(&ctx.truth_path(truth)?, LabelFormat::Auto)?.0);
    let detectors = ctx.scored_detectors(flags)?;
    let verdicts: Vec<(DetectorId, Vec<DetectorVerdict>)> =
        detectors.iter().map(|d| Ok((*d, ctx.verdicts(*d)?))).collect::<CliResult<_>>()?;
    let mut summaries = Vec::new();
    for (backend, recs) in by_backend(&records) {
        let truth_counts = counts_from_truth(&recs, &truth);
        let truth_mbs = model_bias_score(&truth_counts).ok();
        println!(
            "score backend={backend} source=truth model_bias={}",
            truth_mbs.map_or("undefined".into(), |m| format!("{:.6}", m.value))
        );
        let mut rows = Vec::new();
        for (id, v) in &verdicts {
            let counts = counts_from_verdicts(&recs, v);
            let mbs = model_bias_score(&counts).ok();
            let pct = mbs.zip(truth_mbs).and_then(|(d, t)| model_bias_pct_difference(d.value, t.value).ok());
            let pbs = pbs_difference_by_prompt(&counts, &truth_counts).ok().map(|m| m.value);
            let fmt = |x: Option<f64>| x.map_or("undefined".into(), |v| format!("{v:.6}"));
            println!(
                "score backend={backend} detector={id} model_bias={} pct_difference={} pbs_difference={}",
                fmt(mbs.map(|m| m.value)),
                fmt(pct),
                fmt(pbs)
            );
            rows.push(DetectorScore {
                detector: *id,
                model_bias: mbs.map(|m| m.value),
                prompts_excluded: mbs.map_or(counts.len(), |m| m.excluded),
                pct_difference: pct,
                pbs_difference: pbs,
                per_prompt: counts.iter().map(|c| (c.prompt_id.clone(), prompt_bias_score(c))).collect(),
            });
        }
        summaries.push(ScoreSummary {
            backend_id: backend,
            truth_model_bias: truth_mbs.map(|m| m.value),
            truth_prompts_excluded: truth_mbs.map_or(truth_counts.len(), |m| m.excluded),
            detectors: rows,
        });
    }
    let dir = ctx.reports_dir(out)?;
    write_file(&dir.join("score.json"), serde_json::to_vec_pretty(&summaries).expect("json"))?;
    Ok(())
}

fn build_reports(ctx: &Ctx, truth: &HashMap<String, LabelCategory>, flags: &[String]) -> CliResult<Vec<BiasReport>> {
    let records = ctx.records()?;
    let suite = ctx.suite()?;
    let detectors = ctx.scored_detectors(flags)?;
    let verdicts: Vec<(DetectorId, Vec<DetectorVerdict>)> =
        detectors.iter().map(|d| Ok((*d, ctx.verdicts(*d)?))).collect::<CliResult<_>>()?;
    by_backend(&records)
        .into_iter()
        .map(|(backend, recs)| {
            let own: Vec<(DetectorId, Vec<DetectorVerdict>)> = verdicts
                .iter()
                .map(|(id, v)| {
                    let ids: std::collections::HashSet<&str> = recs.iter().map(|r| r.image_id.as_str()).collect();
                    (*id, v.iter().filter(|x| ids.contains(x.image_id.as_str())).cloned().collect())
                })
                .collect();
            compare_detectors(&backend, &recs, &suite, truth, &own).map_err(|e| CliError::new("incomplete_verdicts", e))
        })
        .collect()
}

fn write_compare(dir: &Path, reports: &[BiasReport]) -> CliResult<()> {
    write_file(&dir.join("compare.md"), render_markdown(reports))?;
    write_file(&dir.join("compare.json"), serde_json::to_vec_pretty(reports).expect("json"))
}

fn cmd_compare(ctx: &Ctx, truth: &Option<PathBuf>, flags: &[String], out: &Option<PathBuf>) -> CliResult<()> {
    let truth = truth_map(&load_truth(&ctx.truth_path(truth)?, LabelFormat::Auto)?.0);
    let reports = build_reports(ctx, &truth, flags)?;
    let dir = ctx.reports_dir(out)?;
    write_compare(&dir, &reports)?;
    println!("compare backends={} path={}", reports.len(), dir.join("compare.md").display());
    Ok(())
}

fn read_image_backends(path: &Path) -> CliResult<HashMap<String, String>> {
    let mut out = HashMap::new();
    if path.exists() {
        let mut r = csv::Reader::from_path(path).map_err(|e| CliError::new("io", e))?;
        for row in r.deserialize::<(String, String)>() {
            let (img, backend) = row.map_err(|e| CliError::new("bad_truth", e))?;
            out.insert(img, backend);
        }
    }
    Ok(out)
}

fn cmd_report(ctx: &Ctx, truth: &Option<PathBuf>, flags: &[String], out: &Option<PathBuf>) -> CliResult<()> {
    let (labels, mut backends) = load_truth(&ctx.truth_path(truth)?, LabelFormat::Auto)?;
    backends.extend(read_image_backends(&ctx.paths.image_backends())?);
    let truth = truth_map(&labels);
    let dir = ctx.reports_dir(out)?;
    let mut written = Vec::new();

    if ctx.paths.manifest().exists() {
        let records = ctx.records()?;
        for r in &records {
            backends.insert(r.image_id.clone(), r.backend_id.clone());
        }
        let reports = build_reports(ctx, &truth, flags)?;
        write_compare(&dir, &reports)?;
        let suite = ctx.suite()?;
        let columns: Vec<(String, HashMap<String, Option<f64>>)> = by_backend(&records)
            .into_iter()
            .map(|(b, recs)| {
                let col = counts_from_truth(&recs, &truth).iter().map(|c| (c.prompt_id.clone(), prompt_bias_score(c))).collect();
                (b, col)
            })
            .collect();
        write_file(&dir.join("heatmap.csv"), export_heatmap(&suite, &columns))?;
        written.extend(["compare.md", "compare.json", "heatmap.csv"]);
    }
    let summary = dataset_summary(&labels, &backends).map_err(|e| CliError::new("bad_truth", e))?;
    write_file(&dir.join("dataset_summary.csv"), render_dataset_summary_csv(&summary))?;
    written.push("dataset_summary.csv");
    println!("report files={} path={}", written.join(","), dir.display());
    Ok(())
}

fn cmd_import_labels(ctx: &Ctx, path: &Path, format: LabelFormat, resolutions: &Option<PathBuf>) -> CliResult<()> {
    let resolutions: BTreeMap<String, LabelCategory> = match resolutions {
        Some(p) => truth_map(&load_truth(p, LabelFormat::Adjudicated)?.0).into_iter().collect(),
        None => BTreeMap::new(),
    };
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let is_annotations = format == LabelFormat::Annotations
        || (format == LabelFormat::Auto && text.lines().next().unwrap_or_default().contains("annotator_id"));
    let (labels, backends) = if is_annotations {
        let store = LabelStore::read_csv(text.as_bytes()).map_err(|e| CliError::new("bad_truth", e))?;
        let (labels, kappa, warnings) = adjudicate_store(&store, &resolutions)?;
        for w in warnings {
            eprintln!("warning: {w}");
        }
        println!("import-labels kappa={}", kappa.map_or("undefined".into(), |k| format!("{k:.6}")));
        (labels, HashMap::new())
    } else {
        load_truth(path, format)?
    };
    ctx.ensure_dir(&ctx.paths.dir)?;
    let mut buf = Vec::new();
    write_adjudicated_csv(&mut buf, &labels).map_err(|e| CliError::new("io", e))?;
    write_file(&ctx.paths.adjudicated_truth(), buf)?;
    if !backends.is_empty() {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["image_id", "backend_id"]).expect("in-memory csv");
        let mut rows: Vec<_> = backends.iter().collect();
        rows.sort();
        for (img, b) in rows {
            w.write_record([img, b]).expect("in-memory csv");
        }
        write_file(&ctx.paths.image_backends(), w.into_inner().expect("in-memory csv"))?;
    }
    println!("import-labels labels={} path={}", labels.len(), ctx.paths.adjudicated_truth().display());
    Ok(())
}

fn cmd_annotate_serve(ctx: &Ctx, bind: &Option<String>, seed: Option<u64>) -> CliResult<()> {
    let records = ctx.records()?;
    let images = records
        .iter()
        .map(|r| AnnotationImage { image_id: r.image_id.clone(), path: ctx.paths.dir.join(&r.path) })
        .collect();
    let token = std::env::var(ANNOTATION_TOKEN_VAR).ok().filter(|t| !t.is_empty());
    let service = AnnotationService::new(ServiceConfig {
        images,
        seed: seed.unwrap_or(ctx.config.annotation.seed),
        token,
        state_dir: Some(ctx.paths.annotations()),
    })
    .map_err(io_err(&ctx.paths.annotations()))?;
    let bind = bind.clone().unwrap_or_else(|| ctx.config.annotation.bind.clone());
    let addr: SocketAddr = bind.parse().map_err(|e| CliError::new("bad_config", format!("bind address `{bind}`: {e}")))?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::new("io", e))?;
    println!("annotate-serve listening=http://{addr} images={}", service.total());
    rt.block_on(annoserve::serve(Arc::new(service), addr)).map_err(|e| CliError::new("io", e))
}

/// Parses arguments and runs one subcommand.
pub fn run<I, T>(args: I) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| {
        use clap::error::ErrorKind;
        if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
            print!("{e}");
            return CliError::new("help", "");
        }
        let first = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
        CliError::new("usage", first)
    })?;
    let ctx = Ctx::open(&cli)?;
    match &cli.command {
        Command::GenPrompts { words } => cmd_gen_prompts(&ctx, words),
        Command::Generate { backend, images_per_prompt, seed } => cmd_generate(&ctx, backend, *images_per_prompt, *seed),
        Command::Detect { detector, stop_after } => cmd_detect(&ctx, detector, *stop_after),
        Command::Score { truth, detector, out } => cmd_score(&ctx, truth, detector, out),
        Command::Compare { truth, detector, out } => cmd_compare(&ctx, truth, detector, out),
        Command::Report { truth, detector, out } => cmd_report(&ctx, truth, detector, out),
        Command::AnnotateServe { bind, seed } => cmd_annotate_serve(&ctx, bind, *seed),
        Command::ImportLabels { truth, format, resolutions } => cmd_import_labels(&ctx, truth, *format, resolutions),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_line_is_single_line_and_quoted() {
        let e = CliError::new("missing_manifest", "runs/x/manifest.jsonl not\nfound");
        let s = e.to_string();
        assert_eq!(s, r#"error kind=missing_manifest message="runs/x/manifest.jsonl not\nfound""#);
        assert_eq!(s.lines().count(), 1);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back.detectors, cfg.detectors);
        assert_eq!(back.backends[0].id, "mock");
        assert_eq!(back.detector.clip_prob_threshold, 0.90);
    }

    #[test]
    fn unknown_detector_is_reported() {
        let e = parse_detectors(&["clip,dalle".into()]).unwrap_err();
        assert_eq!(e.kind, "unknown_detector");
        assert_eq!(parse_detectors(&["clip,clip-enhance".into(), "clip".into()]).unwrap().len(), 2);
    }

    #[test]
    fn planted_scenes_map_to_labels() {
        assert_eq!(planted_label("F".parse().unwrap()), LabelCategory::Female);
        assert_eq!(
            planted_label("multi:M:0.3".parse().unwrap()),
            LabelCategory::LowQuality(Some(LowQualityReason::MultiplePeople))
        );
    }
}
