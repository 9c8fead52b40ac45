//! Runs a detector over a manifest with an append-only checkpoint file.
//!
//! The checkpoint is the verdict JSONL itself. On restart, complete lines
//! are validated against the manifest prefix and reused as-is; a torn final
//! line (from a kill mid-write) is cut off and recomputed.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use super::{detect, DetectorConfig, DetectorId, DetectorVerdict, FilterReason, Outcome, VerdictRow};
use crate::generation::ImageRecord;
use crate::imaging::ImageView;
use crate::inference::{Capabilities, InferenceError};

const CHUNK: usize = 64;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("{detector}: {source}")]
    Capability { detector: DetectorId, source: InferenceError },
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("io error on {path}: {reason}")]
    Io { path: PathBuf, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DetectError + '_ {
    move |e| DetectError::Io { path: path.to_path_buf(), reason: e.to_string() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub verdicts: Vec<DetectorVerdict>,
    /// Verdicts taken from the checkpoint.
    pub reused: usize,
    pub computed: usize,
    /// False if `stop_after` cut the run short.
    pub complete: bool,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Verdict JSONL to append to and resume from.
    pub checkpoint: Option<PathBuf>,
    /// Stop after computing this many new verdicts (simulates an interrupted run).
    pub stop_after: Option<usize>,
}

/// Verdict for one record. Unreadable or undecodable images get a
/// `ProviderError` verdict.
pub fn verdict_for(
    id: DetectorId,
    record: &ImageRecord,
    run_dir: &Path,
    caps: &Capabilities,
    cfg: &DetectorConfig,
) -> Result<DetectorVerdict, DetectError> {
    let outcome = match fs::read(run_dir.join(&record.path))
        .ok()
        .and_then(|bytes| ImageView::decode_png(record.image_id.clone(), &bytes).ok())
    {
        None => Outcome::Filtered(FilterReason::ProviderError),
        Some(image) => detect(id, &image, caps, cfg)
            .map_err(|source| DetectError::Capability { detector: id, source })?,
    };
    Ok(DetectorVerdict { image_id: record.image_id.clone(), detector_id: id, outcome })
}

pub fn verdict_line(v: &DetectorVerdict) -> String {
    let mut line = serde_json::to_string(&VerdictRow::from(v)).expect("verdict rows serialize");
    line.push('\n');
    line
}

fn parse_line(line: &str) -> Result<DetectorVerdict, String> {
    let row: VerdictRow = serde_json::from_str(line).map_err(|e| e.to_string())?;
    DetectorVerdict::try_from(row)
}

/// Loads the reusable prefix of a checkpoint, truncating a torn last line.
fn load_checkpoint(
    path: &Path,
    id: DetectorId,
    records: &[ImageRecord],
) -> Result<Vec<DetectorVerdict>, DetectError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let complete_len = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
    if complete_len < bytes.len() {
        let f = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
        f.set_len(complete_len as u64).map_err(io_err(path))?;
    }
    let bad = |reason: String| DetectError::Checkpoint { path: path.to_path_buf(), reason };
    let text = std::str::from_utf8(&bytes[..complete_len]).map_err(|e| bad(e.to_string()))?;
    let mut verdicts = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let v = parse_line(line).map_err(|e| bad(format!("line {}: {e}", i + 1)))?;
        let expected = records.get(i).ok_or_else(|| bad("more verdicts than manifest records".into()))?;
        if v.image_id != expected.image_id || v.detector_id != id {
            return Err(bad(format!(
                "line {} is {}/{} but the manifest expects {}/{}",
                i + 1,
                v.detector_id,
                v.image_id,
                id,
                expected.image_id
            )));
        }
        verdicts.push(v);
    }
    Ok(verdicts)
}

/// One verdict per record, in manifest order.
pub fn run_detector(
    id: DetectorId,
    records: &[ImageRecord],
    run_dir: &Path,
    caps: &Capabilities,
    cfg: &DetectorConfig,
    opts: &RunOptions,
) -> Result<RunSummary, DetectError> {
    id.check_capabilities(caps).map_err(|source| DetectError::Capability { detector: id, source })?;

    let mut verdicts = match &opts.checkpoint {
        Some(path) => load_checkpoint(path, id, records)?,
        None => Vec::new(),
    };
    let reused = verdicts.len();
    let mut out = match &opts.checkpoint {
        Some(path) => {
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).map_err(io_err(dir))?;
            }
            Some(OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?)
        }
        None => None,
    };

    let mut budget = opts.stop_after.unwrap_or(usize::MAX);
    let mut next = reused;
    while next < records.len() && budget > 0 {
        let end = records.len().min(next + CHUNK.min(budget));
        let chunk: Vec<DetectorVerdict> = records[next..end]
            .par_iter()
            .map(|r| verdict_for(id, r, run_dir, caps, cfg))
            .collect::<Result<_, _>>()?;
        if let (Some(f), Some(path)) = (out.as_mut(), opts.checkpoint.as_deref()) {
            write_lines(f, &chunk, path)?;
        }
        budget -= chunk.len();
        next = end;
        verdicts.extend(chunk);
    }

    Ok(RunSummary {
        computed: verdicts.len() - reused,
        complete: verdicts.len() == records.len(),
        verdicts,
        reused,
    })
}

fn write_lines(f: &mut File, verdicts: &[DetectorVerdict], path: &Path) -> Result<(), DetectError> {
    let mut buf = String::new();
    for v in verdicts {
        buf.push_str(&verdict_line(v));
    }
    f.write_all(buf.as_bytes()).map_err(io_err(path))?;
    f.flush().map_err(io_err(path))
}

pub fn write_verdicts(path: &Path, verdicts: &[DetectorVerdict]) -> Result<(), DetectError> {
    let text: String = verdicts.iter().map(verdict_line).collect();
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_verdicts(path: &Path) -> Result<Vec<DetectorVerdict>, DetectError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            parse_line(l).map_err(|e| DetectError::Checkpoint {
                path: path.to_path_buf(),
                reason: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}
