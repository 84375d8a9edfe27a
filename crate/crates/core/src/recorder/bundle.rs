//! On-disk trajectory bundles.
//!
//! ```text
//! <dir>/metadata.json     schema_version, task labels, frame index
//! <dir>/steps.jsonl       one Step per line
//! <dir>/frames/<ts>.png   RGBA8888, ts zero-padded to 12 digits
//! <dir>/verdict.json      optional
//! <dir>/feedback.jsonl    optional, one FeedbackRecord per line
//! ```

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{decode_png, frame_file_name, Frame, RecorderError};
use crate::action::{Action, ActionResult};
use crate::feedback::FeedbackRecord;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub index: u64,
    /// Timestamp of the frame the agent saw before acting.
    pub observation_ref: u64,
    pub action: Action,
    pub result: ActionResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<String>,
    /// Confirmation request that approved this step, for gated actions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub approval: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleMetadata {
    pub task_id: Option<String>,
    pub instruction: String,
    pub platform: Option<String>,
    pub application: Option<String>,
    pub session_id: Option<String>,
    pub started_at: DateTime<Utc>,
    /// The episode hit its step budget without the policy stopping.
    #[serde(default)]
    pub budget_exhausted: bool,
}

impl BundleMetadata {
    pub fn new(instruction: impl Into<String>) -> Self {
        BundleMetadata {
            task_id: None,
            instruction: instruction.into(),
            platform: None,
            application: None,
            session_id: None,
            started_at: Utc::now(),
            budget_exhausted: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckResult {
    pub description: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub success: bool,
    pub feedback: String,
    /// One entry per evaluated leaf; empty for human verdicts.
    #[serde(default)]
    pub checks: Vec<CheckResult>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub timestamp: u64,
    pub generation: u64,
    pub width: u16,
    pub height: u16,
    pub file: String,
}

#[derive(Serialize, Deserialize)]
struct MetadataFile {
    schema_version: u32,
    #[serde(flatten)]
    metadata: BundleMetadata,
    frames: Vec<FrameRecord>,
}

#[derive(Serialize, Deserialize)]
struct VerdictFile {
    schema_version: u32,
    #[serde(flatten)]
    verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBundle {
    pub metadata: BundleMetadata,
    pub steps: Vec<Step>,
    pub frames: Vec<Frame>,
    pub verdict: Option<Verdict>,
    pub feedback: Vec<FeedbackRecord>,
}

fn violation(msg: impl Into<String>) -> RecorderError {
    RecorderError::SchemaViolation(msg.into())
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), RecorderError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| violation(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, RecorderError> {
    let name = path.file_name().unwrap_or_default().to_string_lossy();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        let item = serde_json::from_str(&line)
            .map_err(|e| violation(format!("{name} line {}: {e}", i + 1)))?;
        out.push(item);
    }
    Ok(out)
}

impl TrajectoryBundle {
    /// Checks the cross-file invariants: ordered unique frames, contiguous
    /// step indices, and every observation ref resolving to a stored frame no
    /// later than its step.
    pub fn validate(&self) -> Result<(), RecorderError> {
        for pair in self.frames.windows(2) {
            if pair[1].timestamp <= pair[0].timestamp || pair[1].generation <= pair[0].generation {
                return Err(violation(format!(
                    "frames out of order at timestamp {}",
                    pair[1].timestamp
                )));
            }
        }
        for f in &self.frames {
            if f.pixels.len() != f.width as usize * f.height as usize * 4 {
                return Err(violation(format!("frame {} has wrong buffer size", f.timestamp)));
            }
        }
        let stamps: HashSet<u64> = self.frames.iter().map(|f| f.timestamp).collect();
        for (i, step) in self.steps.iter().enumerate() {
            if step.index != i as u64 {
                return Err(violation(format!("step {i} has index {}", step.index)));
            }
            if !stamps.contains(&step.observation_ref) {
                return Err(violation(format!(
                    "step {i} refers to missing frame {}",
                    step.observation_ref
                )));
            }
            if step.observation_ref > step.result.started_ms {
                return Err(violation(format!("step {i} observed a frame from after it started")));
            }
        }
        if self.feedback.iter().any(|f| f.text.trim().is_empty()) {
            return Err(violation("empty feedback text"));
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<(), RecorderError> {
        self.validate()?;
        let frames_dir = dir.join("frames");
        fs::create_dir_all(&frames_dir)?;
        let mut index = Vec::with_capacity(self.frames.len());
        for f in &self.frames {
            let file = frame_file_name(f.timestamp);
            fs::write(frames_dir.join(&file), f.to_png()?)?;
            index.push(FrameRecord {
                timestamp: f.timestamp,
                generation: f.generation,
                width: f.width,
                height: f.height,
                file,
            });
        }
        let meta = MetadataFile {
            schema_version: SCHEMA_VERSION,
            metadata: self.metadata.clone(),
            frames: index,
        };
        fs::write(
            dir.join("metadata.json"),
            serde_json::to_vec_pretty(&meta).map_err(|e| violation(e.to_string()))?,
        )?;
        write_jsonl(&dir.join("steps.jsonl"), &self.steps)?;
        if let Some(verdict) = &self.verdict {
            let v = VerdictFile {
                schema_version: SCHEMA_VERSION,
                verdict: verdict.clone(),
            };
            fs::write(
                dir.join("verdict.json"),
                serde_json::to_vec_pretty(&v).map_err(|e| violation(e.to_string()))?,
            )?;
        }
        if !self.feedback.is_empty() {
            write_jsonl(&dir.join("feedback.jsonl"), &self.feedback)?;
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self, RecorderError> {
        let meta: MetadataFile = serde_json::from_slice(&fs::read(dir.join("metadata.json"))?)
            .map_err(|e| violation(format!("metadata.json: {e}")))?;
        if meta.schema_version != SCHEMA_VERSION {
            return Err(violation(format!(
                "unsupported schema_version {}",
                meta.schema_version
            )));
        }
        let mut frames = Vec::with_capacity(meta.frames.len());
        for rec in &meta.frames {
            if rec.file.contains('/') || rec.file.contains('\\') || rec.file.starts_with('.') {
                return Err(violation(format!("bad frame file name {:?}", rec.file)));
            }
            let bytes = fs::read(dir.join("frames").join(&rec.file))
                .map_err(|e| violation(format!("frame {}: {e}", rec.file)))?;
            let (w, h, px) = decode_png(&bytes)?;
            if (w, h) != (rec.width, rec.height) {
                return Err(violation(format!("frame {} is {w}x{h}, index says otherwise", rec.file)));
            }
            frames.push(Frame::new(rec.timestamp, rec.generation, w, h, px));
        }
        let steps = read_jsonl(&dir.join("steps.jsonl"))?;
        let verdict = match fs::read(dir.join("verdict.json")) {
            Ok(bytes) => {
                let v: VerdictFile = serde_json::from_slice(&bytes)
                    .map_err(|e| violation(format!("verdict.json: {e}")))?;
                Some(v.verdict)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(e.into()),
        };
        let feedback_path = dir.join("feedback.jsonl");
        let feedback = if feedback_path.exists() {
            read_jsonl(&feedback_path)?
        } else {
            Vec::new()
        };
        let bundle = TrajectoryBundle {
            metadata: meta.metadata,
            steps,
            frames,
            verdict,
            feedback,
        };
        bundle.validate()?;
        Ok(bundle)
    }
}

/// Streams a bundle directory as a tar archive rooted at `prefix/`.
pub fn write_tar<W: Write>(dir: &Path, prefix: &str, out: W) -> std::io::Result<W> {
    let mut builder = tar::Builder::new(out);
    builder.mode(tar::HeaderMode::Deterministic);
    builder.append_dir_all(prefix, dir)?;
    builder.into_inner()
}
