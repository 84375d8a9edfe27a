use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{RunInfo, SessionState, Target};
use crate::action::{ConfirmationRequest, GatingMode};
use crate::feedback::FeedbackRecord;
use crate::recorder::Step;

/// One line of a session's `events.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    Created {
        session_id: String,
        target: Target,
        gating: GatingMode,
        created_at: DateTime<Utc>,
    },
    State {
        state: SessionState,
        at: DateTime<Utc>,
    },
    Step {
        step: Step,
    },
    /// Written when a request is opened and again when it is resolved.
    Confirmation {
        request: ConfirmationRequest,
    },
    Feedback {
        record: FeedbackRecord,
    },
    Run {
        run: RunInfo,
    },
}

/// Append-only JSONL writer.
#[derive(Debug)]
pub struct EventLog {
    file: Mutex<File>,
}

impl EventLog {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(EventLog {
            file: Mutex::new(file),
        })
    }

    /// With `durable` the data is synced to disk before returning.
    pub fn append(&self, record: &LogRecord, durable: bool) -> std::io::Result<()> {
        let line = serde_json::to_string(record).map_err(std::io::Error::other)?;
        let mut f = self.file.lock().unwrap_or_else(|p| p.into_inner());
        writeln!(f, "{line}")?;
        f.flush()?;
        if durable {
            f.sync_data()?;
        }
        Ok(())
    }
}

/// Reads every record; a torn final line from a crash is skipped.
pub fn read_log(path: &Path) -> std::io::Result<Vec<LogRecord>> {
    let mut out = Vec::new();
    let lines: Vec<String> = BufReader::new(File::open(path)?).lines().collect::<Result<_, _>>()?;
    let last = lines.len().saturating_sub(1);
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(_) if i == last => log::warn!("{}: ignoring torn last line", path.display()),
            Err(e) => {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("{} line {}: {e}", path.display(), i + 1),
                ))
            }
        }
    }
    Ok(out)
}
