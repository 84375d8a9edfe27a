//! Confirmation gating for host-side execution.
//!
//! A gated action only runs with an [`Approval`] issued by a [`ConfirmationBook`]
//! for that exact action. Approvals are not `Clone` and are consumed by the
//! engine, so one approval buys at most one execution.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::Action;
use crate::ids::new_id;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GatingMode {
    Off,
    #[default]
    GatedExec,
    GatedAll,
}

impl GatingMode {
    pub fn requires_confirmation(self, action: &Action) -> bool {
        match self {
            GatingMode::Off => false,
            GatingMode::GatedExec => action.is_host_execution(),
            GatingMode::GatedAll => true,
        }
    }
}

impl FromStr for GatingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "off" => Ok(GatingMode::Off),
            "gated-exec" => Ok(GatingMode::GatedExec),
            "gated-all" => Ok(GatingMode::GatedAll),
            other => Err(format!("unknown gating mode {other:?}")),
        }
    }
}

/// Single-use permission to execute one specific action.
#[derive(Debug)]
pub struct Approval {
    request_id: String,
    action: Action,
}

impl Approval {
    pub fn request_id(&self) -> &str {
        &self.request_id
    }

    pub fn covers(&self, action: &Action) -> bool {
        &self.action == action
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    Pending,
    Approved,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Approve,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfirmationRequest {
    pub id: String,
    pub session_id: String,
    pub action: Action,
    pub requested_at: DateTime<Utc>,
    pub resolution: Resolution,
    pub note: Option<String>,
}

#[derive(Debug)]
pub enum Resolved {
    Approved {
        request: ConfirmationRequest,
        approval: Approval,
    },
    Rejected(ConfirmationRequest),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfirmError {
    #[error("unknown confirmation request {0}")]
    UnknownRequest(String),
    #[error("confirmation request {0} already resolved")]
    AlreadyResolved(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AuditRecord {
    ConfirmationRequested {
        request_id: String,
        session_id: String,
        action_kind: String,
    },
    Approved {
        request_id: String,
        session_id: String,
    },
    Rejected {
        request_id: String,
        session_id: String,
    },
    Executed {
        session_id: Option<String>,
        action_kind: String,
        gated: bool,
        approval: Option<String>,
        ok: bool,
    },
}

/// Append-only audit trail, optionally mirrored to a JSONL file.
#[derive(Debug, Clone, Default)]
pub struct AuditLog {
    records: Arc<Mutex<Vec<AuditRecord>>>,
    file: Option<Arc<Mutex<File>>>,
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_file(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(AuditLog {
            records: Arc::default(),
            file: Some(Arc::new(Mutex::new(file))),
        })
    }

    pub fn append(&self, record: AuditRecord) {
        let mut records = self.records.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(file) = &self.file {
            let mut f = file.lock().unwrap_or_else(|p| p.into_inner());
            if let Ok(line) = serde_json::to_string(&record) {
                if let Err(e) = writeln!(f, "{line}").and_then(|_| f.flush()) {
                    log::error!("audit log write failed: {e}");
                }
            }
        }
        records.push(record);
    }

    pub fn records(&self) -> Vec<AuditRecord> {
        self.records.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}

/// Tracks confirmation requests and hands out approvals.
#[derive(Debug, Default)]
pub struct ConfirmationBook {
    requests: Mutex<HashMap<String, ConfirmationRequest>>,
    audit: AuditLog,
}

impl ConfirmationBook {
    pub fn new(audit: AuditLog) -> Self {
        ConfirmationBook {
            requests: Mutex::default(),
            audit,
        }
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub fn request(&self, session_id: &str, action: Action) -> ConfirmationRequest {
        let req = ConfirmationRequest {
            id: new_id(),
            session_id: session_id.to_string(),
            action,
            requested_at: Utc::now(),
            resolution: Resolution::Pending,
            note: None,
        };
        self.audit.append(AuditRecord::ConfirmationRequested {
            request_id: req.id.clone(),
            session_id: req.session_id.clone(),
            action_kind: req.action.kind().to_string(),
        });
        self.lock().insert(req.id.clone(), req.clone());
        req
    }

    /// Resolves a pending request. The state change happens under one lock, so
    /// concurrent resolvers see exactly one success.
    pub fn resolve(
        &self,
        id: &str,
        decision: Decision,
        note: Option<String>,
    ) -> Result<Resolved, ConfirmError> {
        let mut requests = self.lock();
        let req = requests
            .get_mut(id)
            .ok_or_else(|| ConfirmError::UnknownRequest(id.to_string()))?;
        if req.resolution != Resolution::Pending {
            return Err(ConfirmError::AlreadyResolved(id.to_string()));
        }
        req.note = note;
        match decision {
            Decision::Approve => {
                req.resolution = Resolution::Approved;
                self.audit.append(AuditRecord::Approved {
                    request_id: req.id.clone(),
                    session_id: req.session_id.clone(),
                });
                Ok(Resolved::Approved {
                    approval: Approval {
                        request_id: req.id.clone(),
                        action: req.action.clone(),
                    },
                    request: req.clone(),
                })
            }
            Decision::Reject => {
                req.resolution = Resolution::Rejected;
                self.audit.append(AuditRecord::Rejected {
                    request_id: req.id.clone(),
                    session_id: req.session_id.clone(),
                });
                Ok(Resolved::Rejected(req.clone()))
            }
        }
    }

    pub fn get(&self, id: &str) -> Option<ConfirmationRequest> {
        self.lock().get(id).cloned()
    }

    pub fn pending_for(&self, session_id: &str) -> Vec<ConfirmationRequest> {
        let mut out: Vec<_> = self
            .lock()
            .values()
            .filter(|r| r.session_id == session_id && r.resolution == Resolution::Pending)
            .cloned()
            .collect();
        out.sort_by_key(|r| r.requested_at);
        out
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, HashMap<String, ConfirmationRequest>> {
        self.requests.lock().unwrap_or_else(|p| p.into_inner())
    }
}
