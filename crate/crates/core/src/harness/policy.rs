use std::collections::HashMap;
use std::path::Path;

use super::{Decision, HarnessError, Observation, Task};
use crate::action::Action;

/// Chooses the next action from an observation.
pub trait Policy: Send {
    fn name(&self) -> &str;
    /// Called once before each episode.
    fn begin(&mut self, _task: &Task) {}
    fn decide(&mut self, task: &Task, obs: &Observation) -> Decision;
}

/// Always waits; can never make progress.
#[derive(Debug, Clone)]
pub struct NullPolicy {
    pub wait_ms: u64,
}

impl Default for NullPolicy {
    fn default() -> Self {
        NullPolicy { wait_ms: 10 }
    }
}

impl Policy for NullPolicy {
    fn name(&self) -> &str {
        "null"
    }

    fn decide(&mut self, _task: &Task, _obs: &Observation) -> Decision {
        Decision::Act(Action::wait(self.wait_ms))
    }
}

/// Replays a fixed action list per task id, then stops. Tasks without a
/// script stop immediately.
#[derive(Debug, Clone, Default)]
pub struct ScriptedPolicy {
    scripts: HashMap<String, Vec<Action>>,
    cursor: usize,
}

impl ScriptedPolicy {
    pub fn new(scripts: HashMap<String, Vec<Action>>) -> Self {
        ScriptedPolicy { scripts, cursor: 0 }
    }
}

impl Policy for ScriptedPolicy {
    fn name(&self) -> &str {
        "scripted"
    }

    fn begin(&mut self, _task: &Task) {
        self.cursor = 0;
    }

    fn decide(&mut self, task: &Task, _obs: &Observation) -> Decision {
        match self.scripts.get(&task.id).and_then(|s| s.get(self.cursor)) {
            Some(a) => {
                self.cursor += 1;
                Decision::Act(a.clone())
            }
            None => Decision::Stop,
        }
    }
}

/// Reads `{"task-id": [action, ...], ...}`.
pub fn load_solutions(path: &Path) -> Result<HashMap<String, Vec<Action>>, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    serde_path_to_error::deserialize(&mut serde_json::Deserializer::from_str(&text)).map_err(|e| {
        HarnessError::SchemaViolation {
            task: "<solutions>".into(),
            path: e.path().to_string(),
            message: e.inner().to_string(),
        }
    })
}

/// `null`, or `scripted` (needs a solutions file).
pub fn policy_by_name(name: &str, solutions: Option<&Path>) -> Result<Box<dyn Policy>, HarnessError> {
    match name {
        "null" => Ok(Box::new(NullPolicy::default())),
        "scripted" => {
            let path = solutions.ok_or_else(|| {
                HarnessError::Env("the scripted policy needs a solutions file".into())
            })?;
            Ok(Box::new(ScriptedPolicy::new(load_solutions(path)?)))
        }
        other => Err(HarnessError::Env(format!(
            "unknown policy {other:?} (expected null or scripted)"
        ))),
    }
}
