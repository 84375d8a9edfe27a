//! Tasks as (instruction, reset, evaluator) triples, the rule-based evaluator,
//! episode running and critic scoring.

mod critic;
mod episode;
mod expr;
mod local;
mod policy;
mod reset;

use std::collections::HashSet;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use critic::{critic_accuracy, load_critic_records, CriticRecord};
pub use episode::{
    run_episode, summarize, Decision, EpisodeEnv, EpisodeSummary, Executed, Observation,
};
pub use expr::{evaluate_in, evaluate_with, feedback, EvalExpr};
pub use local::{run_local_suite, LocalEnv};
pub use policy::{load_solutions, policy_by_name, NullPolicy, Policy, ScriptedPolicy};
pub use reset::{check_relative, confine, reset, ResetStep};

use crate::action::CommandRunner;
use crate::recorder::Verdict;

pub const DEFAULT_BUDGET: u32 = 30;
pub const TASK_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("schema violation in task {task}: {path}: {message}")]
    SchemaViolation {
        task: String,
        path: String,
        message: String,
    },
    #[error("reset of {task} failed at step {step}: {output}")]
    ResetFailed {
        task: String,
        step: usize,
        output: String,
    },
    #[error("path {0:?} escapes the sandbox")]
    PathEscape(String),
    #[error("evaluation error: {0}")]
    EvalError(String),
    #[error("task {0} has no evaluator")]
    NoEvaluator(String),
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("no records to score")]
    EmptyInput,
    #[error("environment: {0}")]
    Env(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn default_schema() -> u32 {
    TASK_SCHEMA_VERSION
}

fn default_budget() -> u32 {
    DEFAULT_BUDGET
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub id: String,
    pub instruction: String,
    /// 1 to 3; level 3 tasks are judged by people and may omit the evaluator.
    pub level: u8,
    #[serde(default)]
    pub reset: Vec<ResetStep>,
    #[serde(default)]
    pub evaluator: Option<EvalExpr>,
    #[serde(default = "default_budget")]
    pub budget: u32,
    #[serde(default)]
    pub platform: Option<String>,
    #[serde(default)]
    pub application: Option<String>,
}

impl Task {
    fn violation(&self, path: &str, message: impl Into<String>) -> HarnessError {
        HarnessError::SchemaViolation {
            task: self.id.clone(),
            path: path.to_string(),
            message: message.into(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.schema_version != TASK_SCHEMA_VERSION {
            return Err(self.violation(
                "schema_version",
                format!("unsupported version {}", self.schema_version),
            ));
        }
        if self.id.trim().is_empty() {
            return Err(self.violation("id", "empty id"));
        }
        if !(1..=3).contains(&self.level) {
            return Err(self.violation("level", format!("{} is not 1, 2 or 3", self.level)));
        }
        if self.budget == 0 {
            return Err(self.violation("budget", "must be at least 1"));
        }
        for (i, step) in self.reset.iter().enumerate() {
            let path = match step {
                ResetStep::Remove { path }
                | ResetStep::WriteFile { path, .. }
                | ResetStep::Mkdir { path } => path,
                ResetStep::Command { .. } => continue,
            };
            check_relative(path).map_err(|e| self.violation(&format!("reset[{i}].path"), e))?;
        }
        Ok(())
    }
}

/// Parses a suite: a JSON array of task objects. Errors name the task and the
/// field path.
pub fn parse_suite(text: &str) -> Result<Vec<Task>, HarnessError> {
    let items: Vec<serde_json::Value> =
        serde_json::from_str(text).map_err(|e| HarnessError::SchemaViolation {
            task: "<suite>".into(),
            path: ".".into(),
            message: e.to_string(),
        })?;
    let mut tasks = Vec::with_capacity(items.len());
    let mut ids = HashSet::new();
    for (i, item) in items.into_iter().enumerate() {
        let label = item
            .get("id")
            .and_then(|v| v.as_str())
            .map_or_else(|| format!("#{i}"), str::to_string);
        let task: Task = serde_path_to_error::deserialize(item).map_err(|e| {
            HarnessError::SchemaViolation {
                task: label.clone(),
                path: e.path().to_string(),
                message: e.inner().to_string(),
            }
        })?;
        task.validate()?;
        if !ids.insert(task.id.clone()) {
            return Err(task.violation("id", "duplicate id"));
        }
        tasks.push(task);
    }
    Ok(tasks)
}

pub fn load_suite(path: &Path) -> Result<Vec<Task>, HarnessError> {
    parse_suite(&std::fs::read_to_string(path)?)
}

/// Runs the task's evaluator against the sandbox.
pub fn evaluate(task: &Task, root: &Path) -> Result<Verdict, HarnessError> {
    let expr = task
        .evaluator
        .as_ref()
        .ok_or_else(|| HarnessError::NoEvaluator(task.id.clone()))?;
    let runner = CommandRunner::new(root).with_timeout(Duration::from_secs(30));
    evaluate_in(expr, root, &runner)
}
