use std::path::Path;

use chrono::Utc;
use serde::{Deserialize, Serialize};

use super::{evaluate, HarnessError, Policy, Task};
use crate::action::{Action, ActionResult};
use crate::feedback::{FeedbackRecord, FeedbackSource};
use crate::recorder::{BundleMetadata, Frame, FrameMeta, Step, TrajectoryBundle};

/// What an agent sees before choosing an action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub screenshot: FrameMeta,
    /// Newest frames, oldest first; the last one is `screenshot`.
    pub frames: Vec<FrameMeta>,
    /// Output of the most recent command or tool call.
    pub last_output: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Act(Action),
    Stop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Executed {
    pub result: ActionResult,
    pub approval: Option<String>,
}

/// The live side of an episode: a screen to observe, somewhere to act, and a
/// sandbox to evaluate.
pub trait EpisodeEnv {
    fn observe(&mut self) -> Result<Observation, HarnessError>;
    /// Executes one action. Action-level failures come back as a result with
    /// `ok == false`; errors are for a broken environment.
    fn execute(&mut self, action: &Action) -> Result<Executed, HarnessError>;
    /// Every frame recorded so far.
    fn frames(&self) -> Result<Vec<Frame>, HarnessError>;
    fn sandbox(&self) -> &Path;
    fn session_id(&self) -> Option<String> {
        None
    }
}

/// Observe, decide, act, until the policy stops or the budget runs out; then
/// evaluate if the task has an evaluator. The verdict also goes into the
/// bundle's feedback as a rule-sourced record.
pub fn run_episode<E: EpisodeEnv + ?Sized>(
    task: &Task,
    env: &mut E,
    policy: &mut dyn Policy,
) -> Result<TrajectoryBundle, HarnessError> {
    let mut metadata = BundleMetadata::new(task.instruction.clone());
    metadata.task_id = Some(task.id.clone());
    metadata.platform = task.platform.clone();
    metadata.application = task.application.clone();
    metadata.session_id = env.session_id();
    metadata.started_at = Utc::now();

    policy.begin(task);
    let mut steps = Vec::new();
    let mut stopped = false;
    for index in 0..task.budget as u64 {
        let obs = env.observe()?;
        let action = match policy.decide(task, &obs) {
            Decision::Stop => {
                stopped = true;
                break;
            }
            Decision::Act(a) => a,
        };
        let executed = env.execute(&action)?;
        steps.push(Step {
            index,
            observation_ref: obs.screenshot.timestamp,
            action,
            result: executed.result,
            feedback: None,
            approval: executed.approval,
        });
    }
    metadata.budget_exhausted = !stopped && steps.len() as u64 == task.budget as u64;

    let verdict = match &task.evaluator {
        Some(_) => Some(evaluate(task, env.sandbox())?),
        None => None,
    };
    let feedback = verdict
        .iter()
        .filter_map(|v| {
            FeedbackRecord::new(
                env.session_id().unwrap_or_else(|| "local".into()),
                None,
                v.feedback.clone(),
                FeedbackSource::Rule,
            )
            .ok()
        })
        .collect();
    let bundle = TrajectoryBundle {
        metadata,
        steps,
        frames: env.frames()?,
        verdict,
        feedback,
    };
    bundle
        .validate()
        .map_err(|e| HarnessError::Env(e.to_string()))?;
    Ok(bundle)
}

/// One line of a results file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub task_id: String,
    pub level: u8,
    /// `None` when the task has no evaluator.
    pub success: Option<bool>,
    pub steps: usize,
    pub budget_exhausted: bool,
    pub feedback: String,
}

pub fn summarize(task: &Task, bundle: &TrajectoryBundle) -> EpisodeSummary {
    EpisodeSummary {
        task_id: task.id.clone(),
        level: task.level,
        success: bundle.verdict.as_ref().map(|v| v.success),
        steps: bundle.steps.len(),
        budget_exhausted: bundle.metadata.budget_exhausted,
        feedback: bundle
            .verdict
            .as_ref()
            .map_or_else(|| "awaiting human evaluation".into(), |v| v.feedback.clone()),
    }
}
