use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{Session, SessionError, SessionEvent, SessionState, Shared};
use crate::action::{Action, ActionResult};
use crate::feedback::{FeedbackRecord, FeedbackSource};
use crate::harness::{
    evaluate, run_episode, summarize, EpisodeEnv, EpisodeSummary, Executed, HarnessError,
    NullPolicy, Observation, Policy, ScriptedPolicy, Task,
};
use crate::recorder::{BundleMetadata, Frame, Step, TrajectoryBundle, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunPolicy {
    /// Actions come from an agent through `submit_action`; the run ends when
    /// the budget is used up or the session goes idle.
    External,
    /// Replays the configured solutions file.
    Scripted,
    Null,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRequest {
    pub task_id: String,
    pub policy: RunPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub id: String,
    pub session_id: String,
    pub task_id: String,
    pub policy: RunPolicy,
    pub status: RunStatus,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
    pub summary: Option<EpisodeSummary>,
    pub verdict: Option<Verdict>,
    /// Directory holding the run's trajectory bundle.
    pub trajectory: Option<PathBuf>,
    pub error: Option<String>,
}

fn env_err(e: SessionError) -> HarnessError {
    HarnessError::Env(e.to_string())
}

/// A live session seen through the episode interface. Gated actions wait for
/// an operator decision.
pub(super) struct SessionEnv<'a> {
    pub shared: &'a Shared,
    pub session: &'a Arc<Session>,
}

impl EpisodeEnv for SessionEnv<'_> {
    fn observe(&mut self) -> Result<Observation, HarnessError> {
        self.session
            .wait_screenshot(self.shared.config.first_frame_timeout)
            .map_err(env_err)?;
        self.session.observation(8).map_err(env_err)
    }

    fn execute(&mut self, action: &Action) -> Result<Executed, HarnessError> {
        match self.shared.execute_for_run(self.session, action) {
            Ok(e) => Ok(e),
            Err(SessionError::InvalidAction(e)) => {
                let now = self.session.clock_ms();
                Ok(Executed {
                    result: ActionResult {
                        ok: false,
                        output: String::new(),
                        error: Some(e.to_string()),
                        started_ms: now,
                        finished_ms: now,
                        events_emitted: 0,
                    },
                    approval: None,
                })
            }
            Err(e) => Err(env_err(e)),
        }
    }

    fn frames(&self) -> Result<Vec<Frame>, HarnessError> {
        self.session.all_frames().map_err(env_err)
    }

    fn sandbox(&self) -> &Path {
        self.session.sandbox()
    }

    fn session_id(&self) -> Option<String> {
        Some(self.session.id().to_string())
    }
}

/// Body of a run's background thread. The sandbox has already been reset;
/// `start` is the session's step count at that moment.
pub(super) fn drive(
    shared: Arc<Shared>,
    session: Arc<Session>,
    task: Task,
    mut info: RunInfo,
    start: usize,
) {
    let outcome = match info.policy {
        RunPolicy::External => external_episode(&shared, &session, &task, start),
        RunPolicy::Scripted => {
            let mut p = ScriptedPolicy::new(shared.config.solutions.clone());
            scripted(&shared, &session, &task, &mut p)
        }
        RunPolicy::Null => scripted(&shared, &session, &task, &mut NullPolicy::default()),
    };
    info.finished_at = Some(Utc::now());
    match outcome {
        Ok(bundle) => {
            let dir = shared.config.data_root.join("runs").join(&info.id).join("bundle");
            match bundle.write(&dir) {
                Ok(()) => info.trajectory = Some(dir),
                Err(e) => info.error = Some(format!("could not write trajectory: {e}")),
            }
            for record in &bundle.feedback {
                if let Err(e) = session.add_feedback(record.clone()) {
                    log::error!("run {}: {e}", info.id);
                }
            }
            info.summary = Some(summarize(&task, &bundle));
            info.verdict = bundle.verdict;
            info.status = RunStatus::Completed;
        }
        Err(e) => {
            info.status = RunStatus::Failed;
            info.error = Some(e.to_string());
        }
    }
    shared.finish_run(&session, info);
}

fn scripted(
    shared: &Shared,
    session: &Arc<Session>,
    task: &Task,
    policy: &mut dyn Policy,
) -> Result<TrajectoryBundle, HarnessError> {
    let mut env = SessionEnv { shared, session };
    run_episode(task, &mut env, policy)
}

fn external_episode(
    shared: &Shared,
    session: &Arc<Session>,
    task: &Task,
    start: usize,
) -> Result<TrajectoryBundle, HarnessError> {
    let budget = task.budget as usize;
    session.touch();
    let idle = shared.config.external_idle_timeout;
    loop {
        let (steps, quiet) = session.wait_activity(Duration::from_millis(50));
        if steps >= start + budget || session.state() != SessionState::Live {
            break;
        }
        if quiet.is_some_and(|since: Instant| since.elapsed() >= idle) {
            break;
        }
    }
    let steps: Vec<Step> = session
        .steps_from(start)
        .into_iter()
        .take(budget)
        .enumerate()
        .map(|(i, mut s)| {
            s.index = i as u64;
            s
        })
        .collect();

    let mut metadata = BundleMetadata::new(task.instruction.clone());
    metadata.task_id = Some(task.id.clone());
    metadata.platform = task.platform.clone();
    metadata.application = task.application.clone();
    metadata.session_id = Some(session.id().to_string());
    metadata.budget_exhausted = steps.len() == budget;
    let verdict = match &task.evaluator {
        Some(_) => Some(evaluate(task, session.sandbox())?),
        None => None,
    };
    let feedback = verdict
        .iter()
        .filter_map(|v| {
            FeedbackRecord::new(session.id(), None, v.feedback.clone(), FeedbackSource::Rule).ok()
        })
        .collect();
    let bundle = TrajectoryBundle {
        metadata,
        steps,
        frames: session.all_frames().map_err(env_err)?,
        verdict,
        feedback,
    };
    bundle.validate().map_err(|e| HarnessError::Env(e.to_string()))?;
    Ok(bundle)
}

impl Shared {
    pub(super) fn finish_run(&self, session: &Session, info: RunInfo) {
        let dir = self.config.data_root.join("runs").join(&info.id);
        let saved = std::fs::create_dir_all(&dir).and_then(|_| {
            let json = serde_json::to_vec_pretty(&info).map_err(std::io::Error::other)?;
            std::fs::write(dir.join("run.json"), json)
        });
        if let Err(e) = saved {
            log::error!("run {}: could not save status: {e}", info.id);
        }
        session.end_run(&info);
        if let Some(slot) = self.runs.read().unwrap_or_else(|p| p.into_inner()).get(&info.id) {
            *slot.lock().unwrap_or_else(|p| p.into_inner()) = info.clone();
        }
        session.emit(SessionEvent::RunFinished { run: info });
    }
}
