//! Live sessions against remote desktops: one API for observations, actions,
//! confirmations, feedback, task runs and trajectory export.
//!
//! Every session writes an append-only `events.jsonl` under
//! `<data root>/sessions/<id>/`; on startup these logs are replayed so closed
//! sessions, their steps and their feedback survive a restart.

mod log;
mod run;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Condvar, Mutex, MutexGuard, RwLock};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

pub use self::log::{read_log, EventLog, LogRecord};
pub use run::{RunInfo, RunPolicy, RunRequest, RunStatus};

use crate::action::{
    Action, ActionEngine, ActionError, ActionResult, Approval, AuditLog, CommandRunner,
    ConfirmError, ConfirmationBook, ConfirmationRequest, EngineConfig, GatingMode,
};
use crate::action::gate::{Decision, Resolved};
use crate::clock::Clock;
use crate::feedback::{EmptyText, FeedbackRecord, FeedbackSource};
use crate::grounding::{
    append_sample, AnnotatedClick, BBox, ClickType, GroundingError, GroundingSample, ScreenshotRef,
};
use crate::harness::{load_solutions, load_suite, reset, Executed, HarnessError, Observation, Task};
use crate::ids::new_id;
use crate::recorder::{
    encode_png, frame_file_name, write_tar, BundleMetadata, Frame, Recorder, RecorderConfig,
    RecorderError, Step, TrajectoryBundle,
};
use crate::rfb::{connect_with, ConnectOptions};
use crate::tools::ToolLibrary;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Target {
    pub host: String,
    pub port: u16,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.host, self.port)
    }
}

impl FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (host, port) = s
            .rsplit_once(':')
            .ok_or_else(|| format!("{s:?} is not host:port"))?;
        let port = port.parse().map_err(|_| format!("bad port in {s:?}"))?;
        if host.is_empty() {
            return Err(format!("empty host in {s:?}"));
        }
        Ok(Target {
            host: host.to_string(),
            port,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Connecting,
    Live,
    Closed,
    Failed,
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("target {0} is not in the allowlist")]
    TargetNotAllowed(Target),
    #[error("could not connect: {0}")]
    ConnectFailed(String),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("session {0} is not live")]
    SessionClosed(String),
    #[error("session {0} already has an action in flight")]
    SessionBusy(String),
    #[error("no frames captured yet")]
    NoFrames,
    #[error("no frame with timestamp {0}")]
    UnknownFrame(u64),
    #[error("invalid action: {0}")]
    InvalidAction(ActionError),
    #[error(transparent)]
    Confirm(#[from] ConfirmError),
    #[error(transparent)]
    EmptyText(#[from] EmptyText),
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("unknown run {0}")]
    UnknownRun(String),
    #[error("the scripted policy has no solutions configured")]
    NoSolutions,
    #[error(transparent)]
    Recorder(#[from] RecorderError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Grounding(#[from] GroundingError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub data_root: PathBuf,
    pub allowlist: Vec<Target>,
    pub default_gating: GatingMode,
    pub tasks: Vec<Task>,
    pub solutions: HashMap<String, Vec<Action>>,
    pub tools_dir: Option<PathBuf>,
    pub engine: EngineConfig,
    pub max_fps: f64,
    pub ring_capacity: usize,
    pub connect_timeout: Duration,
    pub first_frame_timeout: Duration,
    /// An external run ends after this long without a submitted action.
    pub external_idle_timeout: Duration,
    /// How long a scripted run waits on an operator before rejecting.
    pub confirmation_timeout: Duration,
}

impl SessionConfig {
    pub fn new(data_root: impl Into<PathBuf>) -> Self {
        SessionConfig {
            data_root: data_root.into(),
            allowlist: Vec::new(),
            default_gating: GatingMode::GatedExec,
            tasks: Vec::new(),
            solutions: HashMap::new(),
            tools_dir: None,
            engine: EngineConfig::default(),
            max_fps: 10.0,
            ring_capacity: 256,
            connect_timeout: Duration::from_secs(5),
            first_frame_timeout: Duration::from_secs(5),
            external_idle_timeout: Duration::from_secs(30),
            confirmation_timeout: Duration::from_secs(600),
        }
    }

    pub fn load_suite(mut self, path: &Path) -> Result<Self, HarnessError> {
        self.tasks = load_suite(path)?;
        Ok(self)
    }

    pub fn load_solutions(mut self, path: &Path) -> Result<Self, HarnessError> {
        self.solutions = load_solutions(path)?;
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub host: String,
    pub port: u16,
    #[serde(default)]
    pub password: Option<String>,
    /// Defaults to the server's gating mode.
    #[serde(default)]
    pub gating: Option<GatingMode>,
}

/// Pushed to subscribers of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionEvent {
    FrameAvailable { timestamp: u64, generation: u64 },
    ConfirmationPending { request: ConfirmationRequest },
    ConfirmationResolved { request: ConfirmationRequest },
    StepAppended { step: Step },
    Feedback { record: FeedbackRecord },
    StateChanged { state: SessionState },
    RunFinished { run: RunInfo },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Submitted {
    Executed { step: Step },
    Pending { request: ConfirmationRequest },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ResolveOutcome {
    Executed {
        step: Step,
    },
    Rejected {
        request: ConfirmationRequest,
        feedback: FeedbackRecord,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: String,
    pub target: Target,
    pub state: SessionState,
    pub gating: GatingMode,
    pub created_at: DateTime<Utc>,
    pub steps: usize,
    pub pending: Vec<ConfirmationRequest>,
    pub run: Option<String>,
}

/// A grounding annotation drawn on one of the session's frames.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRequest {
    pub instruction: String,
    pub bbox: BBox,
    pub click_type: ClickType,
    pub platform: String,
    pub application: String,
    /// Frame timestamp; the newest frame when absent.
    #[serde(default)]
    pub frame: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Inflight {
    Idle,
    Executing,
    Pending,
}

#[derive(Debug, Clone)]
enum Outcome {
    Executed(Step),
    Rejected,
    Failed(String),
}

struct Live {
    recorder: Recorder,
    engine: Mutex<ActionEngine>,
}

struct Inner {
    steps: Vec<Step>,
    feedback: Vec<FeedbackRecord>,
    last_output: Option<String>,
    inflight: Inflight,
    run: Option<(String, RunPolicy)>,
    waiters: HashSet<String>,
    outcomes: HashMap<String, Outcome>,
    last_activity: Instant,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

pub struct Session {
    id: String,
    target: Target,
    gating: GatingMode,
    created_at: DateTime<Utc>,
    clock: Clock,
    state: Mutex<SessionState>,
    live: Option<Live>,
    inner: Mutex<Inner>,
    cond: Condvar,
    log: EventLog,
    events: broadcast::Sender<SessionEvent>,
    dir: PathBuf,
    sandbox: PathBuf,
}

impl fmt::Debug for Session {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Session")
            .field("id", &self.id)
            .field("target", &self.target)
            .field("state", &self.state())
            .finish_non_exhaustive()
    }
}

impl Session {
    fn new_inner() -> Mutex<Inner> {
        Mutex::new(Inner {
            steps: Vec::new(),
            feedback: Vec::new(),
            last_output: None,
            inflight: Inflight::Idle,
            run: None,
            waiters: HashSet::new(),
            outcomes: HashMap::new(),
            last_activity: Instant::now(),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn target(&self) -> &Target {
        &self.target
    }

    pub fn gating(&self) -> GatingMode {
        self.gating
    }

    pub fn sandbox(&self) -> &Path {
        &self.sandbox
    }

    fn clock_ms(&self) -> u64 {
        self.clock.now_ms()
    }

    /// A live session whose capture loop has died is marked failed here.
    pub fn state(&self) -> SessionState {
        let mut state = lock(&self.state);
        if *state == SessionState::Live {
            if let Some(live) = &self.live {
                if !live.recorder.is_running() {
                    *state = SessionState::Failed;
                    drop(state);
                    self.set_state_logged(SessionState::Failed);
                    return SessionState::Failed;
                }
            }
        }
        *state
    }

    fn set_state_logged(&self, state: SessionState) {
        self.record(&LogRecord::State {
            state,
            at: Utc::now(),
        });
        self.emit(SessionEvent::StateChanged { state });
        self.cond.notify_all();
    }

    fn emit(&self, event: SessionEvent) {
        let _ = self.events.send(event);
    }

    fn record(&self, record: &LogRecord) {
        if let Err(e) = self.log.append(record, false) {
            ::log::error!("session {}: event log write failed: {e}", self.id);
        }
    }

    fn live(&self) -> Result<&Live, SessionError> {
        match (&self.live, self.state()) {
            (Some(live), SessionState::Live) => Ok(live),
            _ => Err(SessionError::SessionClosed(self.id.clone())),
        }
    }

    pub fn step_count(&self) -> usize {
        lock(&self.inner).steps.len()
    }

    pub fn steps(&self) -> Vec<Step> {
        lock(&self.inner).steps.clone()
    }

    fn steps_from(&self, start: usize) -> Vec<Step> {
        lock(&self.inner).steps.get(start..).unwrap_or_default().to_vec()
    }

    pub fn feedback(&self) -> Vec<FeedbackRecord> {
        lock(&self.inner).feedback.clone()
    }

    fn touch(&self) {
        lock(&self.inner).last_activity = Instant::now();
    }

    /// Waits up to `timeout` for a change; returns the step count and, when
    /// nothing is in flight, the instant activity last happened.
    fn wait_activity(&self, timeout: Duration) -> (usize, Option<Instant>) {
        let inner = lock(&self.inner);
        let (inner, _) = self
            .cond
            .wait_timeout(inner, timeout)
            .unwrap_or_else(|p| p.into_inner());
        let quiet = (inner.inflight == Inflight::Idle).then_some(inner.last_activity);
        (inner.steps.len(), quiet)
    }

    fn wait_screenshot(&self, timeout: Duration) -> Result<Frame, SessionError> {
        let live = self.live()?;
        let deadline = Instant::now() + timeout;
        loop {
            match live.recorder.get_screenshot() {
                Ok(f) => return Ok(f),
                Err(RecorderError::NoFrames) if Instant::now() < deadline => {
                    std::thread::sleep(Duration::from_millis(5))
                }
                Err(RecorderError::NoFrames) => return Err(SessionError::NoFrames),
                Err(e) => return Err(e.into()),
            }
        }
    }

    /// Newest screenshot plus up to `frames` frame refs, oldest first.
    pub fn observation(&self, frames: usize) -> Result<Observation, SessionError> {
        let live = self.live()?;
        let shot = live.recorder.get_screenshot().map_err(|e| match e {
            RecorderError::NoFrames => SessionError::NoFrames,
            e => e.into(),
        })?;
        let mut refs: Vec<_> = live.recorder.latest(frames).iter().map(Frame::meta).collect();
        // The screenshot is read first, so newer frames may have arrived since.
        refs.retain(|m| m.timestamp <= shot.timestamp);
        Ok(Observation {
            screenshot: shot.meta(),
            frames: refs,
            last_output: lock(&self.inner).last_output.clone(),
        })
    }

    fn all_frames(&self) -> Result<Vec<Frame>, SessionError> {
        match &self.live {
            Some(live) => Ok(live.recorder.all_frames()?),
            None => {
                let dir = self.dir.join("bundle");
                if dir.join("metadata.json").exists() {
                    Ok(TrajectoryBundle::read(&dir)?.frames)
                } else {
                    Ok(Vec::new())
                }
            }
        }
    }

    pub fn frame(&self, timestamp: u64) -> Result<Frame, SessionError> {
        let found = match &self.live {
            Some(live) => live.recorder.frame_at(timestamp)?,
            None => {
                let path = self.dir.join("bundle/frames").join(frame_file_name(timestamp));
                match std::fs::read(&path) {
                    Ok(bytes) => {
                        let (w, h, px) = crate::recorder::decode_png(&bytes)?;
                        Some(Frame::new(timestamp, 0, w, h, px))
                    }
                    Err(_) => None,
                }
            }
        };
        found.ok_or(SessionError::UnknownFrame(timestamp))
    }

    /// Claims the session for one action.
    fn acquire(&self, from_run: bool) -> Result<(), SessionError> {
        let mut inner = lock(&self.inner);
        let run_owns = matches!(inner.run, Some((_, p)) if p != RunPolicy::External);
        if inner.inflight != Inflight::Idle || run_owns != from_run {
            return Err(SessionError::SessionBusy(self.id.clone()));
        }
        inner.inflight = Inflight::Executing;
        Ok(())
    }

    fn release(&self) {
        let mut inner = lock(&self.inner);
        inner.inflight = Inflight::Idle;
        inner.last_activity = Instant::now();
        drop(inner);
        self.cond.notify_all();
    }

    fn validate(&self, action: &Action) -> Result<(), SessionError> {
        let live = self.live()?;
        lock(&live.engine)
            .validate(action)
            .map_err(SessionError::InvalidAction)
    }

    /// Executes on the backend and appends a step. The caller holds the
    /// in-flight claim.
    fn perform(
        &self,
        action: &Action,
        approval: Option<Approval>,
        frame_timeout: Duration,
    ) -> Result<Step, SessionError> {
        let live = self.live()?;
        let shot = self.wait_screenshot(frame_timeout)?;
        let approval_id = approval.as_ref().map(|a| a.request_id().to_string());
        let result = {
            let mut engine = lock(&live.engine);
            match engine.execute(action, approval) {
                Ok(r) => r,
                Err(e) => {
                    let now = self.clock.now_ms();
                    ActionResult {
                        ok: false,
                        output: String::new(),
                        error: Some(e.to_string()),
                        started_ms: now,
                        finished_ms: now,
                        events_emitted: 0,
                    }
                }
            }
        };
        let mut inner = lock(&self.inner);
        if action.is_host_execution() {
            inner.last_output = Some(result.output.clone());
        }
        let step = Step {
            index: inner.steps.len() as u64,
            observation_ref: shot.timestamp,
            action: action.clone(),
            approval: approval_id,
            feedback: None,
            result,
        };
        inner.steps.push(step.clone());
        drop(inner);
        self.record(&LogRecord::Step { step: step.clone() });
        self.emit(SessionEvent::StepAppended { step: step.clone() });
        Ok(step)
    }

    fn add_feedback(&self, record: FeedbackRecord) -> Result<(), SessionError> {
        self.log.append(
            &LogRecord::Feedback {
                record: record.clone(),
            },
            true,
        )?;
        lock(&self.inner).feedback.push(record.clone());
        self.emit(SessionEvent::Feedback { record });
        Ok(())
    }

    /// Ends a pending confirmation, waking a run that waits on it.
    fn settle(&self, request_id: &str, outcome: Outcome) {
        let mut inner = lock(&self.inner);
        inner.inflight = Inflight::Idle;
        inner.last_activity = Instant::now();
        if inner.waiters.remove(request_id) {
            inner.outcomes.insert(request_id.to_string(), outcome);
        }
        drop(inner);
        self.cond.notify_all();
    }

    fn end_run(&self, info: &RunInfo) {
        self.record(&LogRecord::Run { run: info.clone() });
        let mut inner = lock(&self.inner);
        if inner.run.as_ref().is_some_and(|(id, _)| id == &info.id) {
            inner.run = None;
        }
        drop(inner);
        self.cond.notify_all();
    }

    pub fn subscribe(&self) -> broadcast::Receiver<SessionEvent> {
        self.events.subscribe()
    }

    fn bundle(&self) -> Result<TrajectoryBundle, SessionError> {
        let mut metadata = BundleMetadata::new("interactive session");
        metadata.session_id = Some(self.id.clone());
        metadata.started_at = self.created_at;
        Ok(TrajectoryBundle {
            metadata,
            steps: self.steps(),
            frames: self.all_frames()?,
            verdict: None,
            feedback: self.feedback(),
        })
    }
}

pub(crate) struct Shared {
    config: SessionConfig,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    runs: RwLock<HashMap<String, Arc<Mutex<RunInfo>>>>,
    book: ConfirmationBook,
    tools: Option<Arc<ToolLibrary>>,
    annotations: Mutex<()>,
}

impl Shared {
    fn session(&self, id: &str) -> Result<Arc<Session>, SessionError> {
        self.sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownSession(id.to_string()))
    }

    fn open_request(&self, session: &Session, action: &Action) -> ConfirmationRequest {
        let request = self.book.request(&session.id, action.clone());
        lock(&session.inner).inflight = Inflight::Pending;
        session.record(&LogRecord::Confirmation {
            request: request.clone(),
        });
        session.emit(SessionEvent::ConfirmationPending {
            request: request.clone(),
        });
        request
    }

    /// Runs one action on behalf of a run, waiting for the operator when it
    /// is gated.
    fn execute_for_run(
        &self,
        session: &Arc<Session>,
        action: &Action,
    ) -> Result<Executed, SessionError> {
        session.validate(action)?;
        session.acquire(true)?;
        if !session.gating.requires_confirmation(action) {
            let step = session.perform(action, None, self.config.first_frame_timeout);
            session.release();
            let step = step?;
            return Ok(Executed {
                result: step.result,
                approval: None,
            });
        }
        let request = {
            // Register before the request is visible so no outcome is missed.
            let req = self.open_request(session, action);
            lock(&session.inner).waiters.insert(req.id.clone());
            req
        };
        let deadline = Instant::now() + self.config.confirmation_timeout;
        let mut inner = lock(&session.inner);
        let outcome = loop {
            if let Some(o) = inner.outcomes.remove(&request.id) {
                break o;
            }
            let now = Instant::now();
            let closed = *lock(&session.state) != SessionState::Live;
            if now >= deadline || closed {
                drop(inner);
                let note = if closed { "session closed" } else { "confirmation timed out" };
                if let Ok(Resolved::Rejected(r)) =
                    self.book.resolve(&request.id, Decision::Reject, Some(note.into()))
                {
                    session.record(&LogRecord::Confirmation { request: r.clone() });
                    session.emit(SessionEvent::ConfirmationResolved { request: r });
                    session.settle(&request.id, Outcome::Rejected);
                }
                // Either we rejected it or a resolver is finishing; wait for it.
                inner = lock(&session.inner);
                if let Some(o) = inner.outcomes.remove(&request.id) {
                    break o;
                }
                let (g, _) = session
                    .cond
                    .wait_timeout(inner, Duration::from_millis(20))
                    .unwrap_or_else(|p| p.into_inner());
                inner = g;
                continue;
            }
            let (g, _) = session
                .cond
                .wait_timeout(inner, (deadline - now).min(Duration::from_millis(100)))
                .unwrap_or_else(|p| p.into_inner());
            inner = g;
        };
        drop(inner);
        let now = session.clock.now_ms();
        let failed = |error: String| Executed {
            result: ActionResult {
                ok: false,
                output: String::new(),
                error: Some(error),
                started_ms: now,
                finished_ms: now,
                events_emitted: 0,
            },
            approval: None,
        };
        Ok(match outcome {
            Outcome::Executed(step) => Executed {
                result: step.result,
                approval: step.approval,
            },
            Outcome::Rejected => failed("rejected by operator".into()),
            Outcome::Failed(e) => failed(e),
        })
    }
}

/// Owns all sessions, confirmations and runs. Cheap to clone.
#[derive(Clone)]
pub struct SessionManager {
    shared: Arc<Shared>,
}

impl SessionManager {
    /// Creates the data root if needed and restores sessions and runs
    /// recorded there.
    pub fn open(config: SessionConfig) -> Result<Self, SessionError> {
        let root = &config.data_root;
        std::fs::create_dir_all(root.join("sessions"))?;
        std::fs::create_dir_all(root.join("runs"))?;
        let audit = AuditLog::with_file(&root.join("audit.jsonl"))?;
        let tools = config
            .tools_dir
            .as_ref()
            .map(|d| Arc::new(ToolLibrary::open(d.clone())));
        let shared = Shared {
            sessions: RwLock::new(restore_sessions(root)?),
            runs: RwLock::new(restore_runs(root)?),
            book: ConfirmationBook::new(audit),
            tools,
            annotations: Mutex::new(()),
            config,
        };
        Ok(SessionManager {
            shared: Arc::new(shared),
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.shared.config
    }

    pub fn audit(&self) -> &AuditLog {
        self.shared.book.audit()
    }

    pub fn tools(&self) -> Option<&Arc<ToolLibrary>> {
        self.shared.tools.as_ref()
    }

    pub fn session(&self, id: &str) -> Result<Arc<Session>, SessionError> {
        self.shared.session(id)
    }

    pub fn create_session(&self, req: CreateSession) -> Result<SessionInfo, SessionError> {
        let cfg = &self.shared.config;
        let target = Target {
            host: req.host,
            port: req.port,
        };
        if !cfg.allowlist.contains(&target) {
            return Err(SessionError::TargetNotAllowed(target));
        }
        let gating = req.gating.unwrap_or(cfg.default_gating);
        let opts = ConnectOptions {
            password: req.password,
            timeout: cfg.connect_timeout,
            ..ConnectOptions::default()
        };
        let conn = connect_with(&target.host, target.port, &opts)
            .map_err(|e| SessionError::ConnectFailed(e.to_string()))?;

        let id = new_id();
        let dir = cfg.data_root.join("sessions").join(&id);
        let sandbox = dir.join("sandbox");
        std::fs::create_dir_all(&sandbox)?;
        let clock = Clock::new();
        let recorder = Recorder::new(
            RecorderConfig::new(dir.join("spill"))
                .max_fps(cfg.max_fps)
                .ring_capacity(cfg.ring_capacity),
            clock,
        )?;
        let (events, _) = broadcast::channel(256);
        let tx = events.clone();
        recorder.on_frame(move |m| {
            let _ = tx.send(SessionEvent::FrameAvailable {
                timestamp: m.timestamp,
                generation: m.generation,
            });
        });
        let input = recorder.start_connection(conn)?;
        let mut engine = ActionEngine::new(Box::new(input), CommandRunner::new(&sandbox), clock)
            .with_config(cfg.engine.clone())
            .with_gating(gating)
            .with_audit(self.audit().clone())
            .with_session(id.clone());
        if let Some(tools) = &self.shared.tools {
            engine = engine.with_tools(tools.clone());
        }
        let created_at = Utc::now();
        let log = EventLog::open(&dir.join("events.jsonl"))?;
        log.append(
            &LogRecord::Created {
                session_id: id.clone(),
                target: target.clone(),
                gating,
                created_at,
            },
            false,
        )?;
        let session = Arc::new(Session {
            id: id.clone(),
            target,
            gating,
            created_at,
            clock,
            state: Mutex::new(SessionState::Live),
            live: Some(Live {
                recorder,
                engine: Mutex::new(engine),
            }),
            inner: Session::new_inner(),
            cond: Condvar::new(),
            log,
            events,
            dir,
            sandbox,
        });
        session.record(&LogRecord::State {
            state: SessionState::Live,
            at: created_at,
        });
        self.shared
            .sessions
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(id.clone(), session);
        self.info(&id)
    }

    pub fn list_sessions(&self) -> Vec<SessionInfo> {
        let ids: Vec<String> = self
            .shared
            .sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .keys()
            .cloned()
            .collect();
        let mut out: Vec<_> = ids.iter().filter_map(|id| self.info(id).ok()).collect();
        out.sort_by_key(|i| i.created_at);
        out
    }

    pub fn info(&self, id: &str) -> Result<SessionInfo, SessionError> {
        let s = self.session(id)?;
        let inner = lock(&s.inner);
        let (steps, run) = (inner.steps.len(), inner.run.as_ref().map(|r| r.0.clone()));
        drop(inner);
        Ok(SessionInfo {
            id: s.id.clone(),
            target: s.target.clone(),
            state: s.state(),
            gating: s.gating,
            created_at: s.created_at,
            steps,
            pending: self.shared.book.pending_for(&s.id),
            run,
        })
    }

    pub fn observation(&self, id: &str, frames: usize) -> Result<Observation, SessionError> {
        self.session(id)?.observation(frames)
    }

    pub fn frame_png(&self, id: &str, timestamp: u64) -> Result<Vec<u8>, SessionError> {
        Ok(self.session(id)?.frame(timestamp)?.to_png()?)
    }

    pub fn subscribe(&self, id: &str) -> Result<broadcast::Receiver<SessionEvent>, SessionError> {
        Ok(self.session(id)?.subscribe())
    }

    /// Ungated actions run now and return their step; gated ones return a
    /// pending confirmation request.
    pub fn submit_action(&self, id: &str, action: Action) -> Result<Submitted, SessionError> {
        let s = self.session(id)?;
        s.validate(&action)?;
        s.acquire(false)?;
        if s.gating.requires_confirmation(&action) {
            let request = self.shared.open_request(&s, &action);
            return Ok(Submitted::Pending { request });
        }
        let step = s.perform(&action, None, self.shared.config.first_frame_timeout);
        s.release();
        Ok(Submitted::Executed { step: step? })
    }

    pub fn confirmation(&self, request_id: &str) -> Result<ConfirmationRequest, SessionError> {
        self.shared
            .book
            .get(request_id)
            .ok_or_else(|| ConfirmError::UnknownRequest(request_id.to_string()).into())
    }

    /// Resolves a pending request at most once. Approval executes the action
    /// here; rejection discards it and stores the note as human feedback.
    pub fn resolve_confirmation(
        &self,
        request_id: &str,
        decision: Decision,
        note: Option<String>,
    ) -> Result<ResolveOutcome, SessionError> {
        let note = note.filter(|n| !n.trim().is_empty());
        match self.shared.book.resolve(request_id, decision, note)? {
            Resolved::Approved { request, approval } => {
                let s = self.session(&request.session_id)?;
                s.record(&LogRecord::Confirmation {
                    request: request.clone(),
                });
                s.emit(SessionEvent::ConfirmationResolved {
                    request: request.clone(),
                });
                let step =
                    s.perform(&request.action, Some(approval), self.shared.config.first_frame_timeout);
                match &step {
                    Ok(step) => s.settle(&request.id, Outcome::Executed(step.clone())),
                    Err(e) => s.settle(&request.id, Outcome::Failed(e.to_string())),
                }
                Ok(ResolveOutcome::Executed { step: step? })
            }
            Resolved::Rejected(request) => {
                let s = self.session(&request.session_id)?;
                s.record(&LogRecord::Confirmation {
                    request: request.clone(),
                });
                s.emit(SessionEvent::ConfirmationResolved {
                    request: request.clone(),
                });
                let text = match &request.note {
                    Some(n) => format!("rejected {}: {n}", request.action.kind()),
                    None => format!("rejected {}", request.action.kind()),
                };
                let feedback = FeedbackRecord::new(&s.id, None, text, FeedbackSource::Human)?;
                let stored = s.add_feedback(feedback.clone());
                s.settle(&request.id, Outcome::Rejected);
                stored?;
                Ok(ResolveOutcome::Rejected { request, feedback })
            }
        }
    }

    /// Persists the record before returning. Works on closed sessions too.
    pub fn submit_feedback(
        &self,
        id: &str,
        text: &str,
        source: FeedbackSource,
        step: Option<u64>,
    ) -> Result<FeedbackRecord, SessionError> {
        let s = self.session(id)?;
        let record = FeedbackRecord::new(id, step, text, source)?;
        s.add_feedback(record.clone())?;
        Ok(record)
    }

    /// Stops capture, rejects pending requests and saves the trajectory.
    pub fn close_session(&self, id: &str) -> Result<SessionInfo, SessionError> {
        let s = self.session(id)?;
        {
            let mut state = lock(&s.state);
            if *state != SessionState::Live {
                drop(state);
                return self.info(id);
            }
            *state = SessionState::Closed;
        }
        s.set_state_logged(SessionState::Closed);
        for req in self.shared.book.pending_for(id) {
            if let Ok(Resolved::Rejected(r)) =
                self.shared
                    .book
                    .resolve(&req.id, Decision::Reject, Some("session closed".into()))
            {
                s.record(&LogRecord::Confirmation { request: r.clone() });
                s.emit(SessionEvent::ConfirmationResolved { request: r });
                s.settle(&req.id, Outcome::Rejected);
            }
        }
        if let Some(live) = &s.live {
            live.recorder.stop();
            if let Err(e) = s.bundle().and_then(|b| Ok(b.write(&s.dir.join("bundle"))?)) {
                ::log::error!("session {id}: could not save trajectory: {e}");
            }
        }
        self.info(id)
    }

    /// Closes every live session.
    pub fn shutdown(&self) {
        for info in self.list_sessions() {
            if info.state == SessionState::Live {
                let _ = self.close_session(&info.id);
            }
        }
    }

    pub fn tasks(&self) -> &[Task] {
        &self.shared.config.tasks
    }

    pub fn run_task(&self, id: &str, req: RunRequest) -> Result<RunInfo, SessionError> {
        let task = self
            .tasks()
            .iter()
            .find(|t| t.id == req.task_id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownTask(req.task_id.clone()))?;
        if req.policy == RunPolicy::Scripted && self.shared.config.solutions.is_empty() {
            return Err(SessionError::NoSolutions);
        }
        let s = self.session(id)?;
        s.live()?;
        let run_id = new_id();
        {
            let mut inner = lock(&s.inner);
            if inner.run.is_some() || inner.inflight != Inflight::Idle {
                return Err(SessionError::SessionBusy(id.to_string()));
            }
            inner.run = Some((run_id.clone(), req.policy));
        }
        // Reset before returning so an external agent never acts on a stale
        // sandbox; actions from here on belong to the run.
        if let Err(e) = reset(&task, s.sandbox()) {
            lock(&s.inner).run = None;
            return Err(e.into());
        }
        let start = s.step_count();
        let info = RunInfo {
            id: run_id.clone(),
            session_id: id.to_string(),
            task_id: task.id.clone(),
            policy: req.policy,
            status: RunStatus::Running,
            started_at: Utc::now(),
            finished_at: None,
            summary: None,
            verdict: None,
            trajectory: None,
            error: None,
        };
        self.shared
            .runs
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(run_id.clone(), Arc::new(Mutex::new(info.clone())));
        let shared = self.shared.clone();
        let thread_info = info.clone();
        let spawned = std::thread::Builder::new()
            .name(format!("run-{}", &run_id[..8]))
            .spawn(move || run::drive(shared, s, task, thread_info, start));
        if let Err(e) = spawned {
            let s = self.session(id)?;
            lock(&s.inner).run = None;
            return Err(e.into());
        }
        Ok(info)
    }

    pub fn run(&self, run_id: &str) -> Result<RunInfo, SessionError> {
        self.shared
            .runs
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(run_id)
            .map(|r| lock(r).clone())
            .ok_or_else(|| SessionError::UnknownRun(run_id.to_string()))
    }

    /// Polls until the run leaves the running state or `timeout` passes.
    pub fn wait_run(&self, run_id: &str, timeout: Duration) -> Result<RunInfo, SessionError> {
        let deadline = Instant::now() + timeout;
        loop {
            let info = self.run(run_id)?;
            if info.status != RunStatus::Running || Instant::now() >= deadline {
                return Ok(info);
            }
            std::thread::sleep(Duration::from_millis(10));
        }
    }

    /// The session's whole trajectory so far.
    pub fn trajectory(&self, id: &str) -> Result<TrajectoryBundle, SessionError> {
        self.session(id)?.bundle()
    }

    /// The session trajectory as a tar archive rooted at `<session id>/`.
    pub fn trajectory_tar(&self, id: &str) -> Result<Vec<u8>, SessionError> {
        let s = self.session(id)?;
        let bundle = s.bundle()?;
        let tmp = s.dir.join("exports").join(new_id());
        let result = bundle
            .write(&tmp)
            .map_err(SessionError::from)
            .and_then(|_| Ok(write_tar(&tmp, id, Vec::new())?));
        let _ = std::fs::remove_dir_all(&tmp);
        result
    }

    /// Saves the annotated frame next to the dataset and appends the record
    /// to `<data root>/grounding/annotations.jsonl`.
    pub fn annotate(&self, id: &str, req: AnnotationRequest) -> Result<GroundingSample, SessionError> {
        let s = self.session(id)?;
        let frame = match req.frame {
            Some(ts) => s.frame(ts)?,
            None => s.wait_screenshot(Duration::ZERO)?,
        };
        let file = format!("{}-{}", id, frame_file_name(frame.timestamp));
        let sample = GroundingSample {
            schema_version: crate::grounding::DATASET_SCHEMA_VERSION,
            id: new_id(),
            instruction: req.instruction,
            screenshot: ScreenshotRef {
                path: format!("screens/{file}"),
                width: frame.width as u32,
                height: frame.height as u32,
            },
            action: AnnotatedClick {
                bbox: req.bbox,
                click_type: req.click_type,
            },
            platform: req.platform,
            application: req.application,
        };
        sample.validate(0)?;
        let root = self.shared.config.data_root.join("grounding");
        let _guard = lock(&self.shared.annotations);
        std::fs::create_dir_all(root.join("screens"))?;
        let png = root.join("screens").join(&file);
        if !png.exists() {
            std::fs::write(&png, encode_png(frame.width, frame.height, &frame.pixels)?)?;
        }
        append_sample(&root.join("annotations.jsonl"), &sample)?;
        Ok(sample)
    }

    /// Path of the dataset `annotate` appends to.
    pub fn annotations_path(&self) -> PathBuf {
        self.shared.config.data_root.join("grounding/annotations.jsonl")
    }
}

fn restore_sessions(root: &Path) -> Result<HashMap<String, Arc<Session>>, SessionError> {
    let mut out = HashMap::new();
    for entry in std::fs::read_dir(root.join("sessions"))? {
        let dir = entry?.path();
        let path = dir.join("events.jsonl");
        if !path.is_file() {
            continue;
        }
        let records = read_log(&path)?;
        let Some(LogRecord::Created {
            session_id,
            target,
            gating,
            created_at,
        }) = records.first().cloned()
        else {
            ::log::warn!("{}: no creation record, skipped", path.display());
            continue;
        };
        let mut state = SessionState::Closed;
        let mut steps: Vec<Step> = Vec::new();
        let mut feedback = Vec::new();
        for r in records {
            match r {
                LogRecord::State { state: s, .. } => state = s,
                LogRecord::Step { step } => steps.push(step),
                LogRecord::Feedback { record } => feedback.push(record),
                _ => {}
            }
        }
        if matches!(state, SessionState::Live | SessionState::Connecting) {
            state = SessionState::Closed;
        }
        let inner = Session::new_inner();
        {
            let mut i = lock(&inner);
            i.steps = steps;
            i.feedback = feedback;
        }
        let session = Session {
            id: session_id.clone(),
            target,
            gating,
            created_at,
            clock: Clock::new(),
            state: Mutex::new(state),
            live: None,
            inner,
            cond: Condvar::new(),
            log: EventLog::open(&path)?,
            events: broadcast::channel(16).0,
            sandbox: dir.join("sandbox"),
            dir,
        };
        out.insert(session_id, Arc::new(session));
    }
    Ok(out)
}

fn restore_runs(root: &Path) -> Result<HashMap<String, Arc<Mutex<RunInfo>>>, SessionError> {
    let mut out = HashMap::new();
    for entry in std::fs::read_dir(root.join("runs"))? {
        let path = entry?.path().join("run.json");
        let Ok(bytes) = std::fs::read(&path) else {
            continue;
        };
        match serde_json::from_slice::<RunInfo>(&bytes) {
            Ok(mut info) => {
                if info.status == RunStatus::Running {
                    info.status = RunStatus::Failed;
                    info.error = Some("interrupted by restart".into());
                }
                out.insert(info.id.clone(), Arc::new(Mutex::new(info)));
            }
            Err(e) => ::log::warn!("{}: {e}", path.display()),
        }
    }
    Ok(out)
}
