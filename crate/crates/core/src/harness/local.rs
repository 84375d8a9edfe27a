use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use super::{
    reset, run_episode, summarize, EpisodeEnv, EpisodeSummary, Executed, HarnessError, Observation,
    Policy, Task,
};
use crate::action::{Action, ActionEngine, ActionResult, CommandRunner, EngineConfig, GatingMode};
use crate::clock::Clock;
use crate::recorder::{Frame, Recorder, RecorderConfig, TrajectoryBundle};
use crate::rfb::{connect_with, ConnectOptions, MockDesktop, Scenario};

const FIRST_FRAME_TIMEOUT: Duration = Duration::from_secs(5);

/// An in-process environment: one RFB connection with a recorder, an
/// ungated action engine, and a sandbox directory for commands. Used for
/// offline benchmark runs; served sessions go through the session manager.
pub struct LocalEnv {
    recorder: Recorder,
    engine: ActionEngine,
    sandbox: PathBuf,
    window: usize,
    last_output: Option<String>,
    // Dropped last, after the recorder has stopped reading from it.
    _mock: Option<MockDesktop>,
}

fn env_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Env(e.to_string())
}

impl LocalEnv {
    /// Starts a mock desktop for `scenario` and attaches to it.
    pub fn launch(scenario: Scenario, sandbox: &Path, work: &Path) -> Result<Self, HarnessError> {
        let mock = MockDesktop::start(scenario)?;
        let mut env = Self::connect("127.0.0.1", mock.port(), None, sandbox, work)?;
        env._mock = Some(mock);
        Ok(env)
    }

    pub fn connect(
        host: &str,
        port: u16,
        password: Option<&str>,
        sandbox: &Path,
        work: &Path,
    ) -> Result<Self, HarnessError> {
        std::fs::create_dir_all(sandbox)?;
        let clock = Clock::new();
        let opts = ConnectOptions {
            password: password.map(str::to_string),
            ..ConnectOptions::default()
        };
        let conn = connect_with(host, port, &opts).map_err(env_err)?;
        let recorder = Recorder::new(RecorderConfig::new(work.join("frames")), clock).map_err(env_err)?;
        let input = recorder.start_connection(conn).map_err(env_err)?;
        let engine = ActionEngine::new(Box::new(input), CommandRunner::new(sandbox), clock)
            .with_config(EngineConfig {
                event_delay_ms: 2,
                double_click_gap_ms: 50,
                ..EngineConfig::default()
            })
            .with_gating(GatingMode::Off);
        Ok(LocalEnv {
            _mock: None,
            recorder,
            engine,
            sandbox: sandbox.to_path_buf(),
            window: 8,
            last_output: None,
        })
    }

    pub fn recorder(&self) -> &Recorder {
        &self.recorder
    }
}

impl EpisodeEnv for LocalEnv {
    fn observe(&mut self) -> Result<Observation, HarnessError> {
        let deadline = Instant::now() + FIRST_FRAME_TIMEOUT;
        let shot = loop {
            match self.recorder.get_screenshot() {
                Ok(f) => break f,
                Err(_) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(5)),
                Err(e) => return Err(env_err(e)),
            }
        };
        Ok(Observation {
            screenshot: shot.meta(),
            frames: self.recorder.latest(self.window).iter().map(Frame::meta).collect(),
            last_output: self.last_output.clone(),
        })
    }

    fn execute(&mut self, action: &Action) -> Result<Executed, HarnessError> {
        let result = match self.engine.execute(action, None) {
            Ok(r) => r,
            Err(e) => {
                let now = self.recorder.clock().now_ms();
                ActionResult {
                    ok: false,
                    output: String::new(),
                    error: Some(e.to_string()),
                    started_ms: now,
                    finished_ms: now,
                    events_emitted: 0,
                }
            }
        };
        if action.is_host_execution() {
            self.last_output = Some(result.output.clone());
        }
        Ok(Executed {
            result,
            approval: None,
        })
    }

    fn frames(&self) -> Result<Vec<Frame>, HarnessError> {
        self.recorder.all_frames().map_err(env_err)
    }

    fn sandbox(&self) -> &Path {
        &self.sandbox
    }
}

/// Runs each task in a fresh sandbox under `work/<task id>` against its own
/// mock desktop: reset, episode, evaluation.
pub fn run_local_suite(
    tasks: &[Task],
    scenario: &Scenario,
    policy: &mut dyn Policy,
    work: &Path,
) -> Result<Vec<(EpisodeSummary, TrajectoryBundle)>, HarnessError> {
    let mut out = Vec::with_capacity(tasks.len());
    for task in tasks {
        let dir = work.join(&task.id);
        let sandbox = dir.join("sandbox");
        std::fs::create_dir_all(&sandbox)?;
        reset(task, &sandbox)?;
        let mut env = LocalEnv::launch(scenario.clone(), &sandbox, &dir)?;
        let bundle = run_episode(task, &mut env, policy)?;
        out.push((summarize(task, &bundle), bundle));
    }
    Ok(out)
}
