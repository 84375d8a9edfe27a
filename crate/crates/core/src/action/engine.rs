use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::compile::compile_timed;
use super::exec::{CommandOutput, CommandRunner};
use super::gate::{Approval, AuditLog, AuditRecord, GatingMode};
use super::{Action, ActionError};
use crate::clock::Clock;
use crate::rfb::{InputEvent, InputWriter, RfbError};
use crate::tools::{ToolError, ToolLibrary};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub event_delay_ms: u64,
    pub double_click_gap_ms: u64,
    pub command_timeout_ms: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            event_delay_ms: 25,
            double_click_gap_ms: 120,
            command_timeout_ms: 60_000,
        }
    }
}

impl EngineConfig {
    /// No pauses between events; for tests and offline replay.
    pub fn immediate() -> Self {
        EngineConfig {
            event_delay_ms: 0,
            double_click_gap_ms: 0,
            ..Self::default()
        }
    }
}

/// Where compiled input events go.
pub trait InputSink: Send {
    fn send(&mut self, event: &InputEvent) -> Result<(), RfbError>;
    fn screen_size(&self) -> (u16, u16);
}

impl InputSink for InputWriter {
    fn send(&mut self, event: &InputEvent) -> Result<(), RfbError> {
        InputWriter::send(self, event)
    }

    fn screen_size(&self) -> (u16, u16) {
        InputWriter::screen_size(self)
    }
}

/// Collects events in memory; clones share the same buffer.
#[derive(Debug, Clone)]
pub struct RecordingSink {
    events: Arc<Mutex<Vec<InputEvent>>>,
    width: u16,
    height: u16,
}

impl RecordingSink {
    pub fn new(width: u16, height: u16) -> Self {
        RecordingSink {
            events: Arc::default(),
            width,
            height,
        }
    }

    pub fn events(&self) -> Vec<InputEvent> {
        self.events.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}

impl InputSink for RecordingSink {
    fn send(&mut self, event: &InputEvent) -> Result<(), RfbError> {
        event.check_bounds(self.width, self.height)?;
        self.events.lock().unwrap_or_else(|p| p.into_inner()).push(*event);
        Ok(())
    }

    fn screen_size(&self) -> (u16, u16) {
        (self.width, self.height)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionResult {
    pub ok: bool,
    pub output: String,
    pub error: Option<String>,
    pub started_ms: u64,
    pub finished_ms: u64,
    pub events_emitted: u32,
}

enum Prepared {
    Wait(u64),
    Host(String),
    Events(Vec<super::compile::TimedEvent>),
}

pub struct ActionEngine {
    config: EngineConfig,
    sink: Box<dyn InputSink>,
    runner: CommandRunner,
    tools: Option<Arc<ToolLibrary>>,
    gating: GatingMode,
    audit: AuditLog,
    clock: Clock,
    session_id: Option<String>,
}

impl ActionEngine {
    pub fn new(sink: Box<dyn InputSink>, runner: CommandRunner, clock: Clock) -> Self {
        ActionEngine {
            config: EngineConfig::default(),
            sink,
            runner,
            tools: None,
            gating: GatingMode::default(),
            audit: AuditLog::new(),
            clock,
            session_id: None,
        }
    }

    pub fn with_config(mut self, config: EngineConfig) -> Self {
        self.runner = self
            .runner
            .with_timeout(Duration::from_millis(config.command_timeout_ms));
        self.config = config;
        self
    }

    pub fn with_tools(mut self, tools: Arc<ToolLibrary>) -> Self {
        self.tools = Some(tools);
        self
    }

    pub fn with_gating(mut self, gating: GatingMode) -> Self {
        self.gating = gating;
        self
    }

    pub fn with_audit(mut self, audit: AuditLog) -> Self {
        self.audit = audit;
        self
    }

    pub fn with_session(mut self, session_id: impl Into<String>) -> Self {
        self.session_id = Some(session_id.into());
        self
    }

    pub fn gating(&self) -> GatingMode {
        self.gating
    }

    pub fn screen_size(&self) -> (u16, u16) {
        self.sink.screen_size()
    }

    pub fn runner(&self) -> &CommandRunner {
        &self.runner
    }

    /// Checks an action can run here without running it: GUI actions compile,
    /// tool calls resolve and validate. Invalid actions fail before gating.
    pub fn validate(&self, action: &Action) -> Result<(), ActionError> {
        self.prepare(action).map(|_| ())
    }

    fn prepare(&self, action: &Action) -> Result<Prepared, ActionError> {
        Ok(match action {
            Action::Wait { duration_ms } => Prepared::Wait(*duration_ms),
            Action::ExecCommand { command } => Prepared::Host(command.clone()),
            Action::InvokeTool { tool } => {
                let library = self
                    .tools
                    .as_ref()
                    .ok_or_else(|| ToolError::UnknownTool(tool.name.clone()))?;
                Prepared::Host(library.render_command(&tool.name, &tool.args)?)
            }
            _ => {
                let (width, height) = self.sink.screen_size();
                Prepared::Events(compile_timed(action, width, height, &self.config)?)
            }
        })
    }

    /// Executes one action. Gated actions need an approval issued for this exact
    /// action; it is consumed whether or not execution succeeds.
    pub fn execute(
        &mut self,
        action: &Action,
        approval: Option<Approval>,
    ) -> Result<ActionResult, ActionError> {
        let prepared = self.prepare(action)?;
        let gated = self.gating.requires_confirmation(action);
        let approval_id = match (&approval, gated) {
            (Some(a), _) if a.covers(action) => Some(a.request_id().to_string()),
            (_, true) => return Err(ActionError::ConfirmationRequired),
            (_, false) => None,
        };

        let started_ms = self.clock.now_ms();
        let mut result = ActionResult {
            ok: true,
            output: String::new(),
            error: None,
            started_ms,
            finished_ms: started_ms,
            events_emitted: 0,
        };
        let outcome = match prepared {
            Prepared::Wait(ms) => {
                thread::sleep(Duration::from_millis(ms));
                Ok(())
            }
            Prepared::Host(command) => {
                self.run_host(&command, &mut result);
                Ok(())
            }
            Prepared::Events(plan) => plan.into_iter().try_for_each(|step| {
                if step.delay_before_ms > 0 {
                    thread::sleep(Duration::from_millis(step.delay_before_ms));
                }
                self.sink.send(&step.event)?;
                result.events_emitted += 1;
                Ok::<_, RfbError>(())
            }),
        };
        result.finished_ms = self.clock.now_ms().max(started_ms);

        if action.is_host_execution() || gated || approval_id.is_some() {
            self.audit.append(AuditRecord::Executed {
                session_id: self.session_id.clone(),
                action_kind: action.kind().to_string(),
                gated,
                approval: approval_id,
                ok: result.ok && outcome.is_ok(),
            });
        }
        outcome?;
        Ok(result)
    }

    /// Convenience for `invoke_tool` with a JSON argument map.
    pub fn invoke_tool(
        &mut self,
        name: &str,
        args: serde_json::Map<String, serde_json::Value>,
        approval: Option<Approval>,
    ) -> Result<ActionResult, ActionError> {
        let action = Action::InvokeTool {
            tool: super::ToolCall {
                name: name.to_string(),
                args,
            },
        };
        self.execute(&action, approval)
    }

    fn run_host(&self, command: &str, result: &mut ActionResult) {
        match self.runner.run(command) {
            Ok(CommandOutput {
                output,
                exit_code,
                timed_out,
            }) => {
                result.output = output;
                if timed_out {
                    result.ok = false;
                    result.error = Some("command timed out".into());
                } else if exit_code != Some(0) {
                    result.ok = false;
                    result.error = Some(match exit_code {
                        Some(code) => format!("command failed with exit status {code}"),
                        None => "command terminated by signal".into(),
                    });
                }
            }
            Err(e) => {
                result.ok = false;
                result.error = Some(format!("could not start command: {e}"));
            }
        }
    }
}
