//! The unified action language and its execution.
//!
//! GUI actions compile to pointer/key event sequences; `exec_command` and
//! `invoke_tool` run on the environment host behind the confirmation gate.

mod compile;
mod engine;
mod exec;
pub mod gate;
pub mod keymap;

use serde::{Deserialize, Serialize};

pub use compile::{compile, compile_timed, drag_path, TimedEvent, DRAG_STEP_PX};
pub use engine::{ActionEngine, ActionResult, EngineConfig, InputSink, RecordingSink};
pub use exec::{CommandOutput, CommandRunner};
pub use gate::{
    Approval, AuditLog, AuditRecord, ConfirmError, ConfirmationBook, ConfirmationRequest, GatingMode,
    Resolution,
};
pub use keymap::{char_to_keysym, key_name_to_keysym, keymap, KeymapEntry};

use crate::rfb::RfbError;
use crate::tools::ToolError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Point {
    pub x: i64,
    pub y: i64,
}

impl Point {
    pub const fn new(x: i64, y: i64) -> Self {
        Point { x, y }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolCall {
    pub name: String,
    #[serde(default)]
    pub args: serde_json::Map<String, serde_json::Value>,
}

/// One element of the action space, serialised with a `kind` discriminator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    Move { point: Point },
    Click { point: Point },
    DoubleClick { point: Point },
    RightClick { point: Point },
    Drag { point: Point, end_point: Point },
    /// Positive ticks scroll down (button 5), negative up (button 4).
    Scroll { point: Point, amount: i32 },
    KeyChord { keys: Vec<String> },
    TypeText { text: String },
    Wait { duration_ms: u64 },
    ExecCommand { command: String },
    InvokeTool { tool: ToolCall },
}

impl Action {
    pub fn kind(&self) -> &'static str {
        match self {
            Action::Move { .. } => "move",
            Action::Click { .. } => "click",
            Action::DoubleClick { .. } => "double_click",
            Action::RightClick { .. } => "right_click",
            Action::Drag { .. } => "drag",
            Action::Scroll { .. } => "scroll",
            Action::KeyChord { .. } => "key_chord",
            Action::TypeText { .. } => "type_text",
            Action::Wait { .. } => "wait",
            Action::ExecCommand { .. } => "exec_command",
            Action::InvokeTool { .. } => "invoke_tool",
        }
    }

    /// Host-side execution (commands and tools), as opposed to GUI input.
    pub fn is_host_execution(&self) -> bool {
        matches!(self, Action::ExecCommand { .. } | Action::InvokeTool { .. })
    }

    pub fn is_gui(&self) -> bool {
        !self.is_host_execution() && !matches!(self, Action::Wait { .. })
    }

    pub fn click(x: i64, y: i64) -> Self {
        Action::Click {
            point: Point::new(x, y),
        }
    }

    pub fn exec(command: impl Into<String>) -> Self {
        Action::ExecCommand {
            command: command.into(),
        }
    }

    pub fn wait(duration_ms: u64) -> Self {
        Action::Wait { duration_ms }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ActionError {
    #[error("point ({x}, {y}) outside {width}x{height} screen")]
    OutOfBounds {
        x: i64,
        y: i64,
        width: u16,
        height: u16,
    },
    #[error("no keysym for {0:?}")]
    UnmappedCharacter(String),
    #[error("action requires an approved confirmation")]
    ConfirmationRequired,
    #[error("{0} actions do not compile to input events")]
    NotCompilable(&'static str),
    #[error("invalid action: {0}")]
    Invalid(String),
    #[error(transparent)]
    Tool(#[from] ToolError),
    #[error("backend: {0}")]
    Backend(#[from] RfbError),
}
