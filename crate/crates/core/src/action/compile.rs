use super::engine::EngineConfig;
use super::keymap::{char_to_keysym, key_name_to_keysym};
use super::{Action, ActionError, Point};
use crate::rfb::InputEvent;

/// One interpolated drag move per this many pixels of travel.
pub const DRAG_STEP_PX: f64 = 16.0;

const LEFT: u8 = 1;
const RIGHT: u8 = 1 << 2;
const WHEEL_UP: u8 = 1 << 3;
const WHEEL_DOWN: u8 = 1 << 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimedEvent {
    pub event: InputEvent,
    pub delay_before_ms: u64,
}

#[derive(Clone, Copy)]
enum Gap {
    Event,
    DoubleClick,
}

/// Pure planning step: the event sequence for a GUI action on a `width` x `height` screen.
pub fn compile(action: &Action, width: u16, height: u16) -> Result<Vec<InputEvent>, ActionError> {
    Ok(plan(action, width, height)?.into_iter().map(|(e, _)| e).collect())
}

/// Like [`compile`], with the configured pause before each event.
pub fn compile_timed(
    action: &Action,
    width: u16,
    height: u16,
    config: &EngineConfig,
) -> Result<Vec<TimedEvent>, ActionError> {
    Ok(plan(action, width, height)?
        .into_iter()
        .enumerate()
        .map(|(i, (event, gap))| TimedEvent {
            event,
            delay_before_ms: match (i, gap) {
                (0, _) => 0,
                (_, Gap::Event) => config.event_delay_ms,
                (_, Gap::DoubleClick) => config.double_click_gap_ms,
            },
        })
        .collect())
}

fn screen_point(p: Point, width: u16, height: u16) -> Result<(u16, u16), ActionError> {
    if p.x < 0 || p.y < 0 || p.x >= width as i64 || p.y >= height as i64 {
        return Err(ActionError::OutOfBounds {
            x: p.x,
            y: p.y,
            width,
            height,
        });
    }
    Ok((p.x as u16, p.y as u16))
}

/// Intermediate points strictly between `start` and `end`, one per 16 px of distance.
pub fn drag_path(start: Point, end: Point) -> Vec<Point> {
    let dx = (end.x - start.x) as f64;
    let dy = (end.y - start.y) as f64;
    let steps = (dx.hypot(dy) / DRAG_STEP_PX).floor() as i64;
    (1..=steps)
        .map(|i| {
            let t = i as f64 / (steps + 1) as f64;
            Point::new(
                start.x + (dx * t).round() as i64,
                start.y + (dy * t).round() as i64,
            )
        })
        .collect()
}

fn plan(action: &Action, width: u16, height: u16) -> Result<Vec<(InputEvent, Gap)>, ActionError> {
    let ev = |e: InputEvent| (e, Gap::Event);
    let mut out = Vec::new();
    match action {
        Action::Move { point } => {
            let (x, y) = screen_point(*point, width, height)?;
            out.push(ev(InputEvent::pointer(x, y, 0)));
        }
        Action::Click { point } | Action::RightClick { point } => {
            let (x, y) = screen_point(*point, width, height)?;
            let button = if matches!(action, Action::RightClick { .. }) {
                RIGHT
            } else {
                LEFT
            };
            out.push(ev(InputEvent::pointer(x, y, 0)));
            out.push(ev(InputEvent::pointer(x, y, button)));
            out.push(ev(InputEvent::pointer(x, y, 0)));
        }
        Action::DoubleClick { point } => {
            let (x, y) = screen_point(*point, width, height)?;
            out.push(ev(InputEvent::pointer(x, y, 0)));
            out.push(ev(InputEvent::pointer(x, y, LEFT)));
            out.push(ev(InputEvent::pointer(x, y, 0)));
            out.push((InputEvent::pointer(x, y, LEFT), Gap::DoubleClick));
            out.push(ev(InputEvent::pointer(x, y, 0)));
        }
        Action::Drag { point, end_point } => {
            let (sx, sy) = screen_point(*point, width, height)?;
            let (ex, ey) = screen_point(*end_point, width, height)?;
            out.push(ev(InputEvent::pointer(sx, sy, LEFT)));
            for p in drag_path(*point, *end_point) {
                out.push(ev(InputEvent::pointer(p.x as u16, p.y as u16, LEFT)));
            }
            out.push(ev(InputEvent::pointer(ex, ey, 0)));
        }
        Action::Scroll { point, amount } => {
            let (x, y) = screen_point(*point, width, height)?;
            let wheel = if *amount < 0 { WHEEL_UP } else { WHEEL_DOWN };
            out.push(ev(InputEvent::pointer(x, y, 0)));
            for _ in 0..amount.unsigned_abs() {
                out.push(ev(InputEvent::pointer(x, y, wheel)));
                out.push(ev(InputEvent::pointer(x, y, 0)));
            }
        }
        Action::KeyChord { keys } => {
            if keys.is_empty() {
                return Err(ActionError::Invalid("key_chord needs at least one key".into()));
            }
            let syms = keys
                .iter()
                .map(|k| key_name_to_keysym(k))
                .collect::<Result<Vec<_>, _>>()?;
            out.extend(syms.iter().map(|&k| ev(InputEvent::key(k, true))));
            out.extend(syms.iter().rev().map(|&k| ev(InputEvent::key(k, false))));
        }
        Action::TypeText { text } => {
            let syms = text.chars().map(char_to_keysym).collect::<Result<Vec<_>, _>>()?;
            for k in syms {
                out.push(ev(InputEvent::key(k, true)));
                out.push(ev(InputEvent::key(k, false)));
            }
        }
        Action::Wait { .. } | Action::ExecCommand { .. } | Action::InvokeTool { .. } => {
            return Err(ActionError::NotCompilable(action.kind()));
        }
    }
    Ok(out)
}
