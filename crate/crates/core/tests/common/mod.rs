#![allow(dead_code)]

pub mod rig;

use std::path::PathBuf;

use rand::rngs::StdRng;
use rand::Rng;
use vdesk_core::rfb::mock::{Direction, Rgb, ScriptRect, ScriptedUpdate, TranscriptEntry};
use vdesk_core::rfb::Scenario;
use chrono::{TimeZone, Utc};
use vdesk_core::action::{Action, ActionResult, Point};
use vdesk_core::feedback::{FeedbackRecord, FeedbackSource};
use vdesk_core::recorder::{BundleMetadata, CheckResult, Frame, Step, TrajectoryBundle, Verdict};

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(rel)
}

/// Parses a golden transcript: `S <hex...>` / `C <hex...>` lines, `#` comments.
pub fn load_golden(name: &str) -> Vec<TranscriptEntry> {
    let text = std::fs::read_to_string(fixture(&format!("tests/golden/{name}"))).unwrap();
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let (dir, hex) = l.split_at(1);
            let dir = match dir {
                "S" => Direction::S,
                "C" => Direction::C,
                other => panic!("bad direction {other}"),
            };
            let hex: String = hex.split_whitespace().collect();
            TranscriptEntry {
                dir,
                bytes: hex::decode(hex).unwrap(),
            }
        })
        .collect()
}

/// Pixel-by-pixel reference model of a framebuffer driven by scripted rects.
pub struct BruteForceScreen {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<Vec<[u8; 4]>>,
}

impl BruteForceScreen {
    pub fn new(width: usize, height: usize, bg: [u8; 4]) -> Self {
        BruteForceScreen {
            width,
            height,
            cells: vec![vec![bg; width]; height],
        }
    }

    pub fn apply(&mut self, r: &ScriptRect) {
        match r {
            ScriptRect::Fill { x, y, w, h, color } => {
                for j in 0..*h as usize {
                    for i in 0..*w as usize {
                        self.cells[*y as usize + j][*x as usize + i] = color.rgba();
                    }
                }
            }
            ScriptRect::Pixels { x, y, w, h, colors } => {
                let mut k = 0;
                for j in 0..*h as usize {
                    for i in 0..*w as usize {
                        self.cells[*y as usize + j][*x as usize + i] = colors[k].rgba();
                        k += 1;
                    }
                }
            }
            ScriptRect::Copy {
                x,
                y,
                w,
                h,
                src_x,
                src_y,
            } => {
                let mut snapshot = Vec::new();
                for j in 0..*h as usize {
                    for i in 0..*w as usize {
                        snapshot.push(self.cells[*src_y as usize + j][*src_x as usize + i]);
                    }
                }
                let mut k = 0;
                for j in 0..*h as usize {
                    for i in 0..*w as usize {
                        self.cells[*y as usize + j][*x as usize + i] = snapshot[k];
                        k += 1;
                    }
                }
            }
        }
    }

    pub fn to_rgba(&self) -> Vec<u8> {
        self.cells.iter().flatten().flatten().copied().collect()
    }
}

fn random_color(rng: &mut StdRng) -> Rgb {
    Rgb([rng.random(), rng.random(), rng.random()])
}

pub fn random_rect(rng: &mut StdRng, width: u16, height: u16) -> ScriptRect {
    let w = rng.random_range(1..=width);
    let h = rng.random_range(1..=height);
    let x = rng.random_range(0..=width - w);
    let y = rng.random_range(0..=height - h);
    match rng.random_range(0..3) {
        0 => ScriptRect::Fill {
            x,
            y,
            w,
            h,
            color: random_color(rng),
        },
        1 => {
            // keep explicit pixel tiles small
            let w = w.min(8);
            let h = h.min(8);
            ScriptRect::Pixels {
                x,
                y,
                w,
                h,
                colors: (0..w as usize * h as usize).map(|_| random_color(rng)).collect(),
            }
        }
        _ => ScriptRect::Copy {
            x,
            y,
            w,
            h,
            src_x: rng.random_range(0..=width - w),
            src_y: rng.random_range(0..=height - h),
        },
    }
}

/// A scenario of on-demand updates on a screen of at most 64x64.
pub fn random_scenario(rng: &mut StdRng) -> Scenario {
    let width = rng.random_range(1..=64);
    let height = rng.random_range(1..=64);
    let mut sc = Scenario::new(width, height);
    sc.background = random_color(rng);
    sc.native_format = ["bgrx8888", "rgba8888", "rgb565"][rng.random_range(0..3)].into();
    let n = rng.random_range(1..=8);
    sc.updates = (0..n)
        .map(|_| ScriptedUpdate {
            at_ms: None,
            rects: (0..rng.random_range(0..=4))
                .map(|_| random_rect(rng, width, height))
                .collect(),
        })
        .collect();
    sc
}

pub fn simulate(sc: &Scenario) -> Vec<u8> {
    let mut screen = BruteForceScreen::new(sc.width as usize, sc.height as usize, sc.background.rgba());
    for u in &sc.updates {
        for r in &u.rects {
            screen.apply(r);
        }
    }
    screen.to_rgba()
}

/// Plays one random scenario through the mock server and the client, then
/// compares the client framebuffer with the brute-force screen.
pub fn replay_random(seed: u64) -> Result<(), String> {
    use rand::SeedableRng;
    use vdesk_core::rfb::{connect, MockDesktop};
    let sc = random_scenario(&mut StdRng::seed_from_u64(seed));
    let expected = simulate(&sc);
    let n = sc.updates.len();
    let mock = MockDesktop::start(sc).map_err(|e| e.to_string())?;
    let mut conn = connect("127.0.0.1", mock.port(), None).map_err(|e| e.to_string())?;
    conn.request_update(false).map_err(|e| e.to_string())?;
    conn.next_update().map_err(|e| e.to_string())?;
    for _ in 0..n {
        conn.request_update(true).map_err(|e| e.to_string())?;
        conn.next_update().map_err(|e| e.to_string())?;
    }
    let got = conn.framebuffer().pixels();
    match got.iter().zip(&expected).position(|(a, b)| a != b) {
        None if got.len() == expected.len() => Ok(()),
        None => Err(format!("seed {seed}: size {} != {}", got.len(), expected.len())),
        Some(i) => Err(format!("seed {seed}: first difference at byte {i}")),
    }
}

pub fn wait_until(timeout_ms: u64, mut cond: impl FnMut() -> bool) -> bool {
    let deadline = std::time::Instant::now() + std::time::Duration::from_millis(timeout_ms);
    while std::time::Instant::now() < deadline {
        if cond() {
            return true;
        }
        std::thread::sleep(std::time::Duration::from_millis(5));
    }
    cond()
}

fn random_text(rng: &mut StdRng) -> String {
    const POOL: &[&str] = &["a", "Z", " ", "\"", "\n", "é", "漢", "{", "\\", "0", "🙂", "tab\t"];
    (0..rng.random_range(0..8))
        .map(|_| POOL[rng.random_range(0..POOL.len())])
        .collect()
}

fn random_action(rng: &mut StdRng) -> Action {
    let p = Point::new(rng.random_range(0..64), rng.random_range(0..64));
    match rng.random_range(0..6) {
        0 => Action::Click { point: p },
        1 => Action::Drag {
            point: p,
            end_point: Point::new(rng.random_range(0..64), rng.random_range(0..64)),
        },
        2 => Action::TypeText { text: random_text(rng) },
        3 => Action::KeyChord {
            keys: vec!["ctrl".into(), "s".into()],
        },
        4 => Action::ExecCommand { command: random_text(rng) },
        _ => Action::Wait {
            duration_ms: rng.random_range(0..1000),
        },
    }
}

/// A structurally valid bundle with tiny frames and arbitrary text fields.
pub fn random_bundle(rng: &mut StdRng) -> TrajectoryBundle {
    let mut ts = rng.random_range(0..1000u64);
    let mut generation = rng.random_range(0..10u64);
    let frames: Vec<Frame> = (0..rng.random_range(1..=5))
        .map(|_| {
            ts += rng.random_range(1..200);
            generation += rng.random_range(1..5);
            let (w, h) = (rng.random_range(1..=4u16), rng.random_range(1..=4u16));
            let px = (0..w as usize * h as usize * 4).map(|_| rng.random()).collect();
            Frame::new(ts, generation, w, h, px)
        })
        .collect();
    let steps = (0..rng.random_range(0..6u64))
        .map(|index| {
            let obs = frames[rng.random_range(0..frames.len())].timestamp;
            let started = obs + rng.random_range(0..50);
            Step {
                index,
                observation_ref: obs,
                action: random_action(rng),
                result: ActionResult {
                    ok: rng.random(),
                    output: random_text(rng),
                    error: rng.random_bool(0.3).then(|| random_text(rng)),
                    started_ms: started,
                    finished_ms: started + rng.random_range(0..100),
                    events_emitted: rng.random_range(0..10),
                },
                feedback: rng.random_bool(0.3).then(|| random_text(rng)),
                approval: rng.random_bool(0.2).then(vdesk_core::ids::new_id),
            }
        })
        .collect();
    let started_at = Utc
        .timestamp_opt(rng.random_range(0..2_000_000_000), rng.random_range(0..1_000_000_000))
        .unwrap();
    TrajectoryBundle {
        metadata: BundleMetadata {
            task_id: rng.random_bool(0.5).then(|| random_text(rng)),
            instruction: random_text(rng),
            platform: rng.random_bool(0.5).then(|| "linux".to_string()),
            application: rng.random_bool(0.5).then(|| random_text(rng)),
            session_id: rng.random_bool(0.5).then(vdesk_core::ids::new_id),
            started_at,
            budget_exhausted: rng.random(),
        },
        steps,
        frames,
        verdict: rng.random_bool(0.5).then(|| Verdict {
            success: rng.random(),
            feedback: random_text(rng),
            checks: (0..rng.random_range(0..3))
                .map(|_| CheckResult {
                    description: random_text(rng),
                    passed: rng.random(),
                })
                .collect(),
        }),
        feedback: (0..rng.random_range(0..3))
            .map(|_| FeedbackRecord {
                session_id: "s".into(),
                step: rng.random_bool(0.5).then(|| rng.random_range(0..10)),
                text: format!("x{}", random_text(rng)),
                source: [FeedbackSource::Human, FeedbackSource::Rule, FeedbackSource::Model]
                    [rng.random_range(0..3)],
                timestamp: started_at,
            })
            .collect(),
    }
}

/// A random GUI action whose points lie on a `width` x `height` screen.
pub fn random_gui_action(rng: &mut StdRng, width: u16, height: u16) -> Action {
    let mut p = || Point::new(rng.random_range(0..width as i64), rng.random_range(0..height as i64));
    let (a, b) = (p(), p());
    let names = vdesk_core::action::keymap();
    match rng.random_range(0..8) {
        0 => Action::Move { point: a },
        1 => Action::Click { point: a },
        2 => Action::DoubleClick { point: a },
        3 => Action::RightClick { point: a },
        4 => Action::Drag {
            point: a,
            end_point: b,
        },
        5 => Action::Scroll {
            point: a,
            amount: rng.random_range(-5..=5),
        },
        6 => Action::KeyChord {
            keys: (0..rng.random_range(1..=4))
                .map(|_| names[rng.random_range(0..names.len())].name.clone())
                .collect(),
        },
        _ => Action::TypeText {
            text: (0..rng.random_range(0..12))
                .map(|_| char::from(rng.random_range(b' '..=b'~')))
                .collect(),
        },
    }
}

/// Independent press/release bookkeeping: every button bit set must later be
/// cleared, every key down matched by a later key up, nothing released
/// before it was pressed.
pub fn check_balance(events: &[vdesk_core::rfb::InputEvent]) -> Result<(), String> {
    use vdesk_core::rfb::InputEvent;
    let mut mask = 0u8;
    let mut presses = [0usize; 8];
    let mut releases = [0usize; 8];
    let mut keys: std::collections::HashMap<u32, i64> = std::collections::HashMap::new();
    for (i, e) in events.iter().enumerate() {
        match *e {
            InputEvent::Pointer { mask: m, .. } => {
                for bit in 0..8 {
                    let (was, now) = (mask >> bit & 1, m >> bit & 1);
                    if was == 0 && now == 1 {
                        presses[bit] += 1;
                    }
                    if was == 1 && now == 0 {
                        releases[bit] += 1;
                    }
                }
                mask = m;
            }
            InputEvent::Key { keysym, down } => {
                let n = keys.entry(keysym).or_default();
                *n += if down { 1 } else { -1 };
                if *n < 0 {
                    return Err(format!("event {i}: key {keysym:#x} released while up"));
                }
            }
        }
    }
    if mask != 0 {
        return Err(format!("buttons {mask:#010b} still held"));
    }
    if presses != releases {
        return Err(format!("presses {presses:?} != releases {releases:?}"));
    }
    if let Some((k, n)) = keys.iter().find(|(_, n)| **n != 0) {
        return Err(format!("key {k:#x} held {n} times at the end"));
    }
    Ok(())
}
