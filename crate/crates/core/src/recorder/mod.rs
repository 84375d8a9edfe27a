//! Screen recording: a capture loop samples the framebuffer at a capped rate
//! into an in-memory ring, spilling evicted frames to disk as PNG.

mod bundle;
mod image;

use std::collections::VecDeque;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use bundle::{
    write_tar, BundleMetadata, CheckResult, FrameRecord, Step, TrajectoryBundle, Verdict, SCHEMA_VERSION,
};
pub use image::{decode_png, encode_png};

use crate::clock::Clock;
use crate::rfb::{Connection, Framebuffer, InputWriter, RfbError, UpdateStream};

#[derive(Debug, thiserror::Error)]
pub enum RecorderError {
    #[error("recorder is already running")]
    AlreadyRecording,
    #[error("no frames captured yet")]
    NoFrames,
    #[error("frame generation {got} does not follow {last}")]
    StaleGeneration { last: u64, got: u64 },
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("image: {0}")]
    Image(String),
    #[error(transparent)]
    Transport(#[from] RfbError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One captured screen. Pixels are RGBA8888, shared between clones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub timestamp: u64,
    pub generation: u64,
    pub width: u16,
    pub height: u16,
    pub pixels: Arc<[u8]>,
}

impl Frame {
    pub fn new(timestamp: u64, generation: u64, width: u16, height: u16, pixels: Vec<u8>) -> Self {
        Frame {
            timestamp,
            generation,
            width,
            height,
            pixels: pixels.into(),
        }
    }

    pub fn from_framebuffer(fb: &Framebuffer, timestamp: u64) -> Self {
        Frame::new(
            timestamp,
            fb.generation(),
            fb.width(),
            fb.height(),
            fb.pixels().to_vec(),
        )
    }

    pub fn meta(&self) -> FrameMeta {
        FrameMeta {
            timestamp: self.timestamp,
            generation: self.generation,
            width: self.width,
            height: self.height,
        }
    }

    pub fn pixel(&self, x: u16, y: u16) -> [u8; 4] {
        let i = (y as usize * self.width as usize + x as usize) * 4;
        self.pixels[i..i + 4].try_into().unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub timestamp: u64,
    pub generation: u64,
    pub width: u16,
    pub height: u16,
}

/// File name for a frame: zero-padded so directory order is time order.
pub fn frame_file_name(timestamp: u64) -> String {
    format!("{timestamp:012}.png")
}

#[derive(Debug, Clone, PartialEq)]
#[non_exhaustive]
pub struct RecorderConfig {
    pub max_fps: f64,
    pub ring_capacity: usize,
    /// Where evicted frames go.
    pub spill_dir: PathBuf,
}

impl RecorderConfig {
    pub fn new(spill_dir: impl Into<PathBuf>) -> Self {
        RecorderConfig {
            max_fps: 10.0,
            ring_capacity: 256,
            spill_dir: spill_dir.into(),
        }
    }

    pub fn max_fps(mut self, fps: f64) -> Self {
        self.max_fps = fps;
        self
    }

    pub fn ring_capacity(mut self, n: usize) -> Self {
        self.ring_capacity = n;
        self
    }
}

struct FrameStore {
    ring: VecDeque<Frame>,
    capacity: usize,
    spill_dir: PathBuf,
    spilled: Vec<FrameMeta>,
    last: Option<FrameMeta>,
}

impl FrameStore {
    /// Stores a frame, bumping its timestamp past the previous one so every
    /// frame has a unique file name. Evicted frames hit disk before they leave
    /// memory.
    fn push(&mut self, mut frame: Frame) -> Result<FrameMeta, RecorderError> {
        if let Some(last) = self.last {
            if frame.generation <= last.generation {
                return Err(RecorderError::StaleGeneration {
                    last: last.generation,
                    got: frame.generation,
                });
            }
            frame.timestamp = frame.timestamp.max(last.timestamp + 1);
        }
        while self.ring.len() >= self.capacity {
            let old = self.ring.front().expect("nonempty ring");
            fs::write(
                self.spill_dir.join(frame_file_name(old.timestamp)),
                old.to_png()?,
            )?;
            self.spilled.push(old.meta());
            self.ring.pop_front();
        }
        let meta = frame.meta();
        self.ring.push_back(frame);
        self.last = Some(meta);
        Ok(meta)
    }

    fn load_spilled(&self, meta: &FrameMeta) -> Result<Frame, RecorderError> {
        let bytes = fs::read(self.spill_dir.join(frame_file_name(meta.timestamp)))?;
        let (w, h, px) = decode_png(&bytes)?;
        Ok(Frame::new(meta.timestamp, meta.generation, w, h, px))
    }
}

type FrameListener = Box<dyn Fn(FrameMeta) + Send + Sync>;

struct Shared {
    store: Mutex<FrameStore>,
    running: AtomicBool,
    stop: AtomicBool,
    error: Mutex<Option<String>>,
    listeners: Mutex<Vec<FrameListener>>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl Shared {
    fn push(&self, frame: Frame) -> Result<FrameMeta, RecorderError> {
        let meta = lock(&self.store).push(frame)?;
        for l in lock(&self.listeners).iter() {
            l(meta);
        }
        Ok(meta)
    }
}

/// Frame ring plus the capture thread feeding it. Readers may call any method
/// while capture runs.
pub struct Recorder {
    shared: Arc<Shared>,
    config: RecorderConfig,
    clock: Clock,
    worker: Mutex<Option<(JoinHandle<()>, InputWriter)>>,
}

impl Recorder {
    pub fn new(config: RecorderConfig, clock: Clock) -> Result<Self, RecorderError> {
        fs::create_dir_all(&config.spill_dir)?;
        let store = FrameStore {
            ring: VecDeque::new(),
            capacity: config.ring_capacity.max(1),
            spill_dir: config.spill_dir.clone(),
            spilled: Vec::new(),
            last: None,
        };
        Ok(Recorder {
            shared: Arc::new(Shared {
                store: Mutex::new(store),
                running: AtomicBool::new(false),
                stop: AtomicBool::new(false),
                error: Mutex::new(None),
                listeners: Mutex::default(),
            }),
            config,
            clock,
            worker: Mutex::new(None),
        })
    }

    pub fn config(&self) -> &RecorderConfig {
        &self.config
    }

    pub fn clock(&self) -> Clock {
        self.clock
    }

    /// Called from the capture thread after each stored frame.
    pub fn on_frame(&self, listener: impl Fn(FrameMeta) + Send + Sync + 'static) {
        lock(&self.shared.listeners).push(Box::new(listener));
    }

    /// Splits the connection, records from its update stream and hands back
    /// the input side.
    pub fn start_connection(&self, conn: Connection) -> Result<InputWriter, RecorderError> {
        let (updates, input) = conn.split();
        self.start(updates, input.clone())?;
        Ok(input)
    }

    /// Starts the capture loop. `input` is used for update requests and is
    /// closed by [`Recorder::stop`] to unblock the reader.
    pub fn start<R: Read + Send + 'static>(
        &self,
        updates: UpdateStream<R>,
        input: InputWriter,
    ) -> Result<(), RecorderError> {
        let mut worker = lock(&self.worker);
        if worker.is_some()
            || self
                .shared
                .running
                .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
                .is_err()
        {
            return Err(RecorderError::AlreadyRecording);
        }
        let shared = self.shared.clone();
        let clock = self.clock;
        let interval = Duration::from_secs_f64(1.0 / self.config.max_fps.max(0.001));
        let requester = input.clone();
        let handle = thread::Builder::new()
            .name("recorder".into())
            .spawn(move || {
                let outcome = capture_loop(&shared, updates, &requester, clock, interval);
                if let Err(e) = outcome {
                    if !shared.stop.load(Ordering::SeqCst) {
                        log::warn!("recorder stopped: {e}");
                        *lock(&shared.error) = Some(e.to_string());
                    }
                }
                shared.running.store(false, Ordering::SeqCst);
            })?;
        *worker = Some((handle, input));
        Ok(())
    }

    pub fn is_running(&self) -> bool {
        self.shared.running.load(Ordering::SeqCst)
    }

    /// Why capture ended, if it ended on an error.
    pub fn last_error(&self) -> Option<String> {
        lock(&self.shared.error).clone()
    }

    /// Stops capture and closes the connection.
    pub fn stop(&self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        if let Some((handle, input)) = lock(&self.worker).take() {
            input.close();
            let _ = handle.join();
        }
    }

    /// Stores a frame captured elsewhere.
    pub fn push(&self, frame: Frame) -> Result<FrameMeta, RecorderError> {
        self.shared.push(frame)
    }

    pub fn get_screenshot(&self) -> Result<Frame, RecorderError> {
        lock(&self.shared.store)
            .ring
            .back()
            .cloned()
            .ok_or(RecorderError::NoFrames)
    }

    /// Up to `n` newest frames still in memory, oldest first.
    pub fn latest(&self, n: usize) -> Vec<Frame> {
        let store = lock(&self.shared.store);
        let skip = store.ring.len().saturating_sub(n);
        store.ring.iter().skip(skip).cloned().collect()
    }

    pub fn frame_count(&self) -> usize {
        let store = lock(&self.shared.store);
        store.spilled.len() + store.ring.len()
    }

    /// Metadata of every stored frame, oldest first.
    pub fn index(&self) -> Vec<FrameMeta> {
        let store = lock(&self.shared.store);
        store
            .spilled
            .iter()
            .copied()
            .chain(store.ring.iter().map(Frame::meta))
            .collect()
    }

    pub fn frame_at(&self, timestamp: u64) -> Result<Option<Frame>, RecorderError> {
        Ok(self.slice(timestamp, timestamp)?.pop())
    }

    /// Frames with `from <= timestamp <= to`, oldest first. Spilled frames are
    /// read back from disk.
    pub fn slice(&self, from: u64, to: u64) -> Result<Vec<Frame>, RecorderError> {
        if from > to {
            return Ok(Vec::new());
        }
        let (spilled, ring, spill_dir) = {
            let store = lock(&self.shared.store);
            let spilled: Vec<FrameMeta> = store
                .spilled
                .iter()
                .filter(|m| (from..=to).contains(&m.timestamp))
                .copied()
                .collect();
            let ring: Vec<Frame> = store
                .ring
                .iter()
                .filter(|f| (from..=to).contains(&f.timestamp))
                .cloned()
                .collect();
            (spilled, ring, store.spill_dir.clone())
        };
        let loader = FrameStore {
            ring: VecDeque::new(),
            capacity: 1,
            spill_dir,
            spilled: Vec::new(),
            last: None,
        };
        let mut out = spilled
            .iter()
            .map(|m| loader.load_spilled(m))
            .collect::<Result<Vec<_>, _>>()?;
        out.extend(ring);
        Ok(out)
    }

    /// Every stored frame, as one consistent snapshot.
    pub fn all_frames(&self) -> Result<Vec<Frame>, RecorderError> {
        self.slice(0, u64::MAX)
    }

    /// Assembles a bundle from the recorded frames and writes it to `dir`.
    pub fn export(
        &self,
        dir: &Path,
        metadata: BundleMetadata,
        steps: Vec<Step>,
        verdict: Option<Verdict>,
        feedback: Vec<crate::feedback::FeedbackRecord>,
    ) -> Result<TrajectoryBundle, RecorderError> {
        let bundle = TrajectoryBundle {
            metadata,
            steps,
            frames: self.all_frames()?,
            verdict,
            feedback,
        };
        bundle.write(dir)?;
        Ok(bundle)
    }
}

impl Drop for Recorder {
    fn drop(&mut self) {
        self.stop();
    }
}

fn capture_loop<R: Read>(
    shared: &Shared,
    mut updates: UpdateStream<R>,
    input: &InputWriter,
    clock: Clock,
    interval: Duration,
) -> Result<(), RecorderError> {
    let mut incremental = false;
    let mut next_slot = Instant::now();
    while !shared.stop.load(Ordering::SeqCst) {
        input.request_update(incremental)?;
        updates.next_update()?;
        incremental = true;
        shared.push(Frame::from_framebuffer(updates.framebuffer(), clock.now_ms()))?;
        next_slot += interval;
        let now = Instant::now();
        if next_slot > now {
            thread::sleep(next_slot - now);
        } else {
            next_slot = now;
        }
    }
    Ok(())
}
