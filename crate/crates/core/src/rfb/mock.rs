//! Scripted in-process RFB server.
//!
//! The mock plays a [`Scenario`]: an initial screen, a list of scripted updates
//! (released on demand or at fixed offsets from connection time) and an optional
//! ticker producing a steady stream of fills. Every client message is recorded in
//! an event log, and the raw bytes of each connection are kept as a transcript.

use std::collections::VecDeque;
use std::fs::OpenOptions;
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::auth::vnc_auth_response;
use super::wire::{self, read_exact, read_u8};
use super::{ClientMessage, Framebuffer, InputEvent, PixelFormat, Rect, RfbError};

const POLL: Duration = Duration::from_millis(10);
const TRANSCRIPT_LIMIT: usize = 256 * 1024;

/// An opaque colour written as `"#rrggbb"` in scenario files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rgb(pub [u8; 3]);

impl Rgb {
    pub fn rgba(self) -> [u8; 4] {
        [self.0[0], self.0[1], self.0[2], 255]
    }
}

impl Serialize for Rgb {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("#{:02x}{:02x}{:02x}", self.0[0], self.0[1], self.0[2]))
    }
}

impl<'de> Deserialize<'de> for Rgb {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let hex = s.strip_prefix('#').unwrap_or(&s);
        let bad = || serde::de::Error::custom(format!("invalid colour {s:?}, expected #rrggbb"));
        if hex.len() != 6 {
            return Err(bad());
        }
        let v = u32::from_str_radix(hex, 16).map_err(|_| bad())?;
        Ok(Rgb([(v >> 16) as u8, (v >> 8) as u8, v as u8]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScriptRect {
    Fill {
        x: u16,
        y: u16,
        w: u16,
        h: u16,
        color: Rgb,
    },
    /// Row-major colours, `w * h` of them.
    Pixels {
        x: u16,
        y: u16,
        w: u16,
        h: u16,
        colors: Vec<Rgb>,
    },
    Copy {
        x: u16,
        y: u16,
        w: u16,
        h: u16,
        src_x: u16,
        src_y: u16,
    },
}

impl ScriptRect {
    pub fn rect(&self) -> Rect {
        match *self {
            ScriptRect::Fill { x, y, w, h, .. }
            | ScriptRect::Pixels { x, y, w, h, .. }
            | ScriptRect::Copy { x, y, w, h, .. } => Rect::new(x, y, w, h),
        }
    }
}

/// One FramebufferUpdate worth of rectangles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedUpdate {
    /// Offset from the end of the handshake. `None` releases the update in
    /// response to the next incremental request once its predecessors are out.
    #[serde(default)]
    pub at_ms: Option<u64>,
    #[serde(default)]
    pub rects: Vec<ScriptRect>,
}

/// Periodic fills cycling through `colors`, appended after the scripted updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ticker {
    pub interval_ms: u64,
    pub count: u32,
    #[serde(default)]
    pub start_ms: u64,
    #[serde(default)]
    pub region: Option<Rect>,
    pub colors: Vec<Rgb>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub width: u16,
    pub height: u16,
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default = "default_background")]
    pub background: Rgb,
    /// Version digits sent in the greeting, e.g. `"003.008"`.
    #[serde(default = "default_version")]
    pub version: String,
    #[serde(default)]
    pub password: Option<String>,
    /// Overrides the offered security types.
    #[serde(default)]
    pub security_types: Option<Vec<u8>>,
    /// Native format advertised in ServerInit: rgba8888, bgrx8888, rgb565 or bgr233.
    #[serde(default = "default_native_format")]
    pub native_format: String,
    #[serde(default)]
    pub updates: Vec<ScriptedUpdate>,
    #[serde(default)]
    pub ticker: Option<Ticker>,
    #[serde(default)]
    pub event_log: Option<PathBuf>,
    #[serde(default)]
    pub listen: Option<String>,
}

fn default_name() -> String {
    "mock-desktop".into()
}
fn default_background() -> Rgb {
    Rgb([0, 0, 0])
}
fn default_version() -> String {
    "003.008".into()
}
fn default_native_format() -> String {
    "bgrx8888".into()
}

impl Scenario {
    pub fn new(width: u16, height: u16) -> Self {
        Scenario {
            width,
            height,
            name: default_name(),
            background: default_background(),
            version: default_version(),
            password: None,
            security_types: None,
            native_format: default_native_format(),
            updates: Vec::new(),
            ticker: None,
            event_log: None,
            listen: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &std::path::Path) -> io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    fn native(&self) -> io::Result<PixelFormat> {
        match self.native_format.as_str() {
            "rgba8888" => Ok(PixelFormat::rgba8888()),
            "bgrx8888" => Ok(PixelFormat::bgrx8888()),
            "rgb565" => Ok(PixelFormat::rgb565()),
            "bgr233" => Ok(PixelFormat::bgr233()),
            other => Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("unknown native format {other:?}"),
            )),
        }
    }

    /// Scripted updates followed by the expanded ticker.
    pub fn timeline(&self) -> Vec<ScriptedUpdate> {
        let mut out = self.updates.clone();
        if let Some(t) = &self.ticker {
            let region = t.region.unwrap_or(Rect::new(0, 0, self.width, self.height));
            for i in 0..t.count {
                if t.colors.is_empty() {
                    break;
                }
                out.push(ScriptedUpdate {
                    at_ms: Some(t.start_ms + i as u64 * t.interval_ms),
                    rects: vec![ScriptRect::Fill {
                        x: region.x,
                        y: region.y,
                        w: region.w,
                        h: region.h,
                        color: t.colors[i as usize % t.colors.len()],
                    }],
                });
            }
        }
        out
    }
}

/// A client message as recorded by the mock.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LoggedMessage {
    ClientInit { shared: bool },
    SetPixelFormat { format: PixelFormat },
    SetEncodings { encodings: Vec<i32> },
    UpdateRequest { incremental: bool, rect: Rect },
    Pointer { x: u16, y: u16, mask: u8 },
    Key { keysym: u32, down: bool },
    CutText { len: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoggedEvent {
    pub conn: usize,
    pub at_ms: u64,
    #[serde(flatten)]
    pub message: LoggedMessage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Server to client.
    S,
    /// Client to server.
    C,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub dir: Direction,
    pub bytes: Vec<u8>,
}

#[derive(Default)]
struct Transcript {
    entries: Vec<TranscriptEntry>,
    total: usize,
}

impl Transcript {
    fn record(&mut self, dir: Direction, bytes: &[u8]) {
        if self.total >= TRANSCRIPT_LIMIT || bytes.is_empty() {
            return;
        }
        self.total += bytes.len();
        match self.entries.last_mut() {
            Some(last) if last.dir == dir => last.bytes.extend_from_slice(bytes),
            _ => self.entries.push(TranscriptEntry {
                dir,
                bytes: bytes.to_vec(),
            }),
        }
    }
}

struct Shared {
    scenario: Scenario,
    stop: AtomicBool,
    events: Mutex<Vec<LoggedEvent>>,
    log_file: Option<Mutex<std::fs::File>>,
    transcripts: Mutex<Vec<Arc<Mutex<Transcript>>>>,
    sockets: Mutex<Vec<TcpStream>>,
    started: Instant,
}

impl Shared {
    fn log(&self, conn: usize, message: LoggedMessage) {
        let event = LoggedEvent {
            conn,
            at_ms: self.started.elapsed().as_millis() as u64,
            message,
        };
        if let Some(file) = &self.log_file {
            if let Ok(line) = serde_json::to_string(&event) {
                let mut f = file.lock().unwrap_or_else(|p| p.into_inner());
                let _ = writeln!(f, "{line}");
                let _ = f.flush();
            }
        }
        self.events.lock().unwrap_or_else(|p| p.into_inner()).push(event);
    }

    fn stopped(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }
}

/// Handle to a running mock server; shuts down on drop.
pub struct MockDesktop {
    addr: SocketAddr,
    shared: Arc<Shared>,
}

impl MockDesktop {
    pub fn start(scenario: Scenario) -> io::Result<Self> {
        scenario.native()?;
        if scenario.width == 0 || scenario.height == 0 {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, "empty screen"));
        }
        let listener = TcpListener::bind(scenario.listen.as_deref().unwrap_or("127.0.0.1:0"))?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let log_file = match &scenario.event_log {
            Some(path) => Some(Mutex::new(
                OpenOptions::new().create(true).append(true).open(path)?,
            )),
            None => None,
        };
        let shared = Arc::new(Shared {
            scenario,
            stop: AtomicBool::new(false),
            events: Mutex::new(Vec::new()),
            log_file,
            transcripts: Mutex::new(Vec::new()),
            sockets: Mutex::new(Vec::new()),
            started: Instant::now(),
        });
        let accept_shared = shared.clone();
        thread::Builder::new()
            .name("mock-desktop-accept".into())
            .spawn(move || accept_loop(listener, accept_shared))?;
        Ok(MockDesktop { addr, shared })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn port(&self) -> u16 {
        self.addr.port()
    }

    pub fn events(&self) -> Vec<LoggedEvent> {
        self.shared.events.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }

    /// Pointer and key events only, in arrival order.
    pub fn input_events(&self) -> Vec<InputEvent> {
        self.events()
            .into_iter()
            .filter_map(|e| match e.message {
                LoggedMessage::Pointer { x, y, mask } => Some(InputEvent::pointer(x, y, mask)),
                LoggedMessage::Key { keysym, down } => Some(InputEvent::key(keysym, down)),
                _ => None,
            })
            .collect()
    }

    pub fn connection_count(&self) -> usize {
        self.shared.transcripts.lock().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn transcript(&self, conn: usize) -> Vec<TranscriptEntry> {
        let all = self.shared.transcripts.lock().unwrap_or_else(|p| p.into_inner());
        all.get(conn)
            .map(|t| t.lock().unwrap_or_else(|p| p.into_inner()).entries.clone())
            .unwrap_or_default()
    }

    pub fn shutdown(&self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        for s in self.shared.sockets.lock().unwrap_or_else(|p| p.into_inner()).iter() {
            let _ = s.shutdown(Shutdown::Both);
        }
    }
}

impl Drop for MockDesktop {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    while !shared.stopped() {
        match listener.accept() {
            Ok((stream, _)) => {
                let _ = stream.set_nonblocking(false);
                let _ = stream.set_nodelay(true);
                if let Ok(clone) = stream.try_clone() {
                    shared.sockets.lock().unwrap_or_else(|p| p.into_inner()).push(clone);
                }
                let transcript = Arc::new(Mutex::new(Transcript::default()));
                let conn = {
                    let mut all = shared.transcripts.lock().unwrap_or_else(|p| p.into_inner());
                    all.push(transcript.clone());
                    all.len() - 1
                };
                let shared = shared.clone();
                let _ = thread::Builder::new()
                    .name(format!("mock-desktop-conn-{conn}"))
                    .spawn(move || {
                        if let Err(e) = serve(stream, conn, transcript, shared) {
                            log::debug!("mock connection {conn} ended: {e}");
                        }
                    });
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(e) => {
                log::warn!("mock accept failed: {e}");
                thread::sleep(POLL);
            }
        }
    }
}

/// Stream wrapper that copies every byte into the connection transcript.
struct Recorded {
    stream: TcpStream,
    transcript: Arc<Mutex<Transcript>>,
}

impl Read for Recorded {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.stream.read(buf)?;
        self.transcript
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .record(Direction::C, &buf[..n]);
        Ok(n)
    }
}

impl Write for Recorded {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.stream.write(buf)?;
        self.transcript
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .record(Direction::S, &buf[..n]);
        Ok(n)
    }
    fn flush(&mut self) -> io::Result<()> {
        self.stream.flush()
    }
}

/// Deterministic challenge so handshake transcripts are reproducible.
pub const MOCK_CHALLENGE: [u8; 16] = [
    0x00, 0x11, 0x22, 0x33, 0x44, 0x55, 0x66, 0x77, 0x88, 0x99, 0xAA, 0xBB, 0xCC, 0xDD, 0xEE, 0xFF,
];

fn serve(
    stream: TcpStream,
    conn: usize,
    transcript: Arc<Mutex<Transcript>>,
    shared: Arc<Shared>,
) -> Result<(), RfbError> {
    let sc = &shared.scenario;
    let mut io = Recorded {
        stream: stream.try_clone()?,
        transcript: transcript.clone(),
    };

    io.write_all(format!("RFB {}\n", sc.version).as_bytes())?;
    let mut client_version = [0u8; 12];
    read_exact(&mut io, &mut client_version)?;
    wire::parse_version(&client_version)?;

    let offered = sc.security_types.clone().unwrap_or_else(|| {
        if sc.password.is_some() {
            vec![wire::SECURITY_VNC_AUTH]
        } else {
            vec![wire::SECURITY_NONE]
        }
    });
    let mut msg = vec![offered.len() as u8];
    msg.extend_from_slice(&offered);
    io.write_all(&msg)?;
    let chosen = read_u8(&mut io)?;
    let mut ok = offered.contains(&chosen);
    if ok && chosen == wire::SECURITY_VNC_AUTH {
        io.write_all(&MOCK_CHALLENGE)?;
        let mut response = [0u8; 16];
        read_exact(&mut io, &mut response)?;
        let password = sc.password.as_deref().unwrap_or_default();
        ok = response == vnc_auth_response(password, &MOCK_CHALLENGE);
    }
    if !ok {
        let reason = b"authentication failed";
        let mut msg = 1u32.to_be_bytes().to_vec();
        msg.extend_from_slice(&(reason.len() as u32).to_be_bytes());
        msg.extend_from_slice(reason);
        io.write_all(&msg)?;
        return Err(RfbError::AuthFailed("client failed authentication".into()));
    }
    io.write_all(&0u32.to_be_bytes())?;

    let shared_flag = read_u8(&mut io)? != 0;
    shared.log(conn, LoggedMessage::ClientInit { shared: shared_flag });

    let native = sc.native().map_err(RfbError::Transport)?;
    let mut init = Vec::new();
    init.extend_from_slice(&sc.width.to_be_bytes());
    init.extend_from_slice(&sc.height.to_be_bytes());
    init.extend_from_slice(&native.to_bytes());
    init.extend_from_slice(&(sc.name.len() as u32).to_be_bytes());
    init.extend_from_slice(sc.name.as_bytes());
    io.write_all(&init)?;

    let format = Arc::new(Mutex::new(native));
    let (tx, rx) = mpsc::channel();
    let writer = Recorded {
        stream,
        transcript,
    };
    let writer_shared = shared.clone();
    let writer_format = format.clone();
    let writer_thread = thread::Builder::new()
        .name(format!("mock-desktop-writer-{conn}"))
        .spawn(move || {
            let mut w = UpdateWriter::new(writer, writer_shared, writer_format)?;
            w.run(rx)
        })?;

    let result = read_client_messages(&mut io, conn, &shared, &format, &tx);
    drop(tx);
    let _ = writer_thread.join();
    result
}

fn read_client_messages(
    io: &mut Recorded,
    conn: usize,
    shared: &Shared,
    format: &Mutex<PixelFormat>,
    requests: &mpsc::Sender<(bool, Rect)>,
) -> Result<(), RfbError> {
    let mut reader = io::BufReader::new(io);
    loop {
        let msg = ClientMessage::read_from(&mut reader)?;
        let logged = match msg {
            ClientMessage::SetPixelFormat(pf) => {
                pf.validate()?;
                *format.lock().unwrap_or_else(|p| p.into_inner()) = pf;
                LoggedMessage::SetPixelFormat { format: pf }
            }
            ClientMessage::SetEncodings(encodings) => LoggedMessage::SetEncodings { encodings },
            ClientMessage::UpdateRequest { incremental, rect } => {
                let _ = requests.send((incremental, rect));
                LoggedMessage::UpdateRequest { incremental, rect }
            }
            ClientMessage::Input(InputEvent::Pointer { x, y, mask }) => {
                LoggedMessage::Pointer { x, y, mask }
            }
            ClientMessage::Input(InputEvent::Key { keysym, down }) => {
                LoggedMessage::Key { keysym, down }
            }
            ClientMessage::CutText(text) => LoggedMessage::CutText { len: text.len() },
        };
        shared.log(conn, logged);
    }
}

enum Pending {
    Tile(Rect, Vec<u8>),
    Copy(Rect, u16, u16),
}

struct UpdateWriter {
    out: Recorded,
    shared: Arc<Shared>,
    format: Arc<Mutex<PixelFormat>>,
    fb: Framebuffer,
    timeline: VecDeque<ScriptedUpdate>,
    pending: Vec<Pending>,
    t0: Instant,
}

impl UpdateWriter {
    fn new(out: Recorded, shared: Arc<Shared>, format: Arc<Mutex<PixelFormat>>) -> Result<Self, RfbError> {
        let sc = &shared.scenario;
        let mut fb = Framebuffer::new(sc.width, sc.height)?;
        let bg: Vec<u8> = std::iter::repeat_n(sc.background.rgba(), sc.width as usize * sc.height as usize)
            .flatten()
            .collect();
        fb.blit(Rect::new(0, 0, sc.width, sc.height), &bg)?;
        let timeline = sc.timeline().into();
        Ok(UpdateWriter {
            out,
            shared,
            format,
            fb,
            timeline,
            pending: Vec::new(),
            t0: Instant::now(),
        })
    }

    fn run(&mut self, rx: mpsc::Receiver<(bool, Rect)>) -> Result<(), RfbError> {
        loop {
            let (incremental, rect) = match rx.recv_timeout(POLL) {
                Ok(req) => req,
                Err(RecvTimeoutError::Timeout) if !self.shared.stopped() => continue,
                Err(_) => return Ok(()),
            };
            if incremental {
                if !self.serve_incremental(&rx)? {
                    return Ok(());
                }
            } else {
                self.serve_full(rect)?;
            }
        }
    }

    fn serve_full(&mut self, rect: Rect) -> Result<(), RfbError> {
        self.release_due()?;
        let full = Rect::new(0, 0, self.fb.width(), self.fb.height());
        if rect == full {
            self.pending.clear();
        }
        let clipped = clip(rect, self.fb.width(), self.fb.height());
        let tile = self.fb.tile(clipped)?;
        self.send(vec![Pending::Tile(clipped, tile)])
    }

    /// Returns false when the server is stopping.
    fn serve_incremental(&mut self, rx: &mpsc::Receiver<(bool, Rect)>) -> Result<bool, RfbError> {
        loop {
            if self.shared.stopped() {
                return Ok(false);
            }
            self.release_due()?;
            if !self.pending.is_empty() {
                let batch = std::mem::take(&mut self.pending);
                self.send(batch)?;
                return Ok(true);
            }
            match self.timeline.front().map(|u| u.at_ms) {
                Some(None) => {
                    let update = self.timeline.pop_front().expect("front exists");
                    self.apply(&update)?;
                    let batch = std::mem::take(&mut self.pending);
                    self.send(batch)?;
                    return Ok(true);
                }
                Some(Some(at)) => {
                    let due = self.t0 + Duration::from_millis(at);
                    let now = Instant::now();
                    if due > now {
                        thread::sleep((due - now).min(POLL));
                    }
                }
                None => {
                    // Nothing left to change; a real server would stay silent too.
                    match rx.try_recv() {
                        Err(mpsc::TryRecvError::Disconnected) => return Ok(false),
                        Ok((false, rect)) => {
                            self.serve_full(rect)?;
                            return Ok(true);
                        }
                        _ => thread::sleep(POLL),
                    }
                }
            }
        }
    }

    fn release_due(&mut self) -> Result<(), RfbError> {
        let elapsed = self.t0.elapsed().as_millis() as u64;
        while let Some(Some(at)) = self.timeline.front().map(|u| u.at_ms) {
            if at > elapsed {
                break;
            }
            let update = self.timeline.pop_front().expect("front exists");
            self.apply(&update)?;
        }
        Ok(())
    }

    fn apply(&mut self, update: &ScriptedUpdate) -> Result<(), RfbError> {
        for r in &update.rects {
            let rect = r.rect();
            match r {
                ScriptRect::Fill { color, .. } => {
                    let tile: Vec<u8> =
                        std::iter::repeat_n(color.rgba(), rect.area()).flatten().collect();
                    self.fb.blit(rect, &tile)?;
                    self.pending.push(Pending::Tile(rect, tile));
                }
                ScriptRect::Pixels { colors, .. } => {
                    if colors.len() != rect.area() {
                        return Err(RfbError::Protocol(format!(
                            "scripted rect {rect:?} has {} colours",
                            colors.len()
                        )));
                    }
                    let tile: Vec<u8> = colors.iter().flat_map(|c| c.rgba()).collect();
                    self.fb.blit(rect, &tile)?;
                    self.pending.push(Pending::Tile(rect, tile));
                }
                ScriptRect::Copy { src_x, src_y, .. } => {
                    self.fb.copy_within(rect, *src_x, *src_y)?;
                    self.pending.push(Pending::Copy(rect, *src_x, *src_y));
                }
            }
        }
        Ok(())
    }

    fn send(&mut self, rects: Vec<Pending>) -> Result<(), RfbError> {
        let pf = *self.format.lock().unwrap_or_else(|p| p.into_inner());
        let mut msg = vec![wire::SERVER_FRAMEBUFFER_UPDATE, 0];
        msg.extend_from_slice(&(rects.len() as u16).to_be_bytes());
        for p in &rects {
            let (rect, encoding) = match p {
                Pending::Tile(r, _) => (*r, wire::ENCODING_RAW),
                Pending::Copy(r, _, _) => (*r, wire::ENCODING_COPY_RECT),
            };
            for v in [rect.x, rect.y, rect.w, rect.h] {
                msg.extend_from_slice(&v.to_be_bytes());
            }
            msg.extend_from_slice(&encoding.to_be_bytes());
            match p {
                Pending::Tile(_, tile) => {
                    for px in tile.chunks_exact(4) {
                        pf.encode_pixel([px[0], px[1], px[2], px[3]], &mut msg);
                    }
                }
                Pending::Copy(_, sx, sy) => {
                    msg.extend_from_slice(&sx.to_be_bytes());
                    msg.extend_from_slice(&sy.to_be_bytes());
                }
            }
        }
        self.out.write_all(&msg)?;
        self.out.flush()?;
        Ok(())
    }
}

fn clip(rect: Rect, width: u16, height: u16) -> Rect {
    let x = rect.x.min(width);
    let y = rect.y.min(height);
    let w = rect.w.min(width - x);
    let h = rect.h.min(height - y);
    Rect::new(x, y, w, h)
}
