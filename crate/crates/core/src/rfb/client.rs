use std::io::{BufReader, Read, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::auth::vnc_auth_response;
use super::wire::{self, read_exact, read_i32, read_string, read_u16, read_u32, read_u8, skip};
use super::{ClientMessage, Framebuffer, InputEvent, PixelFormat, Rect, RfbError};

/// Parameters learned from ServerInit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerInit {
    pub width: u16,
    pub height: u16,
    /// The server's native format, before our SetPixelFormat.
    pub server_format: PixelFormat,
    pub name: String,
}

#[derive(Debug, Clone)]
pub struct ConnectOptions {
    pub password: Option<String>,
    pub timeout: Duration,
    /// Format requested right after initialisation. Must be true colour.
    pub pixel_format: PixelFormat,
}

impl Default for ConnectOptions {
    fn default() -> Self {
        ConnectOptions {
            password: None,
            timeout: Duration::from_secs(5),
            pixel_format: PixelFormat::rgba8888(),
        }
    }
}

/// One decoded rectangle of a framebuffer update, as an RGBA8888 tile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedRect {
    pub rect: Rect,
    pub pixels: Vec<u8>,
}

/// Runs the 3.8 handshake through SetEncodings on an already-open stream.
pub fn handshake<S: Read + Write>(
    stream: &mut S,
    password: Option<&str>,
    requested: &PixelFormat,
) -> Result<ServerInit, RfbError> {
    let mut greeting = [0u8; 12];
    read_exact(stream, &mut greeting)?;
    let (major, minor) = wire::parse_version(&greeting)?;
    if (major, minor) < (3, 8) {
        return Err(RfbError::UnsupportedVersion(format!("{major}.{minor}")));
    }
    stream.write_all(wire::PROTOCOL_VERSION)?;

    let count = read_u8(stream)?;
    if count == 0 {
        return Err(RfbError::AuthFailed(read_string(stream)?));
    }
    let mut offered = vec![0u8; count as usize];
    read_exact(stream, &mut offered)?;

    let chosen = if offered.contains(&wire::SECURITY_NONE) {
        wire::SECURITY_NONE
    } else if offered.contains(&wire::SECURITY_VNC_AUTH) {
        if password.is_none() {
            return Err(RfbError::AuthFailed("server requires a password".into()));
        }
        wire::SECURITY_VNC_AUTH
    } else {
        return Err(RfbError::UnsupportedSecurity(offered));
    };
    stream.write_all(&[chosen])?;

    if chosen == wire::SECURITY_VNC_AUTH {
        let mut challenge = [0u8; 16];
        read_exact(stream, &mut challenge)?;
        stream.write_all(&vnc_auth_response(password.unwrap_or_default(), &challenge))?;
    }
    match read_u32(stream)? {
        0 => {}
        _ => return Err(RfbError::AuthFailed(read_string(stream)?)),
    }

    // ClientInit with the shared-session flag set.
    stream.write_all(&[1])?;

    let width = read_u16(stream)?;
    let height = read_u16(stream)?;
    let server_format = PixelFormat::read_from(stream)?;
    let name = read_string(stream)?;
    if width == 0 || height == 0 {
        return Err(RfbError::Protocol(format!("server framebuffer {width}x{height}")));
    }

    requested.validate()?;
    if !requested.true_color {
        return Err(RfbError::Protocol("requested pixel format must be true colour".into()));
    }
    let mut setup = ClientMessage::SetPixelFormat(*requested).encode();
    setup.extend(
        ClientMessage::SetEncodings(vec![wire::ENCODING_RAW, wire::ENCODING_COPY_RECT]).encode(),
    );
    stream.write_all(&setup)?;
    stream.flush()?;

    Ok(ServerInit {
        width,
        height,
        server_format,
        name,
    })
}

pub fn connect(host: &str, port: u16, password: Option<&str>) -> Result<Connection, RfbError> {
    connect_with(
        host,
        port,
        &ConnectOptions {
            password: password.map(str::to_owned),
            ..ConnectOptions::default()
        },
    )
}

pub fn connect_with(host: &str, port: u16, opts: &ConnectOptions) -> Result<Connection, RfbError> {
    let addr = (host, port)
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| RfbError::Protocol(format!("{host}:{port} did not resolve")))?;
    let mut stream = TcpStream::connect_timeout(&addr, opts.timeout)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(opts.timeout))?;
    let info = handshake(&mut stream, opts.password.as_deref(), &opts.pixel_format)?;
    stream.set_read_timeout(None)?;

    let control = stream.try_clone()?;
    let writer = stream.try_clone()?;
    Ok(Connection {
        updates: UpdateStream::new(stream, info.width, info.height, opts.pixel_format)?,
        input: InputWriter::new(writer, info.width, info.height).with_shutdown(control),
        info,
    })
}

/// An open session with a remote framebuffer server.
pub struct Connection {
    info: ServerInit,
    updates: UpdateStream<TcpStream>,
    input: InputWriter,
}

impl Connection {
    pub fn info(&self) -> &ServerInit {
        &self.info
    }

    pub fn framebuffer(&self) -> &Framebuffer {
        self.updates.framebuffer()
    }

    pub fn request_update(&self, incremental: bool) -> Result<(), RfbError> {
        self.input.request_update(incremental)
    }

    pub fn next_update(&mut self) -> Result<Vec<DecodedRect>, RfbError> {
        self.updates.next_update()
    }

    pub fn send_pointer(&self, x: u16, y: u16, mask: u8) -> Result<(), RfbError> {
        self.input.send_pointer(x, y, mask)
    }

    pub fn send_key(&self, keysym: u32, down: bool) -> Result<(), RfbError> {
        self.input.send_key(keysym, down)
    }

    pub fn input(&self) -> InputWriter {
        self.input.clone()
    }

    /// Separates the decode side from the event side so each can live on its own thread.
    pub fn split(self) -> (UpdateStream<TcpStream>, InputWriter) {
        (self.updates, self.input)
    }

    pub fn close(&self) {
        self.input.close();
    }
}

/// Read half: decodes server messages into the framebuffer.
pub struct UpdateStream<R> {
    reader: BufReader<R>,
    fb: Framebuffer,
    format: PixelFormat,
}

impl<R: Read> UpdateStream<R> {
    pub fn new(reader: R, width: u16, height: u16, format: PixelFormat) -> Result<Self, RfbError> {
        format.validate()?;
        Ok(UpdateStream {
            reader: BufReader::with_capacity(64 * 1024, reader),
            fb: Framebuffer::new(width, height)?,
            format,
        })
    }

    pub fn framebuffer(&self) -> &Framebuffer {
        &self.fb
    }

    /// Blocks until the next FramebufferUpdate, skipping bell, cut-text and colour-map messages.
    pub fn next_update(&mut self) -> Result<Vec<DecodedRect>, RfbError> {
        loop {
            match read_u8(&mut self.reader)? {
                wire::SERVER_FRAMEBUFFER_UPDATE => return self.read_update(),
                wire::SERVER_BELL => {}
                wire::SERVER_CUT_TEXT => {
                    skip(&mut self.reader, 3)?;
                    let len = read_u32(&mut self.reader)? as usize;
                    skip(&mut self.reader, len)?;
                }
                wire::SERVER_SET_COLOUR_MAP => {
                    skip(&mut self.reader, 3)?;
                    let n = read_u16(&mut self.reader)? as usize;
                    skip(&mut self.reader, n * 6)?;
                }
                other => {
                    return Err(RfbError::Protocol(format!("unknown server message type {other}")))
                }
            }
        }
    }

    fn read_update(&mut self) -> Result<Vec<DecodedRect>, RfbError> {
        let r = &mut self.reader;
        skip(r, 1)?;
        let count = read_u16(r)?;
        let mut rects = Vec::with_capacity(count as usize);
        let bpp = self.format.bytes_per_pixel();
        for _ in 0..count {
            let rect = Rect::new(read_u16(r)?, read_u16(r)?, read_u16(r)?, read_u16(r)?);
            let encoding = read_i32(r)?;
            if !rect.fits_in(self.fb.width(), self.fb.height()) {
                return Err(RfbError::Protocol(format!(
                    "update rect {rect:?} outside {}x{} framebuffer",
                    self.fb.width(),
                    self.fb.height()
                )));
            }
            let pixels = match encoding {
                wire::ENCODING_RAW => {
                    let mut raw = vec![0u8; rect.area() * bpp];
                    read_exact(r, &mut raw)?;
                    let mut tile = Vec::with_capacity(rect.area() * 4);
                    for px in raw.chunks_exact(bpp) {
                        tile.extend_from_slice(&self.format.decode_pixel(px));
                    }
                    self.fb.blit(rect, &tile)?;
                    tile
                }
                wire::ENCODING_COPY_RECT => {
                    let src_x = read_u16(r)?;
                    let src_y = read_u16(r)?;
                    self.fb.copy_within(rect, src_x, src_y)?
                }
                other => return Err(RfbError::UnknownEncoding(other)),
            };
            rects.push(DecodedRect { rect, pixels });
        }
        self.fb.bump_generation();
        Ok(rects)
    }
}

/// Write half. Clones share one socket; each message is written under a lock, so
/// callers on different threads never interleave bytes.
#[derive(Clone)]
pub struct InputWriter {
    sink: Arc<Mutex<Box<dyn Write + Send>>>,
    width: u16,
    height: u16,
    control: Option<Arc<TcpStream>>,
}

impl InputWriter {
    pub fn new<W: Write + Send + 'static>(sink: W, width: u16, height: u16) -> Self {
        InputWriter {
            sink: Arc::new(Mutex::new(Box::new(sink))),
            width,
            height,
            control: None,
        }
    }

    fn with_shutdown(mut self, stream: TcpStream) -> Self {
        self.control = Some(Arc::new(stream));
        self
    }

    pub fn screen_size(&self) -> (u16, u16) {
        (self.width, self.height)
    }

    fn write_message(&self, bytes: &[u8]) -> Result<(), RfbError> {
        let mut sink = self.sink.lock().unwrap_or_else(|p| p.into_inner());
        sink.write_all(bytes)?;
        sink.flush()?;
        Ok(())
    }

    pub fn send(&self, event: &InputEvent) -> Result<(), RfbError> {
        event.check_bounds(self.width, self.height)?;
        self.write_message(&event.encode())
    }

    pub fn send_pointer(&self, x: u16, y: u16, mask: u8) -> Result<(), RfbError> {
        self.send(&InputEvent::pointer(x, y, mask))
    }

    pub fn send_key(&self, keysym: u32, down: bool) -> Result<(), RfbError> {
        self.send(&InputEvent::key(keysym, down))
    }

    pub fn request_update(&self, incremental: bool) -> Result<(), RfbError> {
        let msg = ClientMessage::UpdateRequest {
            incremental,
            rect: Rect::new(0, 0, self.width, self.height),
        };
        self.write_message(&msg.encode())
    }

    /// Shuts the socket down in both directions, unblocking any pending read.
    pub fn close(&self) {
        if let Some(stream) = &self.control {
            let _ = stream.shutdown(Shutdown::Both);
        }
    }
}
