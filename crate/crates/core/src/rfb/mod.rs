//! Remote framebuffer (VNC) protocol client, version 3.8.
//!
//! Supports the `None` and classic VNC challenge-response security types and the
//! Raw and CopyRect encodings. Pixels are converted to RGBA8888 as they are
//! decoded, whatever format the wire carries.

mod auth;
mod client;
mod framebuffer;
pub mod mock;
mod pixel;
pub mod wire;

use std::io;

pub use auth::vnc_auth_response;
pub use client::{
    connect, connect_with, handshake, ConnectOptions, Connection, DecodedRect, InputWriter,
    ServerInit, UpdateStream,
};
pub use framebuffer::{Framebuffer, Rect};
pub use mock::{MockDesktop, Scenario};
pub use pixel::PixelFormat;
pub use wire::{ClientMessage, InputEvent};

#[derive(Debug, thiserror::Error)]
pub enum RfbError {
    #[error("unsupported protocol version {0} (need 3.8 or later)")]
    UnsupportedVersion(String),
    #[error("authentication failed: {0}")]
    AuthFailed(String),
    #[error("no supported security type offered (server offered {0:?})")]
    UnsupportedSecurity(Vec<u8>),
    #[error("unknown encoding {0}")]
    UnknownEncoding(i32),
    #[error("stream ended mid-message")]
    Truncated,
    #[error("pointer ({x}, {y}) outside {width}x{height} screen")]
    OutOfBounds {
        x: i64,
        y: i64,
        width: u16,
        height: u16,
    },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("transport error: {0}")]
    Transport(#[from] io::Error),
}
