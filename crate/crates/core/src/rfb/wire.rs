//! Big-endian primitives and the client-to-server message set.

use std::io::{self, Read};

use serde::{Deserialize, Serialize};

use super::{PixelFormat, Rect, RfbError};

pub const PROTOCOL_VERSION: &[u8; 12] = b"RFB 003.008\n";

pub const SECURITY_NONE: u8 = 1;
pub const SECURITY_VNC_AUTH: u8 = 2;

pub const CLIENT_SET_PIXEL_FORMAT: u8 = 0;
pub const CLIENT_SET_ENCODINGS: u8 = 2;
pub const CLIENT_UPDATE_REQUEST: u8 = 3;
pub const CLIENT_KEY_EVENT: u8 = 4;
pub const CLIENT_POINTER_EVENT: u8 = 5;
pub const CLIENT_CUT_TEXT: u8 = 6;

pub const SERVER_FRAMEBUFFER_UPDATE: u8 = 0;
pub const SERVER_SET_COLOUR_MAP: u8 = 1;
pub const SERVER_BELL: u8 = 2;
pub const SERVER_CUT_TEXT: u8 = 3;

pub const ENCODING_RAW: i32 = 0;
pub const ENCODING_COPY_RECT: i32 = 1;

pub(crate) fn read_exact<R: Read + ?Sized>(r: &mut R, buf: &mut [u8]) -> Result<(), RfbError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => RfbError::Truncated,
        _ => RfbError::Transport(e),
    })
}

pub(crate) fn read_u8<R: Read + ?Sized>(r: &mut R) -> Result<u8, RfbError> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b)?;
    Ok(b[0])
}

pub(crate) fn read_u16<R: Read + ?Sized>(r: &mut R) -> Result<u16, RfbError> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b)?;
    Ok(u16::from_be_bytes(b))
}

pub(crate) fn read_u32<R: Read + ?Sized>(r: &mut R) -> Result<u32, RfbError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_be_bytes(b))
}

pub(crate) fn read_i32<R: Read + ?Sized>(r: &mut R) -> Result<i32, RfbError> {
    Ok(read_u32(r)? as i32)
}

/// Reads a u32 length-prefixed string, as used for failure reasons and desktop names.
pub(crate) fn read_string<R: Read + ?Sized>(r: &mut R) -> Result<String, RfbError> {
    let len = read_u32(r)? as usize;
    if len > 1 << 20 {
        return Err(RfbError::Protocol(format!("string length {len} too large")));
    }
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf)?;
    Ok(String::from_utf8_lossy(&buf).into_owned())
}

pub(crate) fn skip<R: Read + ?Sized>(r: &mut R, mut n: usize) -> Result<(), RfbError> {
    let mut scratch = [0u8; 512];
    while n > 0 {
        let take = n.min(scratch.len());
        read_exact(r, &mut scratch[..take])?;
        n -= take;
    }
    Ok(())
}

/// A pointer or key event as sent to the server.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputEvent {
    Pointer { x: u16, y: u16, mask: u8 },
    Key { keysym: u32, down: bool },
}

impl InputEvent {
    pub fn pointer(x: u16, y: u16, mask: u8) -> Self {
        InputEvent::Pointer { x, y, mask }
    }

    pub fn key(keysym: u32, down: bool) -> Self {
        InputEvent::Key { keysym, down }
    }

    /// Checks pointer coordinates against a `width` x `height` screen.
    pub fn check_bounds(&self, width: u16, height: u16) -> Result<(), RfbError> {
        match *self {
            InputEvent::Pointer { x, y, .. } if x >= width || y >= height => {
                Err(RfbError::OutOfBounds {
                    x: x as i64,
                    y: y as i64,
                    width,
                    height,
                })
            }
            _ => Ok(()),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        match *self {
            InputEvent::Pointer { x, y, mask } => {
                let [x0, x1] = x.to_be_bytes();
                let [y0, y1] = y.to_be_bytes();
                vec![CLIENT_POINTER_EVENT, mask, x0, x1, y0, y1]
            }
            InputEvent::Key { keysym, down } => {
                let mut out = vec![CLIENT_KEY_EVENT, down as u8, 0, 0];
                out.extend_from_slice(&keysym.to_be_bytes());
                out
            }
        }
    }
}

/// Every message a client may send after initialisation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClientMessage {
    SetPixelFormat(PixelFormat),
    SetEncodings(Vec<i32>),
    UpdateRequest { incremental: bool, rect: Rect },
    Input(InputEvent),
    CutText(Vec<u8>),
}

impl ClientMessage {
    pub fn encode(&self) -> Vec<u8> {
        match self {
            ClientMessage::SetPixelFormat(pf) => {
                let mut out = vec![CLIENT_SET_PIXEL_FORMAT, 0, 0, 0];
                out.extend_from_slice(&pf.to_bytes());
                out
            }
            ClientMessage::SetEncodings(encodings) => {
                let mut out = vec![CLIENT_SET_ENCODINGS, 0];
                out.extend_from_slice(&(encodings.len() as u16).to_be_bytes());
                for e in encodings {
                    out.extend_from_slice(&e.to_be_bytes());
                }
                out
            }
            ClientMessage::UpdateRequest { incremental, rect } => {
                let mut out = vec![CLIENT_UPDATE_REQUEST, *incremental as u8];
                for v in [rect.x, rect.y, rect.w, rect.h] {
                    out.extend_from_slice(&v.to_be_bytes());
                }
                out
            }
            ClientMessage::Input(ev) => ev.encode(),
            ClientMessage::CutText(text) => {
                let mut out = vec![CLIENT_CUT_TEXT, 0, 0, 0];
                out.extend_from_slice(&(text.len() as u32).to_be_bytes());
                out.extend_from_slice(text);
                out
            }
        }
    }

    /// Parses one message; used by the mock server and by round-trip tests.
    pub fn read_from<R: Read + ?Sized>(r: &mut R) -> Result<Self, RfbError> {
        let kind = read_u8(r)?;
        match kind {
            CLIENT_SET_PIXEL_FORMAT => {
                skip(r, 3)?;
                Ok(ClientMessage::SetPixelFormat(PixelFormat::read_from(r)?))
            }
            CLIENT_SET_ENCODINGS => {
                skip(r, 1)?;
                let n = read_u16(r)?;
                let encodings = (0..n).map(|_| read_i32(r)).collect::<Result<_, _>>()?;
                Ok(ClientMessage::SetEncodings(encodings))
            }
            CLIENT_UPDATE_REQUEST => {
                let incremental = read_u8(r)? != 0;
                let rect = Rect::new(read_u16(r)?, read_u16(r)?, read_u16(r)?, read_u16(r)?);
                Ok(ClientMessage::UpdateRequest { incremental, rect })
            }
            CLIENT_KEY_EVENT => {
                let down = read_u8(r)? != 0;
                skip(r, 2)?;
                let keysym = read_u32(r)?;
                Ok(ClientMessage::Input(InputEvent::Key { keysym, down }))
            }
            CLIENT_POINTER_EVENT => {
                let mask = read_u8(r)?;
                let x = read_u16(r)?;
                let y = read_u16(r)?;
                Ok(ClientMessage::Input(InputEvent::Pointer { x, y, mask }))
            }
            CLIENT_CUT_TEXT => {
                skip(r, 3)?;
                let len = read_u32(r)? as usize;
                let mut text = vec![0u8; len];
                read_exact(r, &mut text)?;
                Ok(ClientMessage::CutText(text))
            }
            other => Err(RfbError::Protocol(format!("unknown client message type {other}"))),
        }
    }
}

/// Parses a 12-byte `RFB xxx.yyy\n` greeting into (major, minor).
pub fn parse_version(greeting: &[u8; 12]) -> Result<(u16, u16), RfbError> {
    let text = std::str::from_utf8(greeting)
        .map_err(|_| RfbError::Protocol("non-ascii version greeting".into()))?;
    let bad = || RfbError::Protocol(format!("malformed version greeting {text:?}"));
    let body = text
        .strip_prefix("RFB ")
        .and_then(|s| s.strip_suffix('\n'))
        .ok_or_else(bad)?;
    let (major, minor) = body.split_once('.').ok_or_else(bad)?;
    if major.len() != 3 || minor.len() != 3 {
        return Err(bad());
    }
    Ok((
        major.parse().map_err(|_| bad())?,
        minor.parse().map_err(|_| bad())?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pointer_golden_bytes() {
        assert_eq!(
            InputEvent::pointer(100, 200, 0).encode(),
            vec![0x05, 0x00, 0x00, 0x64, 0x00, 0xC8]
        );
        assert_eq!(
            InputEvent::pointer(0, 0, 1).encode(),
            vec![0x05, 0x01, 0x00, 0x00, 0x00, 0x00]
        );
    }

    #[test]
    fn key_golden_bytes() {
        assert_eq!(
            InputEvent::key(0x61, true).encode(),
            vec![0x04, 0x01, 0x00, 0x00, 0x00, 0x00, 0x00, 0x61]
        );
        assert_eq!(
            InputEvent::key(0xFF0D, false).encode(),
            vec![0x04, 0x00, 0x00, 0x00, 0x00, 0x00, 0xFF, 0x0D]
        );
    }

    #[test]
    fn pointer_bounds_are_exclusive() {
        assert!(InputEvent::pointer(639, 479, 0).check_bounds(640, 480).is_ok());
        assert!(matches!(
            InputEvent::pointer(640, 0, 0).check_bounds(640, 480),
            Err(RfbError::OutOfBounds { .. })
        ));
        assert!(InputEvent::pointer(0, 480, 0).check_bounds(640, 480).is_err());
    }

    #[test]
    fn version_parsing() {
        assert_eq!(parse_version(b"RFB 003.008\n").unwrap(), (3, 8));
        assert_eq!(parse_version(b"RFB 003.889\n").unwrap(), (3, 889));
        assert!(parse_version(b"RFB 3.8    \n").is_err());
        assert!(parse_version(b"HTTP/1.1 200").is_err());
    }

    #[test]
    fn truncated_message_is_reported() {
        let bytes = [CLIENT_POINTER_EVENT, 1, 0];
        assert!(matches!(
            ClientMessage::read_from(&mut &bytes[..]),
            Err(RfbError::Truncated)
        ));
    }

    fn arb_message() -> impl Strategy<Value = ClientMessage> {
        prop_oneof![
            (any::<u16>(), any::<u16>(), any::<u8>())
                .prop_map(|(x, y, mask)| ClientMessage::Input(InputEvent::pointer(x, y, mask))),
            (any::<u32>(), any::<bool>())
                .prop_map(|(k, d)| ClientMessage::Input(InputEvent::key(k, d))),
            prop::collection::vec(any::<i32>(), 0..8).prop_map(ClientMessage::SetEncodings),
            (any::<bool>(), any::<[u16; 4]>()).prop_map(|(incremental, r)| {
                ClientMessage::UpdateRequest {
                    incremental,
                    rect: Rect::new(r[0], r[1], r[2], r[3]),
                }
            }),
            prop::collection::vec(any::<u8>(), 0..32).prop_map(ClientMessage::CutText),
            Just(ClientMessage::SetPixelFormat(PixelFormat::rgb565())),
            Just(ClientMessage::SetPixelFormat(PixelFormat::bgrx8888())),
        ]
    }

    proptest! {
        #[test]
        fn serialize_parse_identity(msg in arb_message()) {
            let bytes = msg.encode();
            let mut cursor = &bytes[..];
            let back = ClientMessage::read_from(&mut cursor).unwrap();
            prop_assert_eq!(back, msg);
            prop_assert!(cursor.is_empty());
        }
    }
}
