use std::io::Read;

use super::wire::{read_u16, read_u8};
use super::RfbError;

/// Wire pixel layout negotiated with the server.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PixelFormat {
    pub bits_per_pixel: u8,
    pub depth: u8,
    pub big_endian: bool,
    pub true_color: bool,
    pub red_max: u16,
    pub green_max: u16,
    pub blue_max: u16,
    pub red_shift: u8,
    pub green_shift: u8,
    pub blue_shift: u8,
}

impl PixelFormat {
    /// 32bpp little-endian true colour laid out so that the wire bytes are `R G B x`.
    pub const fn rgba8888() -> Self {
        PixelFormat {
            bits_per_pixel: 32,
            depth: 24,
            big_endian: false,
            true_color: true,
            red_max: 255,
            green_max: 255,
            blue_max: 255,
            red_shift: 0,
            green_shift: 8,
            blue_shift: 16,
        }
    }

    /// The common X server layout, `B G R x` on the wire.
    pub const fn bgrx8888() -> Self {
        PixelFormat {
            red_shift: 16,
            blue_shift: 0,
            ..Self::rgba8888()
        }
    }

    pub const fn rgb565() -> Self {
        PixelFormat {
            bits_per_pixel: 16,
            depth: 16,
            big_endian: false,
            true_color: true,
            red_max: 31,
            green_max: 63,
            blue_max: 31,
            red_shift: 11,
            green_shift: 5,
            blue_shift: 0,
        }
    }

    pub const fn bgr233() -> Self {
        PixelFormat {
            bits_per_pixel: 8,
            depth: 8,
            big_endian: false,
            true_color: true,
            red_max: 7,
            green_max: 7,
            blue_max: 3,
            red_shift: 0,
            green_shift: 3,
            blue_shift: 6,
        }
    }

    pub fn bytes_per_pixel(&self) -> usize {
        self.bits_per_pixel as usize / 8
    }

    pub fn validate(&self) -> Result<(), RfbError> {
        let bad = |msg: String| Err(RfbError::Protocol(format!("invalid pixel format: {msg}")));
        if !matches!(self.bits_per_pixel, 8 | 16 | 32) {
            return bad(format!("bits-per-pixel {}", self.bits_per_pixel));
        }
        if self.depth == 0 || self.depth > self.bits_per_pixel {
            return bad(format!("depth {} with {} bpp", self.depth, self.bits_per_pixel));
        }
        if !self.true_color {
            return Ok(());
        }
        let mut used: u32 = 0;
        for (max, shift) in self.channels() {
            if max == 0 || (max as u32 + 1).count_ones() != 1 {
                return bad(format!("channel max {max} is not 2^k - 1"));
            }
            let bits = (max as u32 + 1).trailing_zeros();
            if shift as u32 + bits > self.bits_per_pixel as u32 {
                return bad(format!("channel at shift {shift} exceeds pixel width"));
            }
            let mask = (max as u32) << shift;
            if used & mask != 0 {
                return bad("channels overlap".into());
            }
            used |= mask;
        }
        Ok(())
    }

    fn channels(&self) -> [(u16, u8); 3] {
        [
            (self.red_max, self.red_shift),
            (self.green_max, self.green_shift),
            (self.blue_max, self.blue_shift),
        ]
    }

    /// Converts one wire pixel (exactly `bytes_per_pixel` bytes) into RGBA8888.
    pub fn decode_pixel(&self, bytes: &[u8]) -> [u8; 4] {
        let value = self.read_value(bytes);
        let mut out = [0, 0, 0, 255];
        for (slot, (max, shift)) in out.iter_mut().zip(self.channels()) {
            let raw = (value >> shift) & max as u32;
            *slot = ((raw * 255 + max as u32 / 2) / max as u32) as u8;
        }
        out
    }

    /// Inverse of [`decode_pixel`](Self::decode_pixel), rounding to the nearest level.
    pub fn encode_pixel(&self, rgba: [u8; 4], out: &mut Vec<u8>) {
        let mut value = 0u32;
        for (component, (max, shift)) in rgba.iter().zip(self.channels()) {
            let level = (*component as u32 * max as u32 + 127) / 255;
            value |= level << shift;
        }
        let bpp = self.bytes_per_pixel();
        match (bpp, self.big_endian) {
            (1, _) => out.push(value as u8),
            (2, false) => out.extend_from_slice(&(value as u16).to_le_bytes()),
            (2, true) => out.extend_from_slice(&(value as u16).to_be_bytes()),
            (_, false) => out.extend_from_slice(&value.to_le_bytes()),
            (_, true) => out.extend_from_slice(&value.to_be_bytes()),
        }
    }

    fn read_value(&self, bytes: &[u8]) -> u32 {
        match (self.bytes_per_pixel(), self.big_endian) {
            (1, _) => bytes[0] as u32,
            (2, false) => u16::from_le_bytes([bytes[0], bytes[1]]) as u32,
            (2, true) => u16::from_be_bytes([bytes[0], bytes[1]]) as u32,
            (_, false) => u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]),
            (_, true) => u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]),
        }
    }

    /// 16-byte wire form (13 significant bytes plus 3 padding bytes).
    pub fn to_bytes(&self) -> [u8; 16] {
        let mut b = [0u8; 16];
        b[0] = self.bits_per_pixel;
        b[1] = self.depth;
        b[2] = self.big_endian as u8;
        b[3] = self.true_color as u8;
        b[4..6].copy_from_slice(&self.red_max.to_be_bytes());
        b[6..8].copy_from_slice(&self.green_max.to_be_bytes());
        b[8..10].copy_from_slice(&self.blue_max.to_be_bytes());
        b[10] = self.red_shift;
        b[11] = self.green_shift;
        b[12] = self.blue_shift;
        b
    }

    pub fn read_from<R: Read + ?Sized>(r: &mut R) -> Result<Self, RfbError> {
        let pf = PixelFormat {
            bits_per_pixel: read_u8(r)?,
            depth: read_u8(r)?,
            big_endian: read_u8(r)? != 0,
            true_color: read_u8(r)? != 0,
            red_max: read_u16(r)?,
            green_max: read_u16(r)?,
            blue_max: read_u16(r)?,
            red_shift: read_u8(r)?,
            green_shift: read_u8(r)?,
            blue_shift: read_u8(r)?,
        };
        let mut pad = [0u8; 3];
        super::wire::read_exact(r, &mut pad)?;
        Ok(pf)
    }
}

impl Default for PixelFormat {
    fn default() -> Self {
        Self::rgba8888()
    }
}
