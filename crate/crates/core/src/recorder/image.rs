use std::io::Cursor;

use super::{Frame, RecorderError};

pub fn encode_png(width: u16, height: u16, rgba: &[u8]) -> Result<Vec<u8>, RecorderError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(png::ColorType::Rgba);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Fast);
        let mut w = enc
            .write_header()
            .map_err(|e| RecorderError::Image(e.to_string()))?;
        w.write_image_data(rgba)
            .map_err(|e| RecorderError::Image(e.to_string()))?;
    }
    Ok(out)
}

/// Decodes an 8-bit RGBA PNG; other layouts are rejected rather than converted.
pub fn decode_png(bytes: &[u8]) -> Result<(u16, u16, Vec<u8>), RecorderError> {
    let bad = |e: String| RecorderError::Image(e);
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| bad(e.to_string()))?;
    let (color, depth) = reader.output_color_type();
    if color != png::ColorType::Rgba || depth != png::BitDepth::Eight {
        return Err(bad(format!("expected 8-bit RGBA, got {color:?}/{depth:?}")));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| bad("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| bad(e.to_string()))?;
    buf.truncate(info.buffer_size());
    let (w, h) = (info.width, info.height);
    if w > u16::MAX as u32 || h > u16::MAX as u32 {
        return Err(bad(format!("{w}x{h} exceeds framebuffer limits")));
    }
    Ok((w as u16, h as u16, buf))
}

impl Frame {
    pub fn to_png(&self) -> Result<Vec<u8>, RecorderError> {
        encode_png(self.width, self.height, &self.pixels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip() {
        let px: Vec<u8> = (0..3 * 2 * 4).map(|i| (i * 7) as u8).collect();
        let bytes = encode_png(3, 2, &px).unwrap();
        assert_eq!(&bytes[..8], b"\x89PNG\r\n\x1a\n");
        assert_eq!(decode_png(&bytes).unwrap(), (3, 2, px));
    }
}
