use serde::{Deserialize, Serialize};

use super::RfbError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: u16,
    pub y: u16,
    pub w: u16,
    pub h: u16,
}

impl Rect {
    pub const fn new(x: u16, y: u16, w: u16, h: u16) -> Self {
        Rect { x, y, w, h }
    }

    pub fn area(&self) -> usize {
        self.w as usize * self.h as usize
    }

    pub fn fits_in(&self, width: u16, height: u16) -> bool {
        self.x as u32 + self.w as u32 <= width as u32 && self.y as u32 + self.h as u32 <= height as u32
    }
}

/// Client-side copy of the remote screen, always stored as RGBA8888.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Framebuffer {
    width: u16,
    height: u16,
    pixels: Vec<u8>,
    generation: u64,
}

impl Framebuffer {
    pub fn new(width: u16, height: u16) -> Result<Self, RfbError> {
        if width == 0 || height == 0 {
            return Err(RfbError::Protocol(format!(
                "degenerate framebuffer {width}x{height}"
            )));
        }
        let mut pixels = vec![0u8; width as usize * height as usize * 4];
        for px in pixels.chunks_exact_mut(4) {
            px[3] = 255;
        }
        Ok(Framebuffer {
            width,
            height,
            pixels,
            generation: 0,
        })
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub(crate) fn bump_generation(&mut self) {
        self.generation += 1;
    }

    pub fn pixel(&self, x: u16, y: u16) -> [u8; 4] {
        let i = self.offset(x, y);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2], self.pixels[i + 3]]
    }

    fn offset(&self, x: u16, y: u16) -> usize {
        (y as usize * self.width as usize + x as usize) * 4
    }

    fn check(&self, rect: Rect) -> Result<(), RfbError> {
        if rect.fits_in(self.width, self.height) {
            Ok(())
        } else {
            Err(RfbError::Protocol(format!(
                "rect {rect:?} outside {}x{} framebuffer",
                self.width, self.height
            )))
        }
    }

    /// Writes an RGBA tile of exactly `rect.area() * 4` bytes.
    pub fn blit(&mut self, rect: Rect, rgba: &[u8]) -> Result<(), RfbError> {
        self.check(rect)?;
        debug_assert_eq!(rgba.len(), rect.area() * 4);
        let row = rect.w as usize * 4;
        for (dy, src) in rgba.chunks_exact(row.max(1)).take(rect.h as usize).enumerate() {
            let start = self.offset(rect.x, rect.y + dy as u16);
            self.pixels[start..start + row].copy_from_slice(src);
        }
        Ok(())
    }

    pub fn tile(&self, rect: Rect) -> Result<Vec<u8>, RfbError> {
        self.check(rect)?;
        let row = rect.w as usize * 4;
        let mut out = Vec::with_capacity(rect.area() * 4);
        for dy in 0..rect.h {
            let start = self.offset(rect.x, rect.y + dy);
            out.extend_from_slice(&self.pixels[start..start + row]);
        }
        Ok(out)
    }

    /// CopyRect: reads the source region before writing, so overlapping moves are safe.
    pub fn copy_within(&mut self, dst: Rect, src_x: u16, src_y: u16) -> Result<Vec<u8>, RfbError> {
        let src = Rect::new(src_x, src_y, dst.w, dst.h);
        self.check(dst)?;
        let tile = self.tile(src)?;
        self.blit(dst, &tile)?;
        Ok(tile)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_empty() {
        assert!(Framebuffer::new(0, 5).is_err());
        let fb = Framebuffer::new(3, 2).unwrap();
        assert_eq!(fb.pixels().len(), 3 * 2 * 4);
        assert_eq!(fb.pixel(2, 1), [0, 0, 0, 255]);
    }

    #[test]
    fn copy_overlapping_shift_right() {
        let mut fb = Framebuffer::new(3, 1).unwrap();
        fb.blit(Rect::new(0, 0, 2, 1), &[1, 1, 1, 255, 2, 2, 2, 255]).unwrap();
        fb.copy_within(Rect::new(1, 0, 2, 1), 0, 0).unwrap();
        assert_eq!(fb.pixel(0, 0), [1, 1, 1, 255]);
        assert_eq!(fb.pixel(1, 0), [1, 1, 1, 255]);
        assert_eq!(fb.pixel(2, 0), [2, 2, 2, 255]);
    }

    #[test]
    fn out_of_range_rect() {
        let mut fb = Framebuffer::new(4, 4).unwrap();
        assert!(fb.blit(Rect::new(3, 3, 2, 1), &[0; 8]).is_err());
        assert!(fb.copy_within(Rect::new(0, 0, 2, 2), 3, 3).is_err());
    }
}
