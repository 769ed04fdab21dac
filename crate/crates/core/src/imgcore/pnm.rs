//! Binary PGM (P5) / PPM (P6) codec, maxval 255 only.

use std::fs;
use std::path::Path;

use super::{GrayImage, ImageError};

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.buf.len() {
            match self.buf[self.pos] {
                b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c => self.pos += 1,
                b'#' => {
                    while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize, ImageError> {
        self.skip_space_and_comments();
        let start = self.pos;
        let mut value: usize = 0;
        while self.pos < self.buf.len() && self.buf[self.pos].is_ascii_digit() {
            value = value
                .checked_mul(10)
                .and_then(|v| v.checked_add((self.buf[self.pos] - b'0') as usize))
                .ok_or_else(|| ImageError::parse(start, format!("{what} overflows")))?;
            self.pos += 1;
        }
        if self.pos == start {
            return Err(ImageError::parse(start, format!("expected {what}")));
        }
        Ok(value)
    }
}

/// Rec.601 luma with integer rounding: (299 R + 587 G + 114 B + 500) / 1000.
#[inline]
pub(crate) fn luma601(r: u8, g: u8, b: u8) -> u8 {
    ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
}

/// Decodes a P5 or P6 buffer. Colour input is reduced to luminance.
pub fn decode_pnm(buf: &[u8]) -> Result<GrayImage, ImageError> {
    if buf.len() < 2 || buf[0] != b'P' || !(buf[1] == b'5' || buf[1] == b'6') {
        return Err(ImageError::parse(0, "expected P5 or P6 magic"));
    }
    let channels = if buf[1] == b'5' { 1 } else { 3 };
    let mut cur = Cursor { buf, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    cur.skip_space_and_comments();
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(ImageError::parse(maxval_at, format!("maxval {maxval} unsupported, need 255")));
    }
    if width == 0 || height == 0 {
        return Err(ImageError::parse(2, "zero image dimension"));
    }
    match buf.get(cur.pos) {
        Some(c) if c.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(ImageError::parse(cur.pos, "expected single whitespace after maxval")),
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| ImageError::parse(2, "dimensions overflow"))?;
    let payload = &buf[cur.pos..];
    if payload.len() < need {
        return Err(ImageError::parse(
            buf.len(),
            format!("truncated payload: {} of {need} bytes", payload.len()),
        ));
    }
    let data = if channels == 1 {
        payload[..need].to_vec()
    } else {
        payload[..need]
            .chunks_exact(3)
            .map(|p| luma601(p[0], p[1], p[2]))
            .collect()
    };
    GrayImage::from_vec(width, height, data)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage, ImageError> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| ImageError::io(path, e))?;
    decode_pnm(&buf)
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.data());
    out
}

/// Encodes interleaved RGB as P6.
pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    assert_eq!(rgb.len(), width * height * 3);
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

pub fn save_image(img: &GrayImage, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(img)).map_err(|e| ImageError::io(path, e))
}

pub fn save_ppm(width: usize, height: usize, rgb: &[u8], path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(width, height, rgb)).map_err(|e| ImageError::io(path, e))
}
