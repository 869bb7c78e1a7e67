//! Binary PPM (P6) and PGM (P5) images with 8-bit samples.

use std::path::Path;

use crate::error::{read_file, write_file, Error, Result};
use crate::tensor::Image;

fn bad(msg: impl Into<String>) -> Error {
    Error::InvalidImage(msg.into())
}

/// Quantizes a `[0, 1]` value to a byte.
pub fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos || self.pos - start > 9 {
            return Err(bad(format!("bad {what} in header at byte {start}")));
        }
        let s = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        Ok(s.parse().expect("at most 9 digits"))
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err(bad("not a binary PPM/PGM (expected P6 or P5 magic)")),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(bad(format!("empty image {width}x{height}")));
    }
    if maxval != 255 {
        return Err(bad(format!("maxval {maxval} unsupported; only 255")));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(bad("missing whitespace after maxval")),
    }
    let body = &bytes[cur.pos..];
    let expected = height
        .checked_mul(width)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| bad("image size overflows"))?;
    if body.len() != expected {
        return Err(bad(format!(
            "{width}x{height}x{channels} needs {expected} pixel bytes, found {}",
            body.len()
        )));
    }
    let data = body.iter().map(|&b| f64::from(b) / 255.0).collect();
    Image::new(height, width, channels, data)
}

/// Encodes as P6 (3 channels) or P5 (1 channel), quantizing each value.
pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let magic = if img.channels() == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| quantize(v)));
    out
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<Image> {
    decode_ppm(&read_file(path.as_ref())?)
}

pub fn save_ppm(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    write_file(path.as_ref(), &encode_ppm(img))
}
