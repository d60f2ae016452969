//! Binary PGM (`P5`) and PPM (`P6`) at 8 bits per sample.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::BinaryImage;
use crate::patching::ImageBuffer;

/// Anything that can be written as an 8-bit PNM file.
pub trait ToPnm {
    fn to_pnm(&self) -> Vec<u8>;
}

fn header(magic: &str, width: usize, height: usize) -> Vec<u8> {
    format!("{magic}\n{width} {height}\n255\n").into_bytes()
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

impl ToPnm for ImageBuffer {
    fn to_pnm(&self) -> Vec<u8> {
        let magic = if self.channels() == 1 { "P5" } else { "P6" };
        let mut out = header(magic, self.width(), self.height());
        out.extend(self.data().iter().map(|&v| quantize(v)));
        out
    }
}

impl ToPnm for BinaryImage {
    fn to_pnm(&self) -> Vec<u8> {
        let mut out = header("P5", self.width(), self.height());
        out.extend(self.data().iter().map(|&v| v * 255));
        out
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
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
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::ImageFormat(format!("missing or invalid {what} in header")))
    }
}

/// Parses `P5`/`P6` bytes. Samples map to `v / 255`.
pub fn decode_pnm(bytes: &[u8]) -> Result<ImageBuffer> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => {
            return Err(Error::ImageFormat(
                "unsupported format, expected binary PGM (P5) or PPM (P6)".into(),
            ))
        }
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(Error::ImageFormat(format!(
            "maxval must be 255, got {maxval}"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::ImageFormat(format!("empty image {width}x{height}")));
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::ImageFormat(
            "header not terminated by whitespace".into(),
        ));
    }
    let payload = &bytes[cur.pos + 1..];
    let need = width * height * channels;
    if payload.len() < need {
        return Err(Error::ImageFormat(format!(
            "truncated payload: {} of {need} bytes",
            payload.len()
        )));
    }
    let data = payload[..need].iter().map(|&b| b as f32 / 255.0).collect();
    ImageBuffer::new(height, width, channels, data)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes).map_err(|e| match e {
        Error::ImageFormat(msg) => Error::ImageFormat(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Loads any supported image and binarizes its channel mean at 0.5.
pub fn load_binary(path: impl AsRef<Path>) -> Result<BinaryImage> {
    Ok(crate::metrics::binarize(&load_image(path)?, 0.5))
}

pub fn save_image<I: ToPnm + ?Sized>(path: impl AsRef<Path>, img: &I) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, img.to_pnm()).map_err(|e| Error::io(path, e))
}
