//! Binary PGM (P5) and PPM (P6) with maxval 255.
//!
//! Masks are stored as PGM with 0 for background and 255 for foreground;
//! any nonzero sample reads back as foreground.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mask::{BitMask, GrayImage, RgbImage};

pub fn encode_pgm(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.data());
    out
}

pub fn encode_ppm(image: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.data());
    out
}

pub fn mask_to_gray(mask: &BitMask) -> GrayImage {
    GrayImage::from_fn(mask.width(), mask.height(), |x, y| {
        if mask.get(x, y) {
            255
        } else {
            0
        }
    })
}

pub fn gray_to_mask(image: &GrayImage) -> BitMask {
    BitMask::from_fn(image.width(), image.height(), |x, y| image.get(x, y) != 0)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let (w, h, body) = parse_header(bytes, b"P5")?;
    GrayImage::new(w, h, body[..w * h].to_vec())
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let (w, h, body) = parse_header(bytes, b"P6")?;
    RgbImage::new(w, h, body[..3 * w * h].to_vec())
}

fn parse_header<'a>(bytes: &'a [u8], magic: &[u8]) -> Result<(usize, usize, &'a [u8])> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::Image(format!(
            "expected magic {}",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Whitespace and `#` comments between header tokens.
        loop {
            match bytes.get(pos) {
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Image("truncated header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Image("bad header number".into()))?;
    }
    // Exactly one whitespace byte separates the header from the raster.
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Image("missing raster separator".into()));
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(Error::Image(format!("unsupported maxval {maxval}")));
    }
    if w == 0 || h == 0 {
        return Err(Error::Image("zero-sized raster".into()));
    }
    let channels = if magic == b"P6" { 3 } else { 1 };
    let body = &bytes[pos..];
    if body.len() < channels * w * h {
        return Err(Error::Image(format!(
            "raster has {} bytes, expected {}",
            body.len(),
            channels * w * h
        )));
    }
    Ok((w, h, body))
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<BitMask> {
    read_pgm(path).map(|g| gray_to_mask(&g))
}

pub fn write_pgm(path: impl AsRef<Path>, image: &GrayImage) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(image)).map_err(|e| Error::io(path, e))
}

pub fn write_mask(path: impl AsRef<Path>, mask: &BitMask) -> Result<()> {
    write_pgm(path, &mask_to_gray(mask))
}

pub fn write_ppm(path: impl AsRef<Path>, image: &RgbImage) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(image)).map_err(|e| Error::io(path, e))
}
