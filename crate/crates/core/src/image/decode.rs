use std::fs;
use std::path::Path;

use super::RgbImage;
use crate::error::{Error, Result};

/// Binary PPM (P6) with maxval up to 255.
fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Image("malformed PPM header".into()))?;
    }
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::Image("malformed PPM header".into()));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::Image(format!("image has a zero dimension ({width}x{height})")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::Image(format!("unsupported PPM maxval {maxval}")));
    }
    let n = width * height * 3;
    let raw = bytes.get(pos..pos + n).ok_or_else(|| Error::Image("truncated PPM pixel data".into()))?;
    let data = if maxval == 255 {
        raw.to_vec()
    } else {
        raw.iter().map(|&v| ((v as usize * 255 + maxval / 2) / maxval).min(255) as u8).collect()
    };
    Ok(RgbImage { width, height, data })
}

/// Decodes PPM, PNG or JPEG bytes. Grayscale inputs are replicated to three channels.
pub fn decode_bytes(bytes: &[u8]) -> Result<RgbImage> {
    if bytes.starts_with(b"P6") {
        return decode_ppm(bytes);
    }
    let img = image::load_from_memory(bytes).map_err(|e| Error::Image(e.to_string()))?.to_rgb8();
    let (width, height) = (img.width() as usize, img.height() as usize);
    if width == 0 || height == 0 {
        return Err(Error::Image("image has a zero dimension".into()));
    }
    Ok(RgbImage {
        width,
        height,
        data: img.into_raw(),
    })
}

pub fn decode_path(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    decode_bytes(&bytes).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}
