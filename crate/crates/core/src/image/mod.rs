//! Image side of the pipeline: decoding, resizing to the network input and
//! the explicit `(width, height, aspect, faces)` vector.

mod decode;
mod faces;

use serde::{Deserialize, Serialize};

pub use decode::{decode_bytes, decode_path, encode_ppm};
pub use faces::{heuristic_face_count, is_skin};

use crate::error::{Error, Result};

/// Side of the square network input.
pub const IMAGE_SIDE: usize = 50;
pub const IMAGE_FEATURE_DIM: usize = 4;
pub const IMAGE_FEATURE_NAMES: [&str; IMAGE_FEATURE_DIM] = ["width_px", "height_px", "aspect_ratio", "face_count"];

/// 8-bit RGB raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples.
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn mirrored(&self) -> Self {
        let mut out = Self::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.set_pixel(self.width - 1 - x, y, self.pixel(x, y));
            }
        }
        out
    }
}

/// Square `side × side × 3` tensor with channel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensorInput {
    pub side: usize,
    pub data: Vec<f32>,
}

impl ImageTensorInput {
    pub fn zeros(side: usize) -> Self {
        ImageTensorInput {
            side,
            data: vec![0.0; side * side * 3],
        }
    }

    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.side + x) * 3 + c]
    }

    pub fn mirrored(&self) -> Self {
        let s = self.side;
        let mut out = Self::zeros(s);
        for y in 0..s {
            for x in 0..s {
                for c in 0..3 {
                    out.data[(y * s + (s - 1 - x)) * 3 + c] = self.at(y, x, c);
                }
            }
        }
        out
    }
}

/// Bilinear resampling with pixel-centre alignment, scaled by 1/255.
pub fn resize_bilinear(img: &RgbImage, side: usize) -> ImageTensorInput {
    let mut out = ImageTensorInput::zeros(side);
    let sample_axis = |dst: usize, src_len: usize| -> (usize, usize, f64) {
        let scale = src_len as f64 / side as f64;
        let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
        let lo = s.floor() as usize;
        let hi = (lo + 1).min(src_len - 1);
        (lo, hi, s - lo as f64)
    };
    for y in 0..side {
        let (y0, y1, fy) = sample_axis(y, img.height);
        for x in 0..side {
            let (x0, x1, fx) = sample_axis(x, img.width);
            let (p00, p01, p10, p11) = (img.pixel(x0, y0), img.pixel(x1, y0), img.pixel(x0, y1), img.pixel(x1, y1));
            for c in 0..3 {
                let top = p00[c] as f64 * (1.0 - fx) + p01[c] as f64 * fx;
                let bottom = p10[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                out.data[(y * side + x) * 3 + c] = (v / 255.0) as f32;
            }
        }
    }
    out
}

/// Decodes an encoded raster and resizes it to the network input.
pub fn decode_and_resize(bytes: &[u8], side: usize) -> Result<(ImageTensorInput, (usize, usize))> {
    let img = decode_bytes(bytes)?;
    Ok((resize_bilinear(&img, side), (img.width, img.height)))
}

/// Result of loading a news image, with the zero-tensor convention applied
/// to missing or undecodable files.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedImage {
    pub tensor: ImageTensorInput,
    pub original_dims: Option<(usize, usize)>,
    pub missing: bool,
}

impl LoadedImage {
    pub fn missing(side: usize) -> Self {
        LoadedImage {
            tensor: ImageTensorInput::zeros(side),
            original_dims: None,
            missing: true,
        }
    }

    pub fn from_raster(img: &RgbImage, side: usize) -> Self {
        LoadedImage {
            tensor: resize_bilinear(img, side),
            original_dims: Some((img.width, img.height)),
            missing: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImageExplicitVector {
    pub width_px: f64,
    pub height_px: f64,
    pub aspect_ratio: f64,
    pub face_count: f64,
}

impl ImageExplicitVector {
    pub fn to_array(&self) -> [f64; IMAGE_FEATURE_DIM] {
        [self.width_px, self.height_px, self.aspect_ratio, self.face_count]
    }
}

/// `(w, h, w / h, faces)` from the original dimensions. A dataset-provided
/// face count takes precedence over `fallback`.
pub fn extract_image_explicit(original_dims: (usize, usize), face_count: Option<f64>, fallback: impl FnOnce() -> f64) -> Result<ImageExplicitVector> {
    let (w, h) = original_dims;
    if w == 0 || h == 0 {
        return Err(Error::Image(format!("image has a zero dimension ({w}x{h})")));
    }
    let faces = match face_count {
        Some(f) if f.is_finite() && f >= 0.0 => f,
        Some(f) => return Err(Error::Image(format!("face count must be a nonnegative number, got {f}"))),
        None => fallback(),
    };
    Ok(ImageExplicitVector {
        width_px: w as f64,
        height_px: h as f64,
        aspect_ratio: w as f64 / h as f64,
        face_count: faces,
    })
}

/// Explicit vector for a loaded image; all zeros when the image is missing.
pub fn explicit_for(loaded: &LoadedImage, face_count: Option<f64>) -> Result<ImageExplicitVector> {
    match loaded.original_dims {
        None => Ok(ImageExplicitVector::default()),
        Some(dims) => extract_image_explicit(dims, face_count, || heuristic_face_count(&loaded.tensor)),
    }
}
