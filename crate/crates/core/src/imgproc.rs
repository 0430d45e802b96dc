//! Frame containers, the RGB to YUV transform and U/V chroma-difference
//! background suppression.
//!
//! Bubbles and specular reflections in an aquarium are close to achromatic,
//! so under a full-range transform their U and V samples coincide and the
//! chroma difference `|U - V|` removes them, while saturated subjects keep a
//! strong response.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Chroma offset applied to U and V in the full-range transform.
pub const CHROMA_OFFSET: f64 = 128.0;

/// An 8-bit interleaved RGB frame stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbFrame {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbFrame {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParams(format!(
                "frame dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != 3 * width * height {
            return Err(Error::InvalidParams(format!(
                "rgb buffer has {} bytes, expected {}",
                data.len(),
                3 * width * height
            )));
        }
        Ok(Self { width, height, data })
    }

    /// A frame filled with one color.
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let data = rgb.iter().copied().cycle().take(3 * width * height).collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Three full-resolution real-valued planes. U and V carry the +128 offset.
#[derive(Debug, Clone, PartialEq)]
pub struct YuvFrame {
    width: usize,
    height: usize,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl YuvFrame {
    pub fn new(width: usize, height: usize, y: Vec<f64>, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        let n = width * height;
        if width == 0 || height == 0 || y.len() != n || u.len() != n || v.len() != n {
            return Err(Error::InvalidParams(format!(
                "yuv planes do not match {width}x{height}"
            )));
        }
        Ok(Self { width, height, y, u, v })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// The Y plane as a luma field.
    pub fn luma(&self) -> ScalarField {
        ScalarField {
            width: self.width,
            height: self.height,
            data: self.y.clone(),
            kind: FieldKind::Luma,
        }
    }
}

/// What a [`ScalarField`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    ChromaDifference,
    Luma,
    Magnitude,
    Angle,
}

/// A single-channel real image stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    width: usize,
    height: usize,
    data: Vec<f64>,
    kind: FieldKind,
}

impl ScalarField {
    pub fn new(width: usize, height: usize, data: Vec<f64>, kind: FieldKind) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::InvalidParams(format!(
                "scalar field has {} samples, expected {width}x{height}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "non-finite sample at ({}, {})",
                i % width,
                i / width
            )));
        }
        Ok(Self {
            width,
            height,
            data,
            kind,
        })
    }

    /// Builds a field by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, kind: FieldKind, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let data = (0..width * height).map(|i| f(i % width, i / width)).collect();
        Self::new(width, height, data, kind)
    }

    pub fn zeros(width: usize, height: usize, kind: FieldKind) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
            kind,
        }
    }

    pub(crate) fn from_parts_unchecked(width: usize, height: usize, data: Vec<f64>, kind: FieldKind) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
            kind,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn with_kind(mut self, kind: FieldKind) -> Self {
        self.kind = kind;
        self
    }
}

/// Full-range BT.601 forward transform of one pixel, returning `(y, u, v)`.
#[inline]
pub fn rgb_pixel_to_yuv(rgb: [u8; 3]) -> (f64, f64, f64) {
    let (r, g, b) = (rgb[0] as f64, rgb[1] as f64, rgb[2] as f64);
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    // u = 0.5b - 0.168736r - 0.331264g and v = 0.5r - 0.418688g - 0.081312b,
    // written over channel differences so r = g = b cancels exactly.
    let u = CHROMA_OFFSET + (0.5 * (b - g) + 0.168736 * (g - r));
    let v = CHROMA_OFFSET + (0.5 * (r - g) + 0.081312 * (g - b));
    (y, u, v)
}

/// Converts a frame to full-range YUV. Stored values are not clamped.
pub fn rgb_to_yuv(frame: &RgbFrame) -> YuvFrame {
    let n = frame.width * frame.height;
    let mut y = vec![0.0; n];
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let w = frame.width;
    y.par_chunks_mut(w)
        .zip(u.par_chunks_mut(w))
        .zip(v.par_chunks_mut(w))
        .enumerate()
        .for_each(|(row, ((yr, ur), vr))| {
            let src = &frame.data[3 * row * w..3 * (row + 1) * w];
            for (i, px) in src.chunks_exact(3).enumerate() {
                let (py, pu, pv) = rgb_pixel_to_yuv([px[0], px[1], px[2]]);
                yr[i] = py;
                ur[i] = pu;
                vr[i] = pv;
            }
        });
    YuvFrame {
        width: frame.width,
        height: frame.height,
        y,
        u,
        v,
    }
}

/// Per-pixel `|U - V|`. Achromatic pixels map to exactly zero.
pub fn chroma_difference(frame: &YuvFrame) -> ScalarField {
    let data = frame
        .u
        .par_iter()
        .zip(frame.v.par_iter())
        .map(|(u, v)| (u - v).abs())
        .collect();
    ScalarField::from_parts_unchecked(frame.width, frame.height, data, FieldKind::ChromaDifference)
}

/// Rec.601 luma of an RGB frame as a field.
pub fn luma(frame: &RgbFrame) -> ScalarField {
    let data = frame
        .data
        .par_chunks_exact(3)
        .map(|px| rgb_pixel_to_yuv([px[0], px[1], px[2]]).0)
        .collect();
    ScalarField::from_parts_unchecked(frame.width, frame.height, data, FieldKind::Luma)
}
