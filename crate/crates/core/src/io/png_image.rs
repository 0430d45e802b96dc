//! 8-bit PNG via the `png` crate.

use std::io::Cursor;

use png::{BitDepth, ColorType, Transformations};

use crate::error::{Error, Result};
use crate::imgproc::{FieldKind, RgbFrame, ScalarField};

use super::Frame;

/// Decodes an 8-bit PNG. Palette images are expanded, alpha is dropped and
/// grayscale images become luma frames.
pub fn decode(bytes: &[u8], index: usize) -> Result<Frame> {
    let corrupt = |reason: String| Error::CorruptFrame { index, reason };
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| corrupt(e.to_string()))?;
    let depth = reader.info().bit_depth;
    if depth == BitDepth::Sixteen {
        return Err(Error::UnsupportedFormat(format!("frame {index}: 16-bit PNG")));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| corrupt("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| corrupt(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        ColorType::Indexed => unreachable!("palette is expanded"),
    };
    let pixels = buf[..info.line_size * h]
        .chunks(info.line_size)
        .flat_map(|line| line[..w * channels].chunks(channels));
    if channels <= 2 {
        let data = pixels.map(|p| p[0] as f64).collect();
        Ok(Frame::Luma(ScalarField::new(w, h, data, FieldKind::Luma)?))
    } else {
        let data = pixels.flat_map(|p| [p[0], p[1], p[2]]).collect();
        Ok(Frame::Rgb(RgbFrame::new(w, h, data)?))
    }
}

/// Encodes an RGB frame as an 8-bit PNG.
pub fn encode(frame: &RgbFrame) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, frame.width() as u32, frame.height() as u32);
    enc.set_color(ColorType::Rgb);
    enc.set_depth(BitDepth::Eight);
    let encoding = |e: png::EncodingError| Error::UnsupportedFormat(format!("png encoding: {e}"));
    let mut writer = enc.write_header().map_err(encoding)?;
    writer.write_image_data(frame.data()).map_err(encoding)?;
    writer.finish().map_err(encoding)?;
    Ok(out)
}
