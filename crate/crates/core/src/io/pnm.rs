//! Binary PGM (`P5`) and PPM (`P6`).

use crate::error::{Error, Result};
use crate::imgproc::{FieldKind, RgbFrame, ScalarField};

use super::Frame;

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> std::result::Result<Header, String> {
    if bytes.len() < 2 || bytes[0] != b'P' || !matches!(bytes[1], b'5' | b'6') {
        return Err("missing P5/P6 magic number".into());
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (k, field) in fields.iter_mut().enumerate() {
        // Whitespace and `#` comments may separate header fields.
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while !matches!(bytes.get(pos), Some(b'\n') | None) {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            let name = ["width", "height", "maxval"][k];
            return Err(format!("expected {name} at byte {start}"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("header value at byte {start} is out of range"))?;
    }
    // Exactly one whitespace byte separates the header from the raster.
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("header not terminated by whitespace".into());
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(format!("empty image {width}x{height}"));
    }
    if !(1..=65535).contains(&maxval) {
        return Err(format!("maxval {maxval} outside 1..=65535"));
    }
    Ok(Header {
        magic: [bytes[0], bytes[1]],
        width,
        height,
        maxval,
        data_start: pos + 1,
    })
}

/// Decodes a binary PGM (as luma) or PPM (as RGB). Samples with a maxval
/// other than 255 are rescaled to `0..=255`.
pub fn decode(bytes: &[u8], index: usize) -> Result<Frame> {
    let corrupt = |reason: String| Error::CorruptFrame { index, reason };
    let hd = parse_header(bytes).map_err(corrupt)?;
    let channels = if hd.magic[1] == b'6' { 3 } else { 1 };
    let bps = if hd.maxval > 255 { 2 } else { 1 };
    let count = hd
        .width
        .checked_mul(hd.height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| corrupt("image dimensions overflow".into()))?;
    let raster = &bytes[hd.data_start..];
    if raster.len() < count * bps {
        return Err(corrupt(format!(
            "raster holds {} bytes, {}x{} needs {}",
            raster.len(),
            hd.width,
            hd.height,
            count * bps
        )));
    }
    let scale = 255.0 / hd.maxval as f64;
    let sample = |i: usize| -> f64 {
        let v = if bps == 2 {
            u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as f64
        } else {
            raster[i] as f64
        };
        v.min(hd.maxval as f64) * scale
    };
    if channels == 1 {
        let data = (0..count).map(sample).collect();
        let field = ScalarField::new(hd.width, hd.height, data, FieldKind::Luma)?;
        Ok(Frame::Luma(field))
    } else {
        let data = if bps == 1 && hd.maxval == 255 {
            raster[..count].to_vec()
        } else {
            (0..count).map(|i| sample(i).round() as u8).collect()
        };
        Ok(Frame::Rgb(RgbFrame::new(hd.width, hd.height, data)?))
    }
}

/// Encodes an RGB frame as binary PPM.
pub fn encode_ppm(frame: &RgbFrame) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    out.extend_from_slice(frame.data());
    out
}

/// Encodes 8-bit samples as binary PGM.
pub fn encode_pgm(width: usize, height: usize, samples: &[u8]) -> Vec<u8> {
    debug_assert_eq!(samples.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(samples);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip() {
        let mut f = RgbFrame::filled(3, 2, [10, 20, 30]).unwrap();
        f.set_pixel(2, 1, [255, 0, 7]);
        match decode(&encode_ppm(&f), 0).unwrap() {
            Frame::Rgb(g) => assert_eq!(g, f),
            other => panic!("decoded as {other:?}"),
        }
    }

    #[test]
    fn pgm_decodes_to_luma() {
        let bytes = encode_pgm(2, 2, &[0, 64, 128, 255]);
        match decode(&bytes, 0).unwrap() {
            Frame::Luma(f) => {
                assert_eq!(f.data(), &[0.0, 64.0, 128.0, 255.0]);
                assert_eq!(f.kind(), FieldKind::Luma);
            }
            other => panic!("decoded as {other:?}"),
        }
    }

    #[test]
    fn comments_and_sixteen_bit() {
        let mut bytes = b"P5 # comment\n2 # w\n1\n65535\n".to_vec();
        bytes.extend_from_slice(&[0xff, 0xff, 0x00, 0x00]);
        match decode(&bytes, 0).unwrap() {
            Frame::Luma(f) => assert_eq!(f.data(), &[255.0, 0.0]),
            other => panic!("decoded as {other:?}"),
        }
        let bytes = b"P6 1 1 15\n\x0f\x00\x05".to_vec();
        match decode(&bytes, 0).unwrap() {
            Frame::Rgb(f) => assert_eq!(f.pixel(0, 0), [255, 0, 85]),
            other => panic!("decoded as {other:?}"),
        }
    }

    #[test]
    fn malformed_headers_are_rejected() {
        let cases: [&[u8]; 8] = [
            b"",
            b"P3\n1 1\n255\n\0\0\0",
            b"P6\n1\n",
            b"P6\n0 1\n255\n",
            b"P6\n1 1\n0\n\0\0\0",
            b"P6\n1 1\n255",
            b"P6\n2 2\n255\n\0\0\0",
            b"P5\n99999999999999999999999 1\n255\n",
        ];
        for (i, c) in cases.iter().enumerate() {
            let err = decode(c, i).unwrap_err();
            assert!(matches!(err, Error::CorruptFrame { index, .. } if index == i), "{err}");
        }
    }
}
