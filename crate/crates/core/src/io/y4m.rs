//! YUV4MPEG2 streams with 4:2:0, 4:4:4 or monochrome sampling.

use std::io::{BufRead, ErrorKind, Read};
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::imgproc::{FieldKind, ScalarField, YuvFrame};

use super::Frame;

const MAX_HEADER: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Chroma {
    /// Chroma halved in both directions.
    C420,
    C444,
    /// Luma only.
    Mono,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Y4mHeader {
    pub width: usize,
    pub height: usize,
    pub fps: Option<f64>,
    pub chroma: Chroma,
    /// False for studio-range samples, which are expanded to full range on read.
    pub full_range: bool,
}

impl Y4mHeader {
    fn parse(line: &str) -> Result<Self> {
        let bad = |msg: String| Error::UnsupportedFormat(format!("YUV4MPEG2 header: {msg}"));
        let mut tokens = line.split(' ').filter(|t| !t.is_empty());
        if tokens.next() != Some("YUV4MPEG2") {
            return Err(bad("missing YUV4MPEG2 signature".into()));
        }
        let (mut width, mut height, mut fps) = (None, None, None);
        let mut chroma = Chroma::C420;
        let mut full_range = false;
        for t in tokens {
            let (tag, val) = t.split_at(1);
            match tag {
                "W" => width = Some(val.parse::<usize>().map_err(|_| bad(format!("bad width `{val}`")))?),
                "H" => height = Some(val.parse::<usize>().map_err(|_| bad(format!("bad height `{val}`")))?),
                "F" => {
                    let rate = val
                        .split_once(':')
                        .and_then(|(n, d)| Some((n.parse::<f64>().ok()?, d.parse::<f64>().ok()?)))
                        .filter(|(n, d)| *n > 0.0 && *d > 0.0)
                        .ok_or_else(|| bad(format!("bad frame rate `{val}`")))?;
                    fps = Some(rate.0 / rate.1);
                }
                "C" => {
                    chroma = match val {
                        "420" | "420jpeg" | "420paldv" | "420mpeg2" => Chroma::C420,
                        "444" => Chroma::C444,
                        "mono" => Chroma::Mono,
                        other => return Err(bad(format!("unsupported colorspace C{other}"))),
                    }
                }
                "X" => match val {
                    "COLORRANGE=FULL" => full_range = true,
                    "COLORRANGE=LIMITED" => full_range = false,
                    _ => {}
                },
                "I" | "A" => {}
                _ => return Err(bad(format!("unknown parameter `{t}`"))),
            }
        }
        let (width, height) = match (width, height) {
            (Some(w), Some(h)) if w > 0 && h > 0 => (w, h),
            _ => return Err(bad("missing or zero W/H".into())),
        };
        Ok(Self {
            width,
            height,
            fps,
            chroma,
            full_range,
        })
    }

    fn chroma_dims(&self) -> (usize, usize) {
        match self.chroma {
            Chroma::C420 => (self.width.div_ceil(2), self.height.div_ceil(2)),
            Chroma::C444 => (self.width, self.height),
            Chroma::Mono => (0, 0),
        }
    }
}

/// Sequential frame reader.
pub struct Y4mReader<R> {
    reader: R,
    path: PathBuf,
    header: Y4mHeader,
    index: usize,
    raw: Vec<u8>,
}

/// Reads one `\n`-terminated line of at most `MAX_HEADER` bytes. Returns
/// `None` at a clean end of stream.
fn read_line<R: BufRead>(r: &mut R, path: &PathBuf) -> Result<Option<Vec<u8>>> {
    let mut line = Vec::new();
    let n = r
        .by_ref()
        .take(MAX_HEADER as u64)
        .read_until(b'\n', &mut line)
        .map_err(|e| Error::io(path, e))?;
    if n == 0 {
        return Ok(None);
    }
    if line.last() != Some(&b'\n') {
        return Err(Error::UnsupportedFormat(format!(
            "{}: unterminated YUV4MPEG2 header line",
            path.display()
        )));
    }
    line.pop();
    Ok(Some(line))
}

impl<R: BufRead> Y4mReader<R> {
    pub fn new(mut reader: R, path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let line = read_line(&mut reader, &path)?.ok_or_else(|| Error::EmptySource(path.clone()))?;
        let text =
            String::from_utf8(line).map_err(|_| Error::UnsupportedFormat("YUV4MPEG2 header is not ASCII".into()))?;
        let header = Y4mHeader::parse(&text)?;
        Ok(Self {
            reader,
            path,
            header,
            index: 0,
            raw: Vec::new(),
        })
    }

    pub fn header(&self) -> &Y4mHeader {
        &self.header
    }

    /// Reads the next frame's raw planes into the internal buffer.
    /// Returns false at a clean end of stream.
    fn read_raw(&mut self) -> Result<bool> {
        let index = self.index;
        let Some(line) = read_line(&mut self.reader, &self.path)? else {
            return Ok(false);
        };
        if !line.starts_with(b"FRAME") {
            return Err(Error::CorruptFrame {
                index,
                reason: "missing FRAME marker".into(),
            });
        }
        let (w, h) = (self.header.width, self.header.height);
        let (cw, ch) = self.header.chroma_dims();
        self.raw.resize(w * h + 2 * cw * ch, 0);
        if let Err(e) = self.reader.read_exact(&mut self.raw) {
            return Err(if e.kind() == ErrorKind::UnexpectedEof {
                Error::CorruptFrame {
                    index,
                    reason: "truncated frame data".into(),
                }
            } else {
                Error::io(&self.path, e)
            });
        }
        self.index += 1;
        Ok(true)
    }

    /// Skips a frame without converting it. Returns false at end of stream.
    pub fn skip_frame(&mut self) -> Result<bool> {
        self.read_raw()
    }

    pub fn next_frame(&mut self) -> Result<Option<Frame>> {
        if !self.read_raw()? {
            return Ok(None);
        }
        let hd = &self.header;
        let (w, h) = (hd.width, hd.height);
        let (luma_map, chroma_map): (fn(f64) -> f64, fn(f64) -> f64) = if hd.full_range {
            (|v| v, |v| v)
        } else {
            (
                |v| (v - 16.0) * (255.0 / 219.0),
                |v| (v - 128.0) * (255.0 / 224.0) + 128.0,
            )
        };
        let (yp, rest) = self.raw.split_at(w * h);
        let y: Vec<f64> = yp.iter().map(|&v| luma_map(v as f64)).collect();
        if hd.chroma == Chroma::Mono {
            return Ok(Some(Frame::Luma(ScalarField::new(w, h, y, FieldKind::Luma)?)));
        }
        let (cw, ch) = hd.chroma_dims();
        let (up, vp) = rest.split_at(cw * ch);
        let step = if hd.chroma == Chroma::C420 { 2 } else { 1 };
        // Nearest-neighbour upsampling: every chroma sample covers its block.
        let upsample = |plane: &[u8]| -> Vec<f64> {
            (0..h)
                .flat_map(|yy| (0..w).map(move |xx| (yy / step) * cw + xx / step))
                .map(|i| chroma_map(plane[i] as f64))
                .collect()
        };
        let frame = YuvFrame::new(w, h, y, upsample(up), upsample(vp))?;
        Ok(Some(Frame::Yuv(frame)))
    }
}

/// Serializes raw planar frames under `header`.
pub fn encode(header: &Y4mHeader, frames: &[Vec<u8>]) -> Vec<u8> {
    let chroma = match header.chroma {
        Chroma::C420 => "420jpeg",
        Chroma::C444 => "444",
        Chroma::Mono => "mono",
    };
    let mut out = format!("YUV4MPEG2 W{} H{} C{chroma}", header.width, header.height);
    if let Some(fps) = header.fps {
        out += &format!(" F{}:1000", (fps * 1000.0).round() as u64);
    }
    out += if header.full_range { " XCOLORRANGE=FULL\n" } else { "\n" };
    let mut out = out.into_bytes();
    for f in frames {
        out.extend_from_slice(b"FRAME\n");
        out.extend_from_slice(f);
    }
    out
}
