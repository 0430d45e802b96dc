//! Frame ingestion and result emission.
//!
//! Inputs are directories of numbered PPM/PGM/PNG images or YUV4MPEG2
//! streams (`-` reads the stream from standard input, so any external
//! transcoder can feed the tool). Outputs are CSV matrices, PGM heatmaps and
//! JSON reports.

mod output;
pub mod png_image;
pub mod pnm;
mod report;
pub mod y4m;

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgproc::{RgbFrame, ScalarField, YuvFrame};

pub use output::{
    field_matrix, heatmap_bytes, read_matrix_csv, write_field_csv, write_heatmap_pgm, write_json, write_matrix_csv,
    write_ppm, write_report_json,
};
pub use report::{SessionReport, Timing, WindowReport, SCHEMA_VERSION};

use y4m::Y4mReader;

/// A decoded input frame.
#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Rgb(RgbFrame),
    /// Already in YUV; bypasses the RGB conversion.
    Yuv(YuvFrame),
    /// Single-channel input (PGM, grayscale PNG, monochrome streams).
    Luma(ScalarField),
}

impl Frame {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            Frame::Rgb(f) => (f.width(), f.height()),
            Frame::Yuv(f) => (f.width(), f.height()),
            Frame::Luma(f) => f.dims(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    ImageSequenceDirectory,
    Yuv4mpegStream,
}

/// Where frames come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSource {
    pub kind: SourceKind,
    pub path: PathBuf,
    /// Declared frame rate. Streams that carry their own rate fall back to it
    /// when this is unset.
    pub fps: Option<f64>,
    /// Optional `[start, end)` restriction on frame indices.
    pub frame_range: Option<(usize, usize)>,
}

const IMAGE_EXTENSIONS: [&str; 4] = ["ppm", "pgm", "pnm", "png"];

impl FrameSource {
    /// Infers the source kind: directories are image sequences, anything
    /// else (including `-` for standard input) is a YUV4MPEG2 stream.
    pub fn new(path: impl Into<PathBuf>, fps: Option<f64>) -> Result<Self> {
        let path = path.into();
        if let Some(f) = fps {
            if !(f.is_finite() && f > 0.0) {
                return Err(Error::InvalidParams(format!("fps must be positive, got {f}")));
            }
        }
        let kind = if path.is_dir() {
            SourceKind::ImageSequenceDirectory
        } else {
            SourceKind::Yuv4mpegStream
        };
        Ok(Self {
            kind,
            path,
            fps,
            frame_range: None,
        })
    }

    pub fn with_range(mut self, start: usize, end: usize) -> Self {
        self.frame_range = Some((start, end));
        self
    }

    fn is_stdin(&self) -> bool {
        self.path.as_os_str() == "-"
    }
}

/// Image files of a sequence directory, ordered by the numeric suffix of
/// their stem (`f_0002.ppm` before `f_0010.ppm`), then by name.
pub fn list_sequence(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let supported = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if supported && path.is_file() {
            files.push(path);
        }
    }
    if files.is_empty() {
        return Err(Error::EmptySource(dir.to_path_buf()));
    }
    let key = |p: &PathBuf| {
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        let digits = stem.len() - stem.trim_end_matches(|c: char| c.is_ascii_digit()).len();
        let number = stem[stem.len() - digits..].parse::<u128>().ok();
        (number, p.file_name().map(|n| n.to_owned()))
    };
    files.sort_by_cached_key(key);
    Ok(files)
}

/// Decodes one image file by its extension.
pub fn decode_image_file(path: &Path, index: usize) -> Result<Frame> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let decoded = match ext.as_str() {
        "ppm" | "pgm" | "pnm" => pnm::decode(&bytes, index),
        "png" => png_image::decode(&bytes, index),
        _ => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: unknown image extension",
                path.display()
            )))
        }
    };
    decoded.map_err(|e| match e {
        Error::CorruptFrame { index, reason } => Error::CorruptFrame {
            index,
            reason: format!("{}: {reason}", path.display()),
        },
        other => other,
    })
}

enum Inner {
    Sequence(Vec<PathBuf>),
    Stream(Box<Y4mReader<Box<dyn BufRead + Send>>>),
}

/// Ordered stream of `(frame index, frame)` from a [`FrameSource`].
pub struct FrameReader {
    inner: Inner,
    next: usize,
    end: Option<usize>,
    dims: Option<(usize, usize)>,
    fps: Option<f64>,
}

/// Opens a source for sequential reading, positioned at the start of its
/// frame range.
pub fn read_frames(src: &FrameSource) -> Result<FrameReader> {
    let (inner, parsed_fps) = match src.kind {
        SourceKind::ImageSequenceDirectory => (Inner::Sequence(list_sequence(&src.path)?), None),
        SourceKind::Yuv4mpegStream => {
            let reader: Box<dyn BufRead + Send> = if src.is_stdin() {
                Box::new(BufReader::new(std::io::stdin()))
            } else {
                let file = File::open(&src.path).map_err(|e| Error::io(&src.path, e))?;
                Box::new(BufReader::with_capacity(1 << 20, file))
            };
            let y4m = Y4mReader::new(reader, &src.path)?;
            let fps = y4m.header().fps;
            (Inner::Stream(Box::new(y4m)), fps)
        }
    };
    if let (Some(declared), Some(parsed)) = (src.fps, parsed_fps) {
        if (declared - parsed).abs() > 1e-9 * parsed {
            log::warn!(
                "{}: declared {declared} fps overrides the stream's {parsed} fps",
                src.path.display()
            );
        }
    }
    let mut reader = FrameReader {
        inner,
        next: 0,
        end: src.frame_range.map(|r| r.1),
        dims: None,
        fps: src.fps.or(parsed_fps),
    };
    if let Some((start, _)) = src.frame_range {
        reader.skip_to(start)?;
    }
    Ok(reader)
}

impl FrameReader {
    /// Declared frame rate, or the stream's own rate.
    pub fn fps(&self) -> Option<f64> {
        self.fps
    }

    /// Index of the frame the next call to `next` yields.
    pub fn position(&self) -> usize {
        self.next
    }

    /// Number of frames in the source, when known without reading it.
    pub fn len_hint(&self) -> Option<usize> {
        match &self.inner {
            Inner::Sequence(files) => Some(self.end.map_or(files.len(), |e| e.min(files.len()))),
            Inner::Stream(_) => None,
        }
    }

    /// Advances to frame `index` without decoding the frames in between
    /// where the format allows it. Never moves backwards.
    pub fn skip_to(&mut self, index: usize) -> Result<()> {
        match &mut self.inner {
            Inner::Sequence(files) => self.next = self.next.max(index.min(files.len())),
            Inner::Stream(r) => {
                while self.next < index && r.skip_frame()? {
                    self.next += 1;
                }
            }
        }
        Ok(())
    }

    fn read_next(&mut self) -> Result<Option<Frame>> {
        match &mut self.inner {
            Inner::Sequence(files) => match files.get(self.next) {
                Some(path) => decode_image_file(path, self.next).map(Some),
                None => Ok(None),
            },
            Inner::Stream(r) => r.next_frame(),
        }
    }
}

impl Iterator for FrameReader {
    type Item = Result<(usize, Frame)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.end.is_some_and(|e| self.next >= e) {
            return None;
        }
        let index = self.next;
        let frame = match self.read_next() {
            Ok(Some(f)) => f,
            Ok(None) => return None,
            Err(e) => {
                // A failed frame ends the stream.
                self.end = Some(index);
                return Some(Err(e));
            }
        };
        self.next += 1;
        let (w, h) = frame.dims();
        match self.dims {
            Some((ew, eh)) if (ew, eh) != (w, h) => {
                self.end = Some(index);
                Some(Err(Error::DimensionChange {
                    index,
                    expected_width: ew,
                    expected_height: eh,
                    width: w,
                    height: h,
                }))
            }
            _ => {
                self.dims = Some((w, h));
                Some(Ok((index, frame)))
            }
        }
    }
}
