use std::path::Path;

use serde::Serialize;

use crate::analytics::Matrix;
use crate::error::{Error, Result};
use crate::imgproc::{RgbFrame, ScalarField};

use super::pnm;
use super::report::SessionReport;

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Copies a field into a matrix with one row per image row.
pub fn field_matrix(field: &ScalarField) -> Matrix {
    let (w, h) = field.dims();
    Matrix::new(h, w, field.data().to_vec()).expect("field data fills its dimensions")
}

/// One CSV line per matrix row. Values use the shortest representation that
/// parses back to the same `f64`.
pub fn write_matrix_csv(m: &Matrix, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(m.data().len() * 8);
    for row in m.data().chunks(m.cols().max(1)) {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out += &v.to_string();
        }
        out.push('\n');
    }
    write_bytes(path, out.as_bytes())
}

pub fn write_field_csv(field: &ScalarField, path: &Path) -> Result<()> {
    write_matrix_csv(&field_matrix(field), path)
}

/// Reads a matrix written by [`write_matrix_csv`].
pub fn read_matrix_csv(path: &Path) -> Result<Matrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut data = Vec::new();
    let (mut rows, mut cols) = (0, None);
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let before = data.len();
        for cell in line.split(',') {
            let v = cell
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::UnsupportedFormat(format!("{}:{}: bad number `{cell}`", path.display(), n + 1)))?;
            data.push(v);
        }
        let width = data.len() - before;
        if *cols.get_or_insert(width) != width {
            return Err(Error::UnsupportedFormat(format!(
                "{}:{}: ragged row of {width} values",
                path.display(),
                n + 1
            )));
        }
        rows += 1;
    }
    Matrix::new(rows, cols.unwrap_or(0), data)
}

/// Linear map of `[0, max]` onto `0..=255`. An all-zero matrix maps to zeros.
pub fn heatmap_bytes(m: &Matrix) -> Vec<u8> {
    let max = m.data().iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
    m.data()
        .iter()
        .map(|&v| {
            if max > 0.0 && v.is_finite() {
                (v / max * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect()
}

/// Max-normalized 8-bit grayscale rendering of a matrix.
pub fn write_heatmap_pgm(m: &Matrix, path: &Path) -> Result<()> {
    write_bytes(path, &pnm::encode_pgm(m.cols(), m.rows(), &heatmap_bytes(m)))
}

pub fn write_ppm(frame: &RgbFrame, path: &Path) -> Result<()> {
    write_bytes(path, &pnm::encode_ppm(frame))
}

/// Pretty-printed JSON followed by a newline.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn write_report_json(report: &SessionReport, path: &Path) -> Result<()> {
    write_json(report, path)
}
