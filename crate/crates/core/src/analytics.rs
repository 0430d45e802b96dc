//! Motion gating and the two session accumulators: a coarse spatial grid of
//! summed speeds, and a joint histogram over speed and folded direction.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgproc::{FieldKind, ScalarField};

pub const DEFAULT_TOL: f64 = 0.2;
pub const DEFAULT_GRID_ROWS: usize = 36;
pub const DEFAULT_GRID_COLS: usize = 30;
pub const DEFAULT_MAG_BINS: usize = 60;
pub const DEFAULT_ANGLE_BINS: usize = 64;
pub const DEFAULT_MAG_MAX: f64 = 10.0;

/// Minimum speed, in pixels per frame pair, that counts as motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tolerance(f64);

impl Tolerance {
    pub fn new(tol: f64) -> Result<Self> {
        if tol.is_finite() && tol >= 0.0 {
            Ok(Self(tol))
        } else {
            Err(Error::InvalidParams(format!(
                "tolerance must be finite and >= 0, got {tol}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Self(DEFAULT_TOL)
    }
}

/// Noise-floor estimate `median + 3 * MAD` of a sample of speeds.
/// An empty sample gives a zero tolerance.
pub fn auto_tolerance(samples: &[f64]) -> Tolerance {
    let mut v: Vec<f64> = samples.iter().copied().filter(|m| m.is_finite()).collect();
    if v.is_empty() {
        return Tolerance(0.0);
    }
    let med = median(&mut v);
    v.iter_mut().for_each(|m| *m = (*m - med).abs());
    let mad = median(&mut v);
    Tolerance(med + 3.0 * mad)
}

fn median(v: &mut [f64]) -> f64 {
    let n = v.len();
    let (_, hi, _) = v.select_nth_unstable_by(n / 2, f64::total_cmp);
    let hi = *hi;
    if n % 2 == 1 {
        hi
    } else {
        let lo = v[..n / 2].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

/// Keeps speeds at or above the tolerance and zeroes the rest.
pub fn apply_tolerance(mag: &ScalarField, tol: Tolerance) -> ScalarField {
    debug_assert_eq!(mag.kind(), FieldKind::Magnitude);
    let t = tol.value();
    let data = mag.data().iter().map(|&m| if m >= t { m } else { 0.0 }).collect();
    let (w, h) = mag.dims();
    ScalarField::from_parts_unchecked(w, h, data, FieldKind::Magnitude)
}

/// Dense row-major matrix of accumulator values.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidParams(format!(
                "{} values do not fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols.max(1)).map(<[f64]>::to_vec).collect()
    }

    /// Divides by the total; an all-zero matrix stays all zero.
    pub fn normalized_by_total(&self) -> Self {
        self.scaled_by(self.sum())
    }

    /// Divides by the largest entry; an all-zero matrix stays all zero.
    pub fn normalized_by_max(&self) -> Self {
        self.scaled_by(self.data.iter().copied().fold(0.0, f64::max))
    }

    fn scaled_by(&self, d: f64) -> Self {
        let data = if d > 0.0 {
            self.data.iter().map(|v| v / d).collect()
        } else {
            vec![0.0; self.data.len()]
        };
        Self { data, ..*self }
    }
}

/// Shared behaviour of the session accumulators.
pub trait Accumulator: Sized {
    /// Element-wise sum of two accumulators with identical configuration.
    fn merge(&self, other: &Self) -> Result<Self>;

    /// Raw accumulated values.
    fn values(&self) -> Matrix;

    fn frames_accumulated(&self) -> u64;

    /// Occurrence probabilities: values divided by their total.
    fn probabilities(&self) -> Matrix {
        self.values().normalized_by_total()
    }
}

/// Associative, commutative combination of two accumulators.
pub fn merge<A: Accumulator>(a: &A, b: &A) -> Result<A> {
    a.merge(b)
}

fn merge_frame_dims(a: Option<(usize, usize)>, b: Option<(usize, usize)>) -> Result<Option<(usize, usize)>> {
    match (a, b) {
        (Some(x), Some(y)) if x != y => Err(Error::ConfigMismatch(format!(
            "accumulated over {}x{} and {}x{} frames",
            x.0, x.1, y.0, y.1
        ))),
        (x, y) => Ok(x.or(y)),
    }
}

/// Spatial grid of summed gated speeds. Every pixel maps to the cell
/// `(floor(y * rows / height), floor(x * cols / width))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionGrid {
    rows: usize,
    cols: usize,
    sums: Vec<f64>,
    frames_accumulated: u64,
    /// Frame size the grid is bound to after its first accumulation.
    frame_dims: Option<(usize, usize)>,
}

impl Default for DispersionGrid {
    fn default() -> Self {
        Self::new(DEFAULT_GRID_ROWS, DEFAULT_GRID_COLS).expect("default grid is valid")
    }
}

impl DispersionGrid {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidParams(format!(
                "grid must be non-empty, got {rows}x{cols}"
            )));
        }
        Ok(Self {
            rows,
            cols,
            sums: vec![0.0; rows * cols],
            frames_accumulated: 0,
            frame_dims: None,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn sums(&self) -> &[f64] {
        &self.sums
    }

    pub fn total(&self) -> f64 {
        self.sums.iter().sum()
    }

    /// Grid cell `(row, col)` of pixel `(x, y)` in a `width x height` frame.
    pub fn cell_of(&self, x: usize, y: usize, width: usize, height: usize) -> (usize, usize) {
        let row = (y * self.rows / height).min(self.rows - 1);
        let col = (x * self.cols / width).min(self.cols - 1);
        (row, col)
    }

    /// Adds every pixel's gated speed to its cell.
    pub fn accumulate(&mut self, gated: &ScalarField) -> Result<()> {
        let (w, h) = gated.dims();
        if let Some(d) = self.frame_dims {
            if d != (w, h) {
                return Err(Error::dims(d, (w, h)));
            }
        }
        self.frame_dims = Some((w, h));
        let col_of: Vec<usize> = (0..w).map(|x| self.cell_of(x, 0, w, h).1).collect();
        for (y, row) in gated.data().chunks(w).enumerate() {
            let base = self.cell_of(0, y, w, h).0 * self.cols;
            for (&m, &c) in row.iter().zip(&col_of) {
                if m != 0.0 {
                    self.sums[base + c] += m;
                }
            }
        }
        self.frames_accumulated += 1;
        Ok(())
    }
}

impl Accumulator for DispersionGrid {
    fn merge(&self, other: &Self) -> Result<Self> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::ConfigMismatch(format!(
                "grid {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            sums: self.sums.iter().zip(&other.sums).map(|(a, b)| a + b).collect(),
            frames_accumulated: self.frames_accumulated + other.frames_accumulated,
            frame_dims: merge_frame_dims(self.frame_dims, other.frame_dims)?,
        })
    }

    fn values(&self) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.sums.clone(),
        }
    }

    fn frames_accumulated(&self) -> u64 {
        self.frames_accumulated
    }
}

/// Joint histogram of pixel counts over speed (rows) and folded direction
/// `|theta|` in `[0, pi]` (columns). Speeds above `mag_max` land in the last row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionHistogram {
    mag_bins: usize,
    angle_bins: usize,
    mag_max: f64,
    counts: Vec<u64>,
    frames_accumulated: u64,
}

impl Default for MotionHistogram {
    fn default() -> Self {
        Self::new(DEFAULT_MAG_BINS, DEFAULT_ANGLE_BINS, DEFAULT_MAG_MAX).expect("default histogram is valid")
    }
}

impl MotionHistogram {
    pub fn new(mag_bins: usize, angle_bins: usize, mag_max: f64) -> Result<Self> {
        if mag_bins == 0 || angle_bins == 0 {
            return Err(Error::InvalidParams("histogram needs at least one bin per axis".into()));
        }
        if !(mag_max.is_finite() && mag_max > 0.0) {
            return Err(Error::InvalidParams(format!("mag_max must be positive, got {mag_max}")));
        }
        Ok(Self {
            mag_bins,
            angle_bins,
            mag_max,
            counts: vec![0; mag_bins * angle_bins],
            frames_accumulated: 0,
        })
    }

    pub fn mag_bins(&self) -> usize {
        self.mag_bins
    }

    pub fn angle_bins(&self) -> usize {
        self.angle_bins
    }

    pub fn mag_max(&self) -> f64 {
        self.mag_max
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Bin `(speed row, direction column)` for a speed and a signed angle.
    pub fn bin_of(&self, mag: f64, angle: f64) -> (usize, usize) {
        let m = ((mag / self.mag_max * self.mag_bins as f64) as usize).min(self.mag_bins - 1);
        let a = ((angle.abs() / PI * self.angle_bins as f64) as usize).min(self.angle_bins - 1);
        (m, a)
    }

    /// Counts every pixel with a positive gated speed once.
    pub fn accumulate(&mut self, gated: &ScalarField, angle: &ScalarField) -> Result<()> {
        if gated.dims() != angle.dims() {
            return Err(Error::dims(gated.dims(), angle.dims()));
        }
        for (&m, &a) in gated.data().iter().zip(angle.data()) {
            if m > 0.0 {
                let (r, c) = self.bin_of(m, a);
                self.counts[r * self.angle_bins + c] += 1;
            }
        }
        self.frames_accumulated += 1;
        Ok(())
    }
}

impl Accumulator for MotionHistogram {
    fn merge(&self, other: &Self) -> Result<Self> {
        if (self.mag_bins, self.angle_bins) != (other.mag_bins, other.angle_bins) || self.mag_max != other.mag_max {
            return Err(Error::ConfigMismatch(format!(
                "histogram {}x{} up to {} vs {}x{} up to {}",
                self.mag_bins, self.angle_bins, self.mag_max, other.mag_bins, other.angle_bins, other.mag_max
            )));
        }
        Ok(Self {
            counts: self.counts.iter().zip(&other.counts).map(|(a, b)| a + b).collect(),
            frames_accumulated: self.frames_accumulated + other.frames_accumulated,
            ..*self
        })
    }

    fn values(&self) -> Matrix {
        Matrix {
            rows: self.mag_bins,
            cols: self.angle_bins,
            data: self.counts.iter().map(|&c| c as f64).collect(),
        }
    }

    fn frames_accumulated(&self) -> u64 {
        self.frames_accumulated
    }
}
