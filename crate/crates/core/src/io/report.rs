use serde::{Deserialize, Serialize};

use crate::analytics::{DispersionGrid, MotionHistogram};
use crate::pipeline::SessionConfig;

/// Bumped whenever the report layout changes incompatibly.
pub const SCHEMA_VERSION: u32 = 1;

/// Outcome of a session. Serializes deterministically: identical input and
/// configuration give byte-identical JSON. Wall-clock timing is kept out of
/// the serialized form and written separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub schema_version: u32,
    pub config: SessionConfig,
    /// Tolerance actually applied (the estimate, in auto mode).
    pub tolerance: f64,
    /// Frame pairs processed over all windows.
    pub frames_processed: u64,
    pub windows: Vec<WindowReport>,
    #[serde(skip)]
    pub timing: Timing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    /// Output subdirectory name.
    pub label: String,
    pub start_frame: usize,
    /// Exclusive; clipped to the end of the source.
    pub end_frame: usize,
    pub frames_retained: usize,
    /// Frame pairs, one fewer than the retained frames.
    pub frames_processed: u64,
    pub gated_pixels: u64,
    pub gated_magnitude_sum: f64,
    pub dispersion_probabilities: Vec<Vec<f64>>,
    pub motion_probabilities: Vec<Vec<f64>>,
    #[serde(skip)]
    pub dispersion: DispersionGrid,
    #[serde(skip)]
    pub motion: MotionHistogram,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub window_seconds: Vec<f64>,
    pub pairs_per_second: f64,
    pub threads: usize,
}
