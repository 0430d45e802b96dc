//! Windowed session analysis.
//!
//! For every window, retained frames are preprocessed to a scalar field,
//! expanded into polynomial pyramids (once per frame), paired with their
//! predecessor, and turned into flow. Speeds are gated by the tolerance and
//! accumulated into a dispersion grid and a motion histogram per window.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{
    apply_tolerance, auto_tolerance, Accumulator, DispersionGrid, MotionHistogram, Tolerance, DEFAULT_ANGLE_BINS,
    DEFAULT_GRID_COLS, DEFAULT_GRID_ROWS, DEFAULT_MAG_BINS, DEFAULT_MAG_MAX, DEFAULT_TOL,
};
use crate::error::{Error, Result};
use crate::flow::{flow_from_pyramids, magnitude_angle, ExpansionPyramid, FlowParams};
use crate::imgproc::{chroma_difference, luma, rgb_to_yuv, ScalarField};
use crate::io::{
    read_frames, write_heatmap_pgm, write_json, write_matrix_csv, write_report_json, Frame, FrameSource, SessionReport,
    WindowReport, SCHEMA_VERSION,
};
use crate::polyexp::{CertaintyMode, ExpansionParams};

pub const DEFAULT_OUT_DIR: &str = "aquaflow-out";
/// Environment variable that overrides [`DEFAULT_OUT_DIR`].
pub const OUT_DIR_ENV: &str = "AQUAFLOW_OUT_DIR";
pub const DEFAULT_AUTO_TOL_PAIRS: usize = 10;
pub const DEFAULT_STRIDE: usize = 1;

/// How a frame becomes the scalar field that flow is estimated on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preprocess {
    /// `|U - V|`, which cancels achromatic content such as bubbles and glare.
    #[default]
    ChromaDiff,
    Luma,
}

impl FromStr for Preprocess {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chroma-diff" => Ok(Self::ChromaDiff),
            "luma" => Ok(Self::Luma),
            other => Err(Error::InvalidParams(format!("unknown preprocess mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TolMode {
    Fixed(Tolerance),
    /// `median + 3 * MAD` of the speeds over the first `pairs` frame pairs.
    Auto {
        pairs: usize,
    },
}

impl Default for TolMode {
    fn default() -> Self {
        Self::Fixed(Tolerance::default())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowUnit {
    #[default]
    Frames,
    Seconds,
}

impl FromStr for WindowUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frames" => Ok(Self::Frames),
            "seconds" => Ok(Self::Seconds),
            other => Err(Error::InvalidParams(format!("unknown window unit `{other}`"))),
        }
    }
}

/// Half-open analysis window; a missing end runs to the end of the source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowSpec {
    Frames { start: usize, end: Option<usize> },
    Seconds { start: f64, end: Option<f64> },
}

impl WindowSpec {
    /// Parses `START:END` or `START:` in the given unit.
    pub fn parse(s: &str, unit: WindowUnit) -> Result<Self> {
        let bad = || Error::InvalidParams(format!("window `{s}` is not START:END"));
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        let (a, b) = (a.trim(), b.trim());
        let spec = match unit {
            WindowUnit::Frames => Self::Frames {
                start: a.parse().map_err(|_| bad())?,
                end: if b.is_empty() {
                    None
                } else {
                    Some(b.parse().map_err(|_| bad())?)
                },
            },
            WindowUnit::Seconds => Self::Seconds {
                start: a.parse().map_err(|_| bad())?,
                end: if b.is_empty() {
                    None
                } else {
                    Some(b.parse().map_err(|_| bad())?)
                },
            },
        };
        Ok(spec)
    }

    /// Frame range `[start, end)`. Frame `i` is shown at time `i / fps`.
    fn to_frames(self, fps: Option<f64>) -> Result<(usize, Option<usize>)> {
        match self {
            Self::Frames { start, end } => Ok((start, end)),
            Self::Seconds { start, end } => {
                let fps =
                    fps.ok_or_else(|| Error::InvalidParams("windows in seconds need a frame rate (--fps)".into()))?;
                let frame = |t: f64| -> Result<usize> {
                    if !(t.is_finite() && t >= 0.0) {
                        return Err(Error::InvalidParams(format!("window time {t} must be >= 0")));
                    }
                    Ok((t * fps - 1e-9).ceil().max(0.0) as usize)
                };
                Ok((frame(start)?, end.map(frame).transpose()?))
            }
        }
    }
}

/// Every parameter of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub source: FrameSource,
    pub preprocess: Preprocess,
    pub expansion: ExpansionParams,
    pub flow: FlowParams,
    pub tol: TolMode,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub mag_bins: usize,
    pub angle_bins: usize,
    /// Speed mapped to the top histogram row; faster pixels are clamped into it.
    pub mag_max: f64,
    /// Ordered, non-overlapping windows. Empty means the whole source.
    pub windows: Vec<WindowSpec>,
    /// Keep every `frame_stride`-th frame of a window before pairing.
    pub frame_stride: usize,
    /// Where artifacts are written; nothing is written when unset.
    #[serde(skip)]
    pub output_dir: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl SessionConfig {
    pub fn new(source: FrameSource) -> Self {
        Self {
            source,
            preprocess: Preprocess::default(),
            expansion: ExpansionParams::default(),
            flow: FlowParams::default(),
            tol: TolMode::default(),
            grid_rows: DEFAULT_GRID_ROWS,
            grid_cols: DEFAULT_GRID_COLS,
            mag_bins: DEFAULT_MAG_BINS,
            angle_bins: DEFAULT_ANGLE_BINS,
            mag_max: DEFAULT_MAG_MAX,
            windows: Vec::new(),
            frame_stride: DEFAULT_STRIDE,
            output_dir: None,
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.expansion.validate()?;
        self.flow.validate()?;
        self.empty_grid()?;
        self.empty_histogram()?;
        if self.frame_stride < 1 {
            return Err(Error::InvalidParams("frame_stride must be >= 1".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidParams("threads must be >= 1".into()));
        }
        if let TolMode::Auto { pairs: 0 } = self.tol {
            return Err(Error::InvalidParams("auto tolerance needs at least one pair".into()));
        }
        // Order is checked in frames once the frame rate is known; an
        // arbitrary rate is enough to compare windows of the same unit.
        check_window_order(&self.resolve_windows(Some(1e6))?)
    }

    fn empty_grid(&self) -> Result<DispersionGrid> {
        DispersionGrid::new(self.grid_rows, self.grid_cols)
    }

    fn empty_histogram(&self) -> Result<MotionHistogram> {
        MotionHistogram::new(self.mag_bins, self.angle_bins, self.mag_max)
    }

    fn resolve_windows(&self, fps: Option<f64>) -> Result<Vec<(usize, Option<usize>)>> {
        if self.windows.is_empty() {
            return Ok(vec![(0, None)]);
        }
        self.windows.iter().map(|w| w.to_frames(fps)).collect()
    }
}

fn check_window_order(windows: &[(usize, Option<usize>)]) -> Result<()> {
    let mut floor = 0;
    for (i, &(start, end)) in windows.iter().enumerate() {
        if start < floor {
            return Err(Error::InvalidParams(format!(
                "window {i} starts at frame {start}, before the previous window ends"
            )));
        }
        match end {
            Some(e) if e <= start => {
                return Err(Error::InvalidParams(format!("window {i} is empty ([{start}, {e}))")));
            }
            Some(e) => floor = e,
            None if i + 1 < windows.len() => {
                return Err(Error::InvalidParams(format!(
                    "window {i} runs to the end of the source but is not the last"
                )));
            }
            None => {}
        }
    }
    Ok(())
}

/// Keys accepted in `key = value` configuration files, with their meaning
/// and built-in default.
pub const SETTINGS: &[(&str, &str)] = &[
    (
        "input",
        "image-sequence directory, .y4m file, or - for a YUV4MPEG2 stream on stdin (required)",
    ),
    (
        "fps",
        "frame rate; required for windows in seconds unless the stream declares one",
    ),
    ("preprocess", "chroma-diff | luma [default: chroma-diff]"),
    ("window_radius", "expansion window half-width in px [default: 5]"),
    ("applicability_sigma", "expansion Gaussian sigma in px [default: 1.5]"),
    (
        "certainty_mode",
        "zero-outside-border | uniform [default: zero-outside-border]",
    ),
    (
        "aggregation_sigma",
        "flow aggregation Gaussian sigma in px [default: 7]",
    ),
    (
        "regularization_eps",
        "Tikhonov term of the 2x2 solve [default: 0.000001]",
    ),
    ("iterations", "refinement passes per pyramid level [default: 3]"),
    ("pyramid_levels", "pyramid depth [default: 3]"),
    ("pyramid_scale", "size ratio between levels [default: 0.5]"),
    ("tol", "motion tolerance in px/frame pair, or auto [default: 0.2]"),
    ("auto_tol_pairs", "frame pairs sampled by tol = auto [default: 10]"),
    ("grid_rows", "dispersion grid rows [default: 36]"),
    ("grid_cols", "dispersion grid columns [default: 30]"),
    ("mag_bins", "histogram speed bins [default: 60]"),
    ("angle_bins", "histogram direction bins over [0, pi] [default: 64]"),
    (
        "mag_max",
        "speed of the top histogram bin in px/frame pair [default: 10]",
    ),
    (
        "windows",
        "comma-separated START:END windows (END may be empty) [default: whole source]",
    ),
    ("window_unit", "frames | seconds [default: frames]"),
    ("stride", "keep every n-th frame [default: 1]"),
    ("out", "output directory [default: $AQUAFLOW_OUT_DIR or aquaflow-out]"),
    ("threads", "worker threads [default: available parallelism]"),
];

/// Flat `key = value` settings; later layers override earlier ones.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut out = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidParams(format!("config line {}: expected key = value, got `{raw}`", n + 1))
            })?;
            out.set(k.trim(), v.trim())
                .map_err(|e| Error::InvalidParams(format!("config line {}: {e}", n + 1)))?;
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !SETTINGS.iter().any(|(k, _)| *k == key) {
            return Err(Error::InvalidParams(format!("unknown setting `{key}`")));
        }
        self.values.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Applies every value of `other` on top of `self`.
    pub fn overlay(&mut self, other: &Settings) {
        for (k, v) in &other.values {
            self.values.insert(k.clone(), v.clone());
        }
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::InvalidParams(format!("bad value `{v}` for {key}")))
            })
            .transpose()
    }

    /// Builds a session configuration; unset keys take their defaults.
    pub fn to_config(&self) -> Result<SessionConfig> {
        let input = self
            .get("input")
            .ok_or_else(|| Error::InvalidParams("no input given".into()))?;
        let mut c = SessionConfig::new(FrameSource::new(input, self.parsed("fps")?)?);
        macro_rules! set {
            ($key:literal, $field:expr) => {
                if let Some(v) = self.parsed($key)? {
                    $field = v;
                }
            };
        }
        if let Some(p) = self.get("preprocess") {
            c.preprocess = p.parse()?;
        }
        set!("window_radius", c.expansion.window_radius);
        set!("applicability_sigma", c.expansion.applicability_sigma);
        if let Some(m) = self.get("certainty_mode") {
            c.expansion.certainty_mode = m.parse::<CertaintyMode>()?;
        }
        set!("aggregation_sigma", c.flow.aggregation_sigma);
        set!("regularization_eps", c.flow.regularization_eps);
        set!("iterations", c.flow.iterations);
        set!("pyramid_levels", c.flow.pyramid_levels);
        set!("pyramid_scale", c.flow.pyramid_scale);
        let pairs = self.parsed("auto_tol_pairs")?.unwrap_or(DEFAULT_AUTO_TOL_PAIRS);
        c.tol = match self.get("tol") {
            None => TolMode::Fixed(Tolerance::new(DEFAULT_TOL)?),
            Some("auto") => TolMode::Auto { pairs },
            Some(_) => TolMode::Fixed(Tolerance::new(self.parsed("tol")?.unwrap_or(DEFAULT_TOL))?),
        };
        set!("grid_rows", c.grid_rows);
        set!("grid_cols", c.grid_cols);
        set!("mag_bins", c.mag_bins);
        set!("angle_bins", c.angle_bins);
        set!("mag_max", c.mag_max);
        set!("stride", c.frame_stride);
        let unit: WindowUnit = self.parsed("window_unit")?.unwrap_or_default();
        if let Some(ws) = self.get("windows") {
            c.windows = ws
                .split(',')
                .filter(|w| !w.trim().is_empty())
                .map(|w| WindowSpec::parse(w, unit))
                .collect::<Result<_>>()?;
        }
        c.output_dir = self.get("out").map(PathBuf::from);
        c.threads = self.parsed("threads")?;
        c.validate()?;
        Ok(c)
    }
}

static LUMA_FALLBACK_WARNED: AtomicBool = AtomicBool::new(false);

/// The scalar field flow is estimated on. Single-channel frames have no
/// chroma, so chroma-difference mode falls back to their luma.
pub fn preprocess(frame: &Frame, mode: Preprocess) -> ScalarField {
    match (frame, mode) {
        (Frame::Rgb(f), Preprocess::ChromaDiff) => chroma_difference(&rgb_to_yuv(f)),
        (Frame::Rgb(f), Preprocess::Luma) => luma(f),
        (Frame::Yuv(f), Preprocess::ChromaDiff) => chroma_difference(f),
        (Frame::Yuv(f), Preprocess::Luma) => f.luma(),
        (Frame::Luma(f), mode) => {
            if mode == Preprocess::ChromaDiff && !LUMA_FALLBACK_WARNED.swap(true, Ordering::Relaxed) {
                log::warn!("source has no chroma; estimating flow on luma");
            }
            f.clone()
        }
    }
}

fn in_window(window: usize, frame: usize) -> impl Fn(Error) -> Error {
    move |e| Error::InWindow {
        window,
        frame,
        source: Box::new(e),
    }
}

/// Speeds and directions of one frame pair, before gating.
struct PairMotion {
    window: usize,
    mag: ScalarField,
    angle: ScalarField,
    valid: Vec<bool>,
}

struct WindowState {
    start: usize,
    end: usize,
    retained: usize,
    pairs: u64,
    grid: DispersionGrid,
    hist: MotionHistogram,
    seconds: f64,
}

struct Session<'a> {
    config: &'a SessionConfig,
    tol: Option<Tolerance>,
    auto_pairs: usize,
    pending: Vec<PairMotion>,
    windows: Vec<WindowState>,
}

impl Session<'_> {
    fn new(config: &SessionConfig) -> Session<'_> {
        let (tol, auto_pairs) = match config.tol {
            TolMode::Fixed(t) => (Some(t), 0),
            TolMode::Auto { pairs } => (None, pairs),
        };
        Session {
            config,
            tol,
            auto_pairs,
            pending: Vec::new(),
            windows: Vec::new(),
        }
    }

    fn run(mut self, threads: usize) -> Result<SessionReport> {
        let started = Instant::now();
        let cfg = self.config;
        let mut reader = read_frames(&cfg.source)?;
        let windows = cfg.resolve_windows(reader.fps())?;
        check_window_order(&windows)?;
        let batch_size = threads.max(2);
        let stride = cfg.frame_stride;

        for (wi, &(start, end)) in windows.iter().enumerate() {
            let t0 = Instant::now();
            let mut state = WindowState {
                start,
                end: end.unwrap_or(usize::MAX),
                retained: 0,
                pairs: 0,
                grid: cfg.empty_grid()?,
                hist: cfg.empty_histogram()?,
                seconds: 0.0,
            };
            let mut prev: Option<(usize, ExpansionPyramid)> = None;
            let mut next = start;
            let mut exhausted = false;
            while !exhausted {
                let mut batch = Vec::with_capacity(batch_size);
                while batch.len() < batch_size {
                    if end.is_some_and(|e| next >= e) {
                        exhausted = true;
                        break;
                    }
                    reader.skip_to(next).map_err(in_window(wi, next))?;
                    match reader.next() {
                        Some(Ok(item)) if item.0 == next => batch.push(item),
                        Some(Ok((i, _))) => unreachable!("reader yielded frame {i}, expected {next}"),
                        Some(Err(e)) => return Err(in_window(wi, next)(e)),
                        None => {
                            state.end = state.end.min(reader.position());
                            exhausted = true;
                            break;
                        }
                    }
                    next += stride;
                }
                state.retained += batch.len();
                let mut pyramids = batch
                    .into_par_iter()
                    .map(|(i, frame)| {
                        let field = preprocess(&frame, cfg.preprocess);
                        ExpansionPyramid::build(&field, &cfg.expansion, &cfg.flow)
                            .map(|p| (i, p))
                            .map_err(in_window(wi, i))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let chain: Vec<&(usize, ExpansionPyramid)> = prev.iter().chain(&pyramids).collect();
                let motions = chain
                    .par_windows(2)
                    .map(|pair| {
                        let flow =
                            flow_from_pyramids(&pair[0].1, &pair[1].1, &cfg.flow).map_err(in_window(wi, pair[1].0))?;
                        let (mag, angle) = magnitude_angle(&flow);
                        Ok(PairMotion {
                            window: wi,
                            mag,
                            angle,
                            valid: flow.valid().to_vec(),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                state.pairs += motions.len() as u64;
                if let Some(last) = pyramids.pop() {
                    prev = Some(last);
                }
                self.windows.push(state);
                self.absorb(motions)?;
                state = self.windows.pop().expect("pushed above");
            }
            if state.end == usize::MAX {
                state.end = reader.position();
            }
            state.seconds = t0.elapsed().as_secs_f64();
            self.windows.push(state);
        }
        if self.tol.is_none() {
            self.resolve_auto_tol();
            self.absorb(Vec::new())?;
        }
        Ok(self.finish(started, threads))
    }

    fn resolve_auto_tol(&mut self) {
        let samples: Vec<f64> = self
            .pending
            .iter()
            .take(self.auto_pairs)
            .flat_map(|p| p.mag.data().iter().zip(&p.valid).filter(|(_, v)| **v).map(|(m, _)| *m))
            .collect();
        let tol = auto_tolerance(&samples);
        log::info!("auto tolerance {} px/pair from {} samples", tol.value(), samples.len());
        self.tol = Some(tol);
    }

    /// Gates and accumulates pair motions in order. In auto-tolerance mode
    /// they wait until enough pairs have been seen to fix the tolerance.
    fn absorb(&mut self, motions: Vec<PairMotion>) -> Result<()> {
        self.pending.extend(motions);
        if self.tol.is_none() {
            if self.pending.len() < self.auto_pairs {
                return Ok(());
            }
            self.resolve_auto_tol();
        }
        let tol = self.tol.expect("tolerance resolved");
        let (grid0, hist0) = (self.config.empty_grid()?, self.config.empty_histogram()?);
        let pending = std::mem::take(&mut self.pending);
        // Each pair fills private accumulators; merging in pair order keeps
        // the result independent of the thread count.
        let partial = pending
            .into_par_iter()
            .map(|p| {
                let gated = apply_tolerance(&p.mag, tol);
                let (mut g, mut h) = (grid0.clone(), hist0.clone());
                g.accumulate(&gated)?;
                h.accumulate(&gated, &p.angle)?;
                Ok((p.window, g, h))
            })
            .collect::<Result<Vec<_>>>()?;
        for (wi, g, h) in partial {
            let state = &mut self.windows[wi];
            state.grid = state.grid.merge(&g)?;
            state.hist = state.hist.merge(&h)?;
        }
        Ok(())
    }

    fn finish(self, started: Instant, threads: usize) -> SessionReport {
        let window_seconds = self.windows.iter().map(|s| s.seconds).collect();
        let windows: Vec<WindowReport> = self
            .windows
            .into_iter()
            .map(|s| WindowReport {
                label: format!("frames_{:06}-{:06}", s.start, s.end),
                start_frame: s.start,
                end_frame: s.end,
                frames_retained: s.retained,
                frames_processed: s.pairs,
                gated_pixels: s.hist.total(),
                gated_magnitude_sum: s.grid.total(),
                dispersion_probabilities: s.grid.probabilities().to_rows(),
                motion_probabilities: s.hist.probabilities().to_rows(),
                dispersion: s.grid,
                motion: s.hist,
            })
            .collect();
        let frames_processed = windows.iter().map(|w| w.frames_processed).sum();
        let total_seconds = started.elapsed().as_secs_f64();
        let mut report = SessionReport {
            schema_version: SCHEMA_VERSION,
            config: self.config.clone(),
            tolerance: self.tol.map_or(0.0, Tolerance::value),
            frames_processed,
            windows,
            timing: Default::default(),
        };
        report.timing.total_seconds = total_seconds;
        report.timing.threads = threads;
        report.timing.window_seconds = window_seconds;
        report.timing.pairs_per_second = if total_seconds > 0.0 {
            frames_processed as f64 / total_seconds
        } else {
            0.0
        };
        report
    }
}

/// Runs a session and, when an output directory is configured, writes its
/// artifacts there.
pub fn run_session(config: &SessionConfig) -> Result<SessionReport> {
    config.validate()?;
    let threads = config
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParams(format!("thread pool: {e}")))?;
    let report = pool.install(|| Session::new(config).run(threads))?;
    if let Some(dir) = &config.output_dir {
        write_artifacts(&report, dir)?;
    }
    Ok(report)
}

/// Writes `report.json`, `timing.json` and one subdirectory of CSV and PGM
/// files per window.
pub fn write_artifacts(report: &SessionReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for w in &report.windows {
        let sub = dir.join(&w.label);
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        let dispersion = w.dispersion.probabilities();
        let motion = w.motion.probabilities();
        write_matrix_csv(&dispersion, &sub.join("dispersion.csv"))?;
        write_matrix_csv(
            &w.dispersion.values().normalized_by_max(),
            &sub.join("dispersion_max.csv"),
        )?;
        write_matrix_csv(&w.dispersion.values(), &sub.join("dispersion_sums.csv"))?;
        write_heatmap_pgm(&dispersion, &sub.join("dispersion.pgm"))?;
        let counts = w.motion.values();
        write_matrix_csv(&motion, &sub.join("motion.csv"))?;
        write_matrix_csv(&counts.normalized_by_max(), &sub.join("motion_max.csv"))?;
        write_matrix_csv(&counts, &sub.join("motion_counts.csv"))?;
        write_heatmap_pgm(&motion, &sub.join("motion.pgm"))?;
    }
    write_report_json(report, &dir.join("report.json"))?;
    write_json(&report.timing, &dir.join("timing.json"))
}

/// Output directory from `$AQUAFLOW_OUT_DIR`, else [`DEFAULT_OUT_DIR`].
pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUT_DIR), PathBuf::from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgproc::RgbFrame;
    use crate::io::write_ppm;
    use crate::synth::{render, SceneSpec};

    fn write_frames(frames: &[RgbFrame], dir: &Path) {
        for (k, f) in frames.iter().enumerate() {
            write_ppm(f, &dir.join(format!("f{k}.ppm"))).unwrap();
        }
    }

    fn blob_dir(frames: usize) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        write_frames(&render(&SceneSpec::blob(64, 48, frames)).unwrap().frames, dir.path());
        dir
    }

    fn config(dir: &Path) -> SessionConfig {
        let mut c = SessionConfig::new(FrameSource::new(dir, None).unwrap());
        c.threads = Some(1);
        c
    }

    #[test]
    fn settings_parse_and_reject_unknown_keys() {
        let s = Settings::parse("# run\ninput = /tmp\ntol = auto\nauto_tol_pairs=4\nwindows = 0:10, 10:\n").unwrap();
        assert_eq!(s.get("tol"), Some("auto"));
        assert!(Settings::parse("tolerance = 1")
            .unwrap_err()
            .to_string()
            .contains("line 1"));
        assert!(Settings::parse("input").is_err());
        let dir = tempfile::tempdir().unwrap();
        let mut s = Settings::default();
        s.set("input", dir.path().to_str().unwrap()).unwrap();
        s.set("windows", "0:10,10:").unwrap();
        s.set("tol", "auto").unwrap();
        s.set("stride", "2").unwrap();
        let c = s.to_config().unwrap();
        assert_eq!(
            c.tol,
            TolMode::Auto {
                pairs: DEFAULT_AUTO_TOL_PAIRS
            }
        );
        assert_eq!(c.frame_stride, 2);
        assert_eq!(
            c.windows,
            vec![
                WindowSpec::Frames {
                    start: 0,
                    end: Some(10)
                },
                WindowSpec::Frames { start: 10, end: None }
            ]
        );
        s.set("stride", "0").unwrap();
        assert!(s.to_config().is_err());
    }

    #[test]
    fn settings_overlay_takes_later_values() {
        let mut base = Settings::parse("tol = 0.5\ngrid_rows = 10").unwrap();
        base.overlay(&Settings::parse("tol = 0.1").unwrap());
        assert_eq!(base.get("tol"), Some("0.1"));
        assert_eq!(base.get("grid_rows"), Some("10"));
    }

    #[test]
    fn every_setting_is_documented_with_a_default() {
        for (key, doc) in SETTINGS {
            assert!(doc.contains("default") || doc.contains("required"), "{key}");
        }
    }

    #[test]
    fn window_order_is_validated() {
        let w = |s, e| WindowSpec::Frames { start: s, end: e };
        assert!(check_window_order(&[(0, Some(5)), (5, None)]).is_ok());
        assert!(check_window_order(&[(0, Some(5)), (4, Some(8))]).is_err());
        assert!(check_window_order(&[(3, Some(3))]).is_err());
        assert!(check_window_order(&[(0, None), (5, Some(8))]).is_err());
        let dir = blob_dir(2);
        let mut c = config(dir.path());
        c.windows = vec![w(4, Some(8)), w(0, Some(2))];
        assert!(run_session(&c).is_err());
    }

    #[test]
    fn seconds_windows_need_fps() {
        let spec = WindowSpec::parse("1.5:3", WindowUnit::Seconds).unwrap();
        assert!(spec.to_frames(None).is_err());
        assert_eq!(spec.to_frames(Some(20.0)).unwrap(), (30, Some(60)));
        assert_eq!(
            WindowSpec::parse("0.05:", WindowUnit::Seconds)
                .unwrap()
                .to_frames(Some(20.0))
                .unwrap(),
            (1, None)
        );
        assert!(WindowSpec::parse("5", WindowUnit::Frames).is_err());
        let dir = blob_dir(2);
        let mut c = config(dir.path());
        c.windows = vec![spec];
        assert!(run_session(&c).is_err());
    }

    #[test]
    fn static_pair_yields_no_motion() {
        let dir = tempfile::tempdir().unwrap();
        let scene = render(&SceneSpec::blob(64, 48, 2)).unwrap();
        write_frames(&[scene.frames[0].clone(), scene.frames[0].clone()], dir.path());
        let report = run_session(&config(dir.path())).unwrap();
        assert_eq!(report.frames_processed, 1);
        let w = &report.windows[0];
        assert_eq!(w.dispersion.total(), 0.0);
        assert_eq!(w.motion.total(), 0);
        assert_eq!((w.start_frame, w.end_frame, w.frames_retained), (0, 2, 2));
    }

    #[test]
    fn stride_and_windows_count_pairs() {
        let dir = blob_dir(11);
        let mut c = config(dir.path());
        c.frame_stride = 2;
        c.windows = vec![
            WindowSpec::Frames { start: 0, end: Some(5) },
            WindowSpec::Frames { start: 6, end: None },
        ];
        let report = run_session(&c).unwrap();
        let retained: Vec<_> = report.windows.iter().map(|w| w.frames_retained).collect();
        // [0, 5) keeps 0, 2, 4; [6, 11) keeps 6, 8, 10.
        assert_eq!(retained, [3, 3]);
        assert_eq!(report.frames_processed, 4);
        assert_eq!(report.windows[1].end_frame, 11);
        assert_eq!(report.windows[1].label, "frames_000006-000011");
        assert!(report.windows.iter().all(|w| w.motion.total() > 0));
    }

    #[test]
    fn window_past_the_end_is_empty() {
        let dir = blob_dir(3);
        let mut c = config(dir.path());
        c.windows = vec![WindowSpec::Frames {
            start: 10,
            end: Some(20),
        }];
        let report = run_session(&c).unwrap();
        assert_eq!(report.frames_processed, 0);
        assert_eq!(report.windows[0].frames_retained, 0);
        assert_eq!(report.windows[0].end_frame, 3);
    }

    #[test]
    fn repeated_windows_are_identical() {
        let dir = blob_dir(6);
        let mut c = config(dir.path());
        c.windows = vec![WindowSpec::Frames { start: 1, end: Some(5) }];
        let a = run_session(&c).unwrap();
        c.threads = Some(3);
        let b = run_session(&c).unwrap();
        assert_eq!(a.windows[0].dispersion, b.windows[0].dispersion);
        assert_eq!(a.windows[0].motion, b.windows[0].motion);
    }

    #[test]
    fn auto_tolerance_is_estimated_and_applied() {
        let dir = blob_dir(6);
        let mut c = config(dir.path());
        c.tol = TolMode::Auto { pairs: 2 };
        let auto = run_session(&c).unwrap();
        assert!(auto.tolerance >= 0.0);
        c.tol = TolMode::Fixed(Tolerance::new(auto.tolerance).unwrap());
        let fixed = run_session(&c).unwrap();
        assert_eq!(auto.windows[0].motion, fixed.windows[0].motion);
        // More requested pairs than available still resolves at the end.
        c.tol = TolMode::Auto { pairs: 50 };
        assert!(run_session(&c).unwrap().windows[0].frames_processed == 5);
    }

    #[test]
    fn corrupt_frame_error_names_window_and_frame() {
        let dir = blob_dir(4);
        std::fs::write(dir.path().join("f2.ppm"), b"P6\n4 4\n255\nxx").unwrap();
        let err = run_session(&config(dir.path())).unwrap_err();
        assert!(
            matches!(
                err,
                Error::InWindow {
                    window: 0,
                    frame: 2,
                    ..
                }
            ),
            "{err:?}"
        );
    }

    #[test]
    fn artifacts_are_written_deterministically() {
        let dir = blob_dir(4);
        let out = tempfile::tempdir().unwrap();
        let mut c = config(dir.path());
        c.output_dir = Some(out.path().to_path_buf());
        let report = run_session(&c).unwrap();
        let sub = out.path().join(&report.windows[0].label);
        let names = [
            "dispersion.csv",
            "dispersion_max.csv",
            "dispersion_sums.csv",
            "dispersion.pgm",
            "motion.csv",
            "motion_max.csv",
            "motion_counts.csv",
            "motion.pgm",
        ];
        let first: Vec<Vec<u8>> = names.iter().map(|n| std::fs::read(sub.join(n)).unwrap()).collect();
        let json = std::fs::read(out.path().join("report.json")).unwrap();
        assert!(out.path().join("timing.json").is_file());
        let dispersion = crate::io::read_matrix_csv(&sub.join("dispersion.csv")).unwrap();
        assert_eq!((dispersion.rows(), dispersion.cols()), (36, 30));
        run_session(&c).unwrap();
        let again: Vec<Vec<u8>> = names.iter().map(|n| std::fs::read(sub.join(n)).unwrap()).collect();
        assert_eq!(first, again);
        assert_eq!(json, std::fs::read(out.path().join("report.json")).unwrap());
        let parsed: serde_json::Value = serde_json::from_slice(&json).unwrap();
        assert_eq!(parsed["schema_version"], 1);
        assert_eq!(parsed["config"]["frame_stride"], 1);
    }

    #[test]
    fn luma_preprocessing_of_gray_frames() {
        let frame = Frame::Rgb(RgbFrame::filled(4, 4, [50, 50, 50]).unwrap());
        assert_eq!(preprocess(&frame, Preprocess::ChromaDiff).max(), 0.0);
        assert!((preprocess(&frame, Preprocess::Luma).max() - 50.0).abs() < 1e-9);
        assert_eq!("luma".parse::<Preprocess>().unwrap(), Preprocess::Luma);
        assert!("hsv".parse::<Preprocess>().is_err());
    }
}
