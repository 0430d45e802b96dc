//! Chromatic optical flow analysis of underwater video.

pub mod analytics;
pub mod error;
mod filter;
pub mod flow;
pub mod imgproc;
pub mod io;
pub mod pipeline;
pub mod polyexp;
pub mod synth;

pub use analytics::{Accumulator, DispersionGrid, Matrix, MotionHistogram, Tolerance};
pub use error::{Error, Result};
pub use flow::{FlowField, FlowParams};
pub use imgproc::{RgbFrame, ScalarField, YuvFrame};
pub use io::{Frame, FrameSource, SessionReport};
pub use pipeline::{run_session, Preprocess, SessionConfig, Settings, TolMode, WindowSpec};
pub use polyexp::{CertaintyMode, ExpansionParams, PolyCoeffField};
pub use synth::{render, Scene, SceneKind, SceneSpec};
