//! `aquaflow` command-line tool.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

/// Chromatic optical flow and motion analytics for underwater video.
#[derive(Debug, Parser)]
#[command(name = "aquaflow", disable_version_flag = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Analyze a frame source and write dispersion and motion heatmaps.
    Analyze(AnalyzeArgs),
    /// Dense flow between two images, written as dx, dy, mag and angle CSVs.
    FlowPair(FlowPairArgs),
    /// Render a synthetic scene as a PPM sequence with ground-truth flow CSVs.
    Synth(SynthArgs),
    /// Print the version.
    Version,
}

/// Estimator parameters shared by `analyze` and `flow-pair`.
#[derive(Debug, Clone, Default, Args)]
pub struct EstimatorArgs {
    /// Field to estimate flow on: chroma-diff or luma [default: chroma-diff]
    #[arg(long, value_name = "MODE")]
    pub preprocess: Option<String>,
    /// Expansion window half-width in px [default: 5]
    #[arg(long, value_name = "N")]
    pub window_radius: Option<usize>,
    /// Expansion Gaussian sigma in px [default: 1.5]
    #[arg(long, value_name = "SIGMA")]
    pub applicability_sigma: Option<f64>,
    /// Expansion border handling: zero-outside-border or uniform [default: zero-outside-border]
    #[arg(long, value_name = "MODE")]
    pub certainty_mode: Option<String>,
    /// Flow aggregation Gaussian sigma in px [default: 7]
    #[arg(long, value_name = "SIGMA")]
    pub aggregation_sigma: Option<f64>,
    /// Tikhonov term of the 2x2 solve [default: 0.000001]
    #[arg(long, value_name = "EPS")]
    pub regularization_eps: Option<f64>,
    /// Refinement passes per pyramid level [default: 3]
    #[arg(long, value_name = "N")]
    pub iterations: Option<usize>,
    /// Pyramid depth [default: 3]
    #[arg(long, value_name = "N")]
    pub pyramid_levels: Option<usize>,
    /// Size ratio between pyramid levels [default: 0.5]
    #[arg(long, value_name = "RATIO")]
    pub pyramid_scale: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct AnalyzeArgs {
    /// key = value settings file; flags override its values
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Image-sequence directory, .y4m file, or - for YUV4MPEG2 on stdin
    #[arg(long, value_name = "PATH")]
    pub input: Option<String>,
    /// Frame rate, needed for windows in seconds unless the stream declares one [default: none]
    #[arg(long)]
    pub fps: Option<f64>,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    /// Motion tolerance in px per frame pair, or auto [default: 0.2]
    #[arg(long, value_name = "TOL")]
    pub tol: Option<String>,
    /// Frame pairs sampled by --tol auto [default: 10]
    #[arg(long, value_name = "N")]
    pub auto_tol_pairs: Option<usize>,
    /// Dispersion grid rows [default: 36]
    #[arg(long, value_name = "N")]
    pub grid_rows: Option<usize>,
    /// Dispersion grid columns [default: 30]
    #[arg(long, value_name = "N")]
    pub grid_cols: Option<usize>,
    /// Histogram speed bins [default: 60]
    #[arg(long, value_name = "N")]
    pub mag_bins: Option<usize>,
    /// Histogram direction bins over [0, pi] [default: 64]
    #[arg(long, value_name = "N")]
    pub angle_bins: Option<usize>,
    /// Speed of the top histogram bin in px per frame pair [default: 10]
    #[arg(long, value_name = "SPEED")]
    pub mag_max: Option<f64>,
    /// Comma-separated START:END windows; END may be empty [default: whole source]
    #[arg(long, value_name = "LIST")]
    pub windows: Option<String>,
    /// Unit of --windows: frames or seconds [default: frames]
    #[arg(long, value_name = "UNIT")]
    pub window_unit: Option<String>,
    /// Keep every n-th frame [default: 1]
    #[arg(long, value_name = "N")]
    pub stride: Option<usize>,
    /// Output directory [default: $AQUAFLOW_OUT_DIR or aquaflow-out]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads [default: available parallelism]
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct FlowPairArgs {
    /// First image (PPM, PGM or PNG)
    pub first: PathBuf,
    /// Second image
    pub second: PathBuf,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    /// Output directory [default: $AQUAFLOW_OUT_DIR or aquaflow-out]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SceneName {
    Translate,
    Rotate,
    Blob,
    Bubbles,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Scene to render
    #[arg(long, value_enum, default_value = "bubbles")]
    pub scene: SceneName,
    #[arg(long, default_value_t = 640)]
    pub width: usize,
    #[arg(long, default_value_t = 360)]
    pub height: usize,
    #[arg(long, default_value_t = 40)]
    pub frames: usize,
    /// Horizontal shift per frame of the translate scene, px
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    pub shift_x: f64,
    /// Vertical shift per frame of the translate scene, px
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub shift_y: f64,
    /// Rotation per frame of the rotate scene, rad
    #[arg(long, default_value_t = 0.01, allow_negative_numbers = true)]
    pub omega: f64,
    /// Intensity noise sigma added to every channel
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory [default: $AQUAFLOW_OUT_DIR or aquaflow-out]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

const USAGE_ERROR: u8 = 1;
const RUNTIME_ERROR: u8 = 2;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(USAGE_ERROR);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Usage(msg, sub)) => {
            eprintln!("error: {msg}\n");
            let mut cmd = Cli::command();
            cmd.build();
            let help = cmd
                .find_subcommand_mut(sub)
                .map(|c| c.render_usage().to_string())
                .unwrap_or_else(|| cmd.render_usage().to_string());
            eprintln!("{help}\n\nFor more information, try '--help'.");
            ExitCode::from(USAGE_ERROR)
        }
        Err(commands::Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(RUNTIME_ERROR)
        }
    }
}
