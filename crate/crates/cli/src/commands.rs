use std::path::{Path, PathBuf};

use aquaflow_core::analytics::Matrix;
use aquaflow_core::flow::{magnitude_angle, pyramid_flow};
use aquaflow_core::io::{decode_image_file, write_heatmap_pgm, write_json, write_matrix_csv, write_ppm};
use aquaflow_core::pipeline::{default_out_dir, preprocess, run_session, Settings};
use aquaflow_core::synth::{render, SceneSpec};
use aquaflow_core::{CertaintyMode, Error, ExpansionParams, FlowParams, Preprocess};

use crate::{AnalyzeArgs, Command, EstimatorArgs, FlowPairArgs, SceneName, SynthArgs};

pub enum Failure {
    /// Bad arguments; reported with the usage of the named subcommand.
    Usage(String, &'static str),
    Runtime(Error),
}

impl Failure {
    /// Parameter problems are usage errors; everything else happened at run time.
    fn classify(e: Error, sub: &'static str) -> Self {
        match e {
            Error::InvalidParams(msg) => Failure::Usage(msg, sub),
            other => Failure::Runtime(other),
        }
    }
}

pub fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Analyze(args) => analyze(args),
        Command::FlowPair(args) => flow_pair(args),
        Command::Synth(args) => synth(args),
        Command::Version => {
            println!("aquaflow {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    }
}

fn opt<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

fn estimator_settings(e: &EstimatorArgs) -> Vec<(&'static str, Option<String>)> {
    vec![
        ("preprocess", e.preprocess.clone()),
        ("window_radius", opt(&e.window_radius)),
        ("applicability_sigma", opt(&e.applicability_sigma)),
        ("certainty_mode", e.certainty_mode.clone()),
        ("aggregation_sigma", opt(&e.aggregation_sigma)),
        ("regularization_eps", opt(&e.regularization_eps)),
        ("iterations", opt(&e.iterations)),
        ("pyramid_levels", opt(&e.pyramid_levels)),
        ("pyramid_scale", opt(&e.pyramid_scale)),
    ]
}

/// Settings from the config file (if any) with flags applied on top.
fn analyze_settings(args: &AnalyzeArgs) -> Result<Settings, Failure> {
    let mut settings = match &args.config {
        Some(path) => Settings::load(path).map_err(|e| Failure::classify(e, "analyze"))?,
        None => Settings::default(),
    };
    let mut flags = estimator_settings(&args.estimator);
    flags.extend([
        ("input", args.input.clone()),
        ("fps", opt(&args.fps)),
        ("tol", args.tol.clone()),
        ("auto_tol_pairs", opt(&args.auto_tol_pairs)),
        ("grid_rows", opt(&args.grid_rows)),
        ("grid_cols", opt(&args.grid_cols)),
        ("mag_bins", opt(&args.mag_bins)),
        ("angle_bins", opt(&args.angle_bins)),
        ("mag_max", opt(&args.mag_max)),
        ("windows", args.windows.clone()),
        ("window_unit", args.window_unit.clone()),
        ("stride", opt(&args.stride)),
        ("out", args.out.as_ref().map(|p| p.display().to_string())),
        ("threads", opt(&args.threads)),
    ]);
    for (key, value) in flags {
        if let Some(v) = value {
            settings.set(key, v).expect("flag keys are known settings");
        }
    }
    Ok(settings)
}

fn analyze(args: AnalyzeArgs) -> Result<(), Failure> {
    let settings = analyze_settings(&args)?;
    if settings.get("input").is_none() {
        return Err(Failure::Usage(
            "no input given (--input or `input =` in --config)".into(),
            "analyze",
        ));
    }
    let mut config = settings.to_config().map_err(|e| Failure::classify(e, "analyze"))?;
    let out = config.output_dir.get_or_insert_with(default_out_dir).clone();
    let report = run_session(&config).map_err(|e| Failure::classify(e, "analyze"))?;
    println!(
        "{} frame pairs in {} window(s), tolerance {} px/pair, {:.1} pairs/s",
        report.frames_processed,
        report.windows.len(),
        report.tolerance,
        report.timing.pairs_per_second
    );
    for w in &report.windows {
        println!(
            "  {}: {} frames retained, {} pairs, {} gated pixels",
            w.label, w.frames_retained, w.frames_processed, w.gated_pixels
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn estimator_params(e: &EstimatorArgs) -> Result<(Preprocess, ExpansionParams, FlowParams), Error> {
    let mut ep = ExpansionParams::default();
    let mut fp = FlowParams::default();
    let mode = e.preprocess.as_deref().map(str::parse).transpose()?.unwrap_or_default();
    if let Some(m) = &e.certainty_mode {
        ep.certainty_mode = m.parse::<CertaintyMode>()?;
    }
    ep.window_radius = e.window_radius.unwrap_or(ep.window_radius);
    ep.applicability_sigma = e.applicability_sigma.unwrap_or(ep.applicability_sigma);
    fp.aggregation_sigma = e.aggregation_sigma.unwrap_or(fp.aggregation_sigma);
    fp.regularization_eps = e.regularization_eps.unwrap_or(fp.regularization_eps);
    fp.iterations = e.iterations.unwrap_or(fp.iterations);
    fp.pyramid_levels = e.pyramid_levels.unwrap_or(fp.pyramid_levels);
    fp.pyramid_scale = e.pyramid_scale.unwrap_or(fp.pyramid_scale);
    ep.validate()?;
    fp.validate()?;
    Ok((mode, ep, fp))
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn plane(w: usize, h: usize, data: &[f64]) -> Matrix {
    Matrix::new(h, w, data.to_vec()).expect("plane matches its dimensions")
}

fn flow_pair(args: FlowPairArgs) -> Result<(), Failure> {
    let (mode, ep, fp) = estimator_params(&args.estimator).map_err(|e| Failure::classify(e, "flow-pair"))?;
    let out = args.out.clone().unwrap_or_else(default_out_dir);
    let result = (|| -> Result<f64, Error> {
        let a = preprocess(&decode_image_file(&args.first, 0)?, mode);
        let b = preprocess(&decode_image_file(&args.second, 1)?, mode);
        let flow = pyramid_flow(&a, &b, &ep, &fp)?;
        let (mag, angle) = magnitude_angle(&flow);
        let (w, h) = flow.dims();
        create_dir(&out)?;
        write_matrix_csv(&plane(w, h, flow.dx()), &out.join("dx.csv"))?;
        write_matrix_csv(&plane(w, h, flow.dy()), &out.join("dy.csv"))?;
        write_matrix_csv(&plane(w, h, mag.data()), &out.join("mag.csv"))?;
        write_matrix_csv(&plane(w, h, angle.data()), &out.join("angle.csv"))?;
        write_heatmap_pgm(&plane(w, h, mag.data()), &out.join("mag.pgm"))?;
        Ok(flow.max_magnitude())
    })();
    let max = result.map_err(Failure::Runtime)?;
    println!("max magnitude {max} px; wrote {}", out.display());
    Ok(())
}

fn scene_spec(args: &SynthArgs) -> SceneSpec {
    let (w, h, n) = (args.width, args.height, args.frames);
    let spec = match args.scene {
        SceneName::Translate => SceneSpec::translate(w, h, [args.shift_x, args.shift_y], n),
        SceneName::Rotate => SceneSpec::rotate(w, h, args.omega, n),
        SceneName::Blob => SceneSpec::blob(w, h, n),
        SceneName::Bubbles => SceneSpec::bubbles(w, h, n),
    };
    spec.with_noise(args.noise).with_seed(args.seed)
}

fn synth(args: SynthArgs) -> Result<(), Failure> {
    let spec = scene_spec(&args);
    spec.validate().map_err(|e| Failure::classify(e, "synth"))?;
    let out = args.out.clone().unwrap_or_else(default_out_dir);
    let frames_dir: PathBuf = out.join("frames");
    let truth_dir = out.join("truth");
    let result = (|| -> Result<(), Error> {
        let scene = render(&spec)?;
        create_dir(&frames_dir)?;
        create_dir(&truth_dir)?;
        for (k, frame) in scene.frames.iter().enumerate() {
            write_ppm(frame, &frames_dir.join(format!("frame_{k:05}.ppm")))?;
        }
        for (k, t) in scene.truth.iter().enumerate() {
            let (w, h) = t.dims();
            write_matrix_csv(&plane(w, h, t.dx()), &truth_dir.join(format!("dx_{k:05}.csv")))?;
            write_matrix_csv(&plane(w, h, t.dy()), &truth_dir.join(format!("dy_{k:05}.csv")))?;
        }
        write_json(&spec, &out.join("scene.json"))
    })();
    result.map_err(Failure::Runtime)?;
    let hint = match args.scene {
        SceneName::Translate | SceneName::Rotate => " --preprocess luma",
        SceneName::Blob | SceneName::Bubbles => "",
    };
    println!(
        "wrote {} frames to {}\nanalyze with: aquaflow analyze --input {}{hint}",
        spec.frames,
        frames_dir.display(),
        frames_dir.display()
    );
    Ok(())
}
