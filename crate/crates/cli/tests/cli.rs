use std::path::Path;
use std::process::{Command, Output};

fn aquaflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aquaflow"))
        .args(args)
        .env_remove("AQUAFLOW_OUT_DIR")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth_blob(dir: &Path, frames: usize) -> String {
    let out = dir.join("scene");
    let o = aquaflow(&[
        "synth",
        "--scene",
        "blob",
        "--width",
        "80",
        "--height",
        "60",
        "--frames",
        &frames.to_string(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    out.join("frames").to_str().unwrap().to_string()
}

fn read_csv(path: &Path) -> Vec<f64> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .flat_map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>())
        .collect()
}

#[test]
fn analyze_happy_path() {
    let dir = tempfile::tempdir().unwrap();
    let frames = synth_blob(dir.path(), 5);
    let run = dir.path().join("run1");
    let o = aquaflow(&[
        "analyze",
        "--input",
        &frames,
        "--fps",
        "20",
        "--tol",
        "0.2",
        "--out",
        run.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(run.join("report.json").is_file());
    assert!(run.join("timing.json").is_file());
    let sub = run.join("frames_000000-000005");
    for name in ["dispersion.csv", "dispersion.pgm", "motion.csv", "motion.pgm"] {
        assert!(sub.join(name).is_file(), "{name}");
    }
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("4 frame pairs"), "{stdout}");
}

#[test]
fn missing_input_is_a_usage_error() {
    let o = aquaflow(&["analyze"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage: aquaflow analyze"), "{}", stderr(&o));
}

#[test]
fn unknown_flag_and_bad_values_are_usage_errors() {
    assert_eq!(aquaflow(&["analyze", "--input", ".", "--bogus"]).status.code(), Some(1));
    assert_eq!(
        aquaflow(&["analyze", "--input", ".", "--stride", "x"]).status.code(),
        Some(1)
    );
    assert_eq!(
        aquaflow(&["analyze", "--input", ".", "--stride", "0"]).status.code(),
        Some(1)
    );
    assert_eq!(
        aquaflow(&["analyze", "--input", ".", "--preprocess", "hsv"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(aquaflow(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(aquaflow(&[]).status.code(), Some(1));
}

#[test]
fn corrupt_frame_is_a_runtime_error_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let frames = synth_blob(dir.path(), 3);
    let bad = Path::new(&frames).join("frame_00001.ppm");
    std::fs::write(&bad, b"P6\n80 60\n255\nshort").unwrap();
    let out = dir.path().join("out");
    let o = aquaflow(&["analyze", "--input", &frames, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("frame 1") && err.contains("frame_00001.ppm"), "{err}");
}

#[test]
fn missing_source_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.y4m");
    let o = aquaflow(&[
        "analyze",
        "--input",
        missing.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.y4m"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let frames = synth_blob(dir.path(), 3);
    let out = dir.path().join("out");
    let cfg = dir.path().join("run.conf");
    std::fs::write(
        &cfg,
        format!("input = {frames}\ntol = 5\ngrid_rows = 10\nout = {}\n", out.display()),
    )
    .unwrap();
    let o = aquaflow(&["analyze", "--config", cfg.to_str().unwrap(), "--tol", "0.3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = std::fs::read_to_string(out.join("report.json")).unwrap();
    assert!(report.contains("\"tolerance\": 0.3"), "{report}");
    assert!(report.contains("\"grid_rows\": 10"));
    let bad = dir.path().join("bad.conf");
    std::fs::write(&bad, "colour = blue\n").unwrap();
    assert_eq!(
        aquaflow(&["analyze", "--config", bad.to_str().unwrap()]).status.code(),
        Some(1)
    );
}

#[test]
fn out_dir_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let frames = synth_blob(dir.path(), 2);
    let env_out = dir.path().join("from_env");
    let o = Command::new(env!("CARGO_BIN_EXE_aquaflow"))
        .args(["analyze", "--input", &frames])
        .env("AQUAFLOW_OUT_DIR", &env_out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(env_out.join("report.json").is_file());
}

#[test]
fn flow_pair_of_identical_images_is_still() {
    let dir = tempfile::tempdir().unwrap();
    let frames = synth_blob(dir.path(), 2);
    let a = Path::new(&frames).join("frame_00000.ppm");
    let out = dir.path().join("pair");
    let o = aquaflow(&[
        "flow-pair",
        a.to_str().unwrap(),
        a.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mag = read_csv(&out.join("mag.csv"));
    assert_eq!(mag.len(), 80 * 60);
    assert!(mag.iter().all(|m| m.abs() <= 1e-9));
    for name in ["dx.csv", "dy.csv", "angle.csv"] {
        assert_eq!(read_csv(&out.join(name)).len(), 80 * 60);
    }
}

#[test]
fn flow_pair_follows_translation() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("t");
    let o = aquaflow(&[
        "synth",
        "--scene",
        "translate",
        "--width",
        "96",
        "--height",
        "96",
        "--frames",
        "2",
        "--shift-x",
        "1",
        "--shift-y",
        "-0.5",
        "--out",
        scene.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let truth = read_csv(&scene.join("truth/dy_00000.csv"));
    assert!(truth.iter().all(|&v| v == -0.5));
    let out = dir.path().join("pair");
    let f = scene.join("frames");
    let o = aquaflow(&[
        "flow-pair",
        f.join("frame_00000.ppm").to_str().unwrap(),
        f.join("frame_00001.ppm").to_str().unwrap(),
        "--preprocess",
        "luma",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dx = read_csv(&out.join("dx.csv"));
    let centre = dx[48 * 96 + 48];
    assert!((centre - 1.0).abs() < 0.05, "{centre}");
}

#[test]
fn help_lists_defaults() {
    let o = aquaflow(&["analyze", "--help"]);
    assert!(o.status.success());
    let help = String::from_utf8_lossy(&o.stdout);
    for needle in [
        "--tol <TOL>",
        "[default: 0.2]",
        "[default: 36]",
        "[default: 30]",
        "[default: 60]",
        "[default: 64]",
        "[default: 7]",
        "[default: 1.5]",
        "[default: chroma-diff]",
        "[default: 3]",
        "[default: 0.5]",
        "[default: 1]",
    ] {
        assert!(help.contains(needle), "missing {needle}");
    }
    let o = aquaflow(&["version"]);
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("aquaflow "));
}
