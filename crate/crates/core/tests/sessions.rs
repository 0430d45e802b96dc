//! End-to-end sessions over synthetic scenes.

use std::collections::BTreeSet;
use std::path::Path;

use aquaflow_core::imgproc::rgb_pixel_to_yuv;
use aquaflow_core::io::write_ppm;
use aquaflow_core::io::y4m::{self, Chroma, Y4mHeader};
use aquaflow_core::pipeline::{run_session, WindowUnit};
use aquaflow_core::synth::{render, SceneSpec};
use aquaflow_core::{FrameSource, RgbFrame, SessionConfig, WindowSpec};

fn write_frames(frames: &[RgbFrame], dir: &Path) {
    for (k, f) in frames.iter().enumerate() {
        write_ppm(f, &dir.join(format!("img{k:03}.ppm"))).unwrap();
    }
}

fn cells_within(spec: &SceneSpec, rows: usize, cols: usize, radius: f64) -> BTreeSet<(usize, usize)> {
    let (w, h) = (spec.width, spec.height);
    let mut out = BTreeSet::new();
    for k in 0..spec.frames {
        let c = spec.blob_center(k).unwrap();
        for y in 0..h {
            for x in 0..w {
                if (x as f64 - c[0]).hypot(y as f64 - c[1]) <= radius {
                    out.insert((y * rows / h, x * cols / w));
                }
            }
        }
    }
    out
}

#[test]
fn blob_mass_follows_its_trajectory() {
    let spec = SceneSpec::blob(120, 90, 50).with_seed(4);
    let scene = render(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_frames(&scene.frames, dir.path());
    let config = SessionConfig::new(FrameSource::new(dir.path(), None).unwrap());
    let report = run_session(&config).unwrap();
    let grid = &report.windows[0].dispersion;
    let (rows, cols) = (grid.rows(), grid.cols());
    let touched: BTreeSet<(usize, usize)> = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .filter(|&(r, c)| grid.sums()[r * cols + c] > 0.0)
        .collect();

    // Blob cores move by more than the tolerance, so their cells receive
    // mass. Flow elsewhere comes from the halo of the estimator's windows:
    // expansion and aggregation around the blob, in the second frame at
    // the blob's next position and the rounded prior offset.
    let support = spec.blob_support().unwrap();
    let core = cells_within(&spec, rows, cols, support / 3.0);
    let speed = (0..spec.frames - 1)
        .map(|k| {
            let (a, b) = (spec.blob_center(k).unwrap(), spec.blob_center(k + 1).unwrap());
            (b[0] - a[0]).hypot(b[1] - a[1])
        })
        .fold(0.0, f64::max);
    let reach = support + 5.0 + 21.0 + 2.0 * speed.ceil() + 1.0;
    let trajectory = cells_within(&spec, rows, cols, reach);
    assert!(
        core.is_subset(&touched),
        "{:?}",
        core.difference(&touched).collect::<Vec<_>>()
    );
    let inside: f64 = trajectory.iter().map(|&(r, c)| grid.sums()[r * cols + c]).sum();
    let fraction = inside / grid.total();
    assert!(fraction >= 0.99, "{fraction}");
    assert_eq!(report.frames_processed, 49);
}

#[test]
fn static_video_has_no_motion_mass() {
    let frame = render(&SceneSpec::bubbles(80, 60, 2).with_noise(3.0)).unwrap().frames[0].clone();
    let dir = tempfile::tempdir().unwrap();
    write_frames(&vec![frame; 6], dir.path());
    let report = run_session(&SessionConfig::new(FrameSource::new(dir.path(), None).unwrap())).unwrap();
    assert_eq!(report.frames_processed, 5);
    assert_eq!(report.windows[0].dispersion.total(), 0.0);
    assert_eq!(report.windows[0].motion.total(), 0);
}

#[test]
fn y4m_stream_with_seconds_windows() {
    let spec = SceneSpec::blob(64, 48, 8);
    let scene = render(&spec).unwrap();
    let planes: Vec<Vec<u8>> = scene
        .frames
        .iter()
        .map(|f| {
            let yuv: Vec<(f64, f64, f64)> = f
                .data()
                .chunks(3)
                .map(|p| rgb_pixel_to_yuv([p[0], p[1], p[2]]))
                .collect();
            let q = |v: f64| v.round().clamp(0.0, 255.0) as u8;
            let mut out: Vec<u8> = yuv.iter().map(|p| q(p.0)).collect();
            out.extend(yuv.iter().map(|p| q(p.1)));
            out.extend(yuv.iter().map(|p| q(p.2)));
            out
        })
        .collect();
    let header = Y4mHeader {
        width: 64,
        height: 48,
        fps: Some(4.0),
        chroma: Chroma::C444,
        full_range: true,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clip.y4m");
    std::fs::write(&path, y4m::encode(&header, &planes)).unwrap();

    let mut config = SessionConfig::new(FrameSource::new(&path, None).unwrap());
    config.windows = vec![
        WindowSpec::parse("0:1", WindowUnit::Seconds).unwrap(),
        WindowSpec::parse("1:", WindowUnit::Seconds).unwrap(),
    ];
    let report = run_session(&config).unwrap();
    let spans: Vec<_> = report.windows.iter().map(|w| (w.start_frame, w.end_frame)).collect();
    assert_eq!(spans, [(0, 4), (4, 8)]);
    assert_eq!(report.frames_processed, 6);
    assert!(report.windows.iter().all(|w| w.motion.total() > 0));
}
