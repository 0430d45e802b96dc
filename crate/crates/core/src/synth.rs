//! Synthetic scenes with exact ground-truth motion.
//!
//! Textures are sums of random sinusoids evaluated analytically at every
//! pixel, so subpixel motion is rendered without resampling error.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::imgproc::RgbFrame;

/// Sinusoids per texture.
pub const TEXTURE_WAVES: usize = 32;
/// Shortest and longest texture wavelengths in pixels.
pub const TEXTURE_WAVELENGTHS: (f64, f64) = (6.0, 40.0);
/// Flat background of the blob scenes.
pub const BACKGROUND: [u8; 3] = [96, 96, 96];
pub const BLOB_COLOR: [u8; 3] = [255, 128, 0];
pub const BUBBLE_COLOR: [u8; 3] = [255, 255, 255];
/// Blob opacity is exactly zero beyond this many sigmas from its center.
pub const BLOB_SUPPORT_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SceneKind {
    /// Gray texture moving by `shift` pixels per frame.
    GlobalTranslate { shift: [f64; 2] },
    /// Gray texture rotating by `omega` radians per frame about the image center.
    RigidRotate { omega: f64 },
    /// Orange Gaussian blob on a flat gray background.
    MovingGaussianBlob { sigma: f64, waypoints: Vec<[f64; 2]> },
    /// The moving blob under white disks rising at `rise_speed` px/frame.
    AchromaticBubblesOverColoredBlob {
        sigma: f64,
        waypoints: Vec<[f64; 2]>,
        bubbles: usize,
        bubble_radius: f64,
        rise_speed: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Standard deviation of Gaussian intensity noise, added equally to all
    /// three channels so achromatic pixels stay achromatic.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn translate(width: usize, height: usize, shift: [f64; 2], frames: usize) -> Self {
        Self::new(SceneKind::GlobalTranslate { shift }, width, height, frames)
    }

    pub fn rotate(width: usize, height: usize, omega: f64, frames: usize) -> Self {
        Self::new(SceneKind::RigidRotate { omega }, width, height, frames)
    }

    /// A blob crossing the frame diagonally from the upper left.
    pub fn blob(width: usize, height: usize, frames: usize) -> Self {
        let (w, h) = (width as f64, height as f64);
        let kind = SceneKind::MovingGaussianBlob {
            sigma: (w.min(h) / 24.0).max(2.0),
            waypoints: vec![[0.2 * w, 0.3 * h], [0.5 * w, 0.6 * h], [0.8 * w, 0.4 * h]],
        };
        Self::new(kind, width, height, frames)
    }

    /// The blob of [`SceneSpec::blob`] with a curtain of rising bubbles.
    pub fn bubbles(width: usize, height: usize, frames: usize) -> Self {
        let (w, h) = (width as f64, height as f64);
        let kind = SceneKind::AchromaticBubblesOverColoredBlob {
            sigma: (w.min(h) / 24.0).max(2.0),
            waypoints: vec![[0.15 * w, 0.7 * h], [0.45 * w, 0.55 * h], [0.6 * w, 0.75 * h]],
            bubbles: 24,
            bubble_radius: (w.min(h) / 40.0).max(1.5),
            rise_speed: 2.5,
        };
        Self::new(kind, width, height, frames)
    }

    fn new(kind: SceneKind, width: usize, height: usize, frames: usize) -> Self {
        Self {
            kind,
            width,
            height,
            frames,
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        if self.width == 0 || self.height == 0 {
            return bad("scene dimensions must be positive");
        }
        if self.frames < 2 {
            return bad("a scene needs at least 2 frames");
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad("noise sigma must be finite and >= 0");
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match &self.kind {
            SceneKind::GlobalTranslate { shift } if !finite(shift) => bad("shift must be finite"),
            SceneKind::RigidRotate { omega } if !omega.is_finite() => bad("omega must be finite"),
            SceneKind::MovingGaussianBlob { sigma, waypoints }
            | SceneKind::AchromaticBubblesOverColoredBlob { sigma, waypoints, .. } => {
                if !(sigma.is_finite() && *sigma > 0.0) {
                    return bad("blob sigma must be positive");
                }
                if waypoints.is_empty() || !waypoints.iter().all(|p| finite(p)) {
                    return bad("blob needs at least one finite waypoint");
                }
                if let SceneKind::AchromaticBubblesOverColoredBlob {
                    bubble_radius,
                    rise_speed,
                    ..
                } = &self.kind
                {
                    if !(bubble_radius.is_finite() && *bubble_radius > 0.0 && rise_speed.is_finite()) {
                        return bad("bubble radius must be positive and rise speed finite");
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Blob center in frame `k`, or `None` for scenes without a blob.
    /// The blob follows the waypoints piecewise linearly, reaching each at
    /// evenly spaced frames.
    pub fn blob_center(&self, k: usize) -> Option<[f64; 2]> {
        let waypoints = match &self.kind {
            SceneKind::MovingGaussianBlob { waypoints, .. }
            | SceneKind::AchromaticBubblesOverColoredBlob { waypoints, .. } => waypoints,
            _ => return None,
        };
        if waypoints.len() == 1 || self.frames < 2 {
            return Some(waypoints[0]);
        }
        let t = k as f64 / (self.frames - 1) as f64 * (waypoints.len() - 1) as f64;
        let i = (t.floor() as usize).min(waypoints.len() - 2);
        let f = t - i as f64;
        let (a, b) = (waypoints[i], waypoints[i + 1]);
        Some([a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])])
    }

    /// Radius beyond which the blob is absent.
    pub fn blob_support(&self) -> Option<f64> {
        match &self.kind {
            SceneKind::MovingGaussianBlob { sigma, .. } | SceneKind::AchromaticBubblesOverColoredBlob { sigma, .. } => {
                Some(BLOB_SUPPORT_SIGMAS * sigma)
            }
            _ => None,
        }
    }

    /// Bubble disks `(center, radius)` in frame `k`.
    pub fn bubbles_at(&self, k: usize) -> Vec<([f64; 2], f64)> {
        let SceneKind::AchromaticBubblesOverColoredBlob {
            bubbles,
            bubble_radius,
            rise_speed,
            ..
        } = &self.kind
        else {
            return Vec::new();
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1);
        let (w, h) = (self.width as f64, self.height as f64);
        (0..*bubbles)
            .map(|_| {
                let x = rng.random_range(0.0..w);
                let y0 = rng.random_range(0.0..h);
                let r = bubble_radius * rng.random_range(0.6..1.4);
                let v = rise_speed * rng.random_range(0.8..1.2);
                // Bubbles leave through the top and re-enter at the bottom.
                let span = h + 2.0 * r;
                let y = (y0 + r - v * k as f64).rem_euclid(span) - r;
                ([x, y], r)
            })
            .collect()
    }
}

/// Rendered frames and the true displacement from each frame to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub frames: Vec<RgbFrame>,
    pub truth: Vec<FlowField>,
}

/// Band-limited random texture with roughly unit variance.
#[derive(Debug, Clone)]
struct Texture {
    waves: Vec<([f64; 2], f64)>,
    amplitude: f64,
}

impl Texture {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi) = TEXTURE_WAVELENGTHS;
        let waves = (0..TEXTURE_WAVES)
            .map(|_| {
                let k = 2.0 * PI / rng.random_range(lo..hi);
                let dir = rng.random_range(0.0..2.0 * PI);
                ([k * dir.cos(), k * dir.sin()], rng.random_range(0.0..2.0 * PI))
            })
            .collect();
        Self {
            waves,
            amplitude: (2.0 / TEXTURE_WAVES as f64).sqrt(),
        }
    }

    fn eval(&self, x: f64, y: f64) -> f64 {
        self.amplitude
            * self
                .waves
                .iter()
                .map(|(k, p)| (k[0] * x + k[1] * y + p).cos())
                .sum::<f64>()
    }

    fn gray(&self, x: f64, y: f64) -> f64 {
        128.0 + 40.0 * self.eval(x, y)
    }
}

fn rotate_about(p: [f64; 2], c: [f64; 2], angle: f64) -> [f64; 2] {
    let (s, co) = angle.sin_cos();
    let (u, v) = (p[0] - c[0], p[1] - c[1]);
    [c[0] + co * u - s * v, c[1] + s * u + co * v]
}

fn center(spec: &SceneSpec) -> [f64; 2] {
    [(spec.width as f64 - 1.0) / 2.0, (spec.height as f64 - 1.0) / 2.0]
}

fn mix(a: [f64; 3], b: [u8; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|c| a[c] + t * (b[c] as f64 - a[c]))
}

/// Unquantized color of pixel `(x, y)` in frame `k`.
fn shade(spec: &SceneSpec, texture: &Texture, bubbles: &[([f64; 2], f64)], k: usize, x: f64, y: f64) -> [f64; 3] {
    match &spec.kind {
        SceneKind::GlobalTranslate { shift } => {
            let g = texture.gray(x - k as f64 * shift[0], y - k as f64 * shift[1]);
            [g; 3]
        }
        SceneKind::RigidRotate { omega } => {
            let p = rotate_about([x, y], center(spec), -(k as f64) * omega);
            [texture.gray(p[0], p[1]); 3]
        }
        SceneKind::MovingGaussianBlob { .. } | SceneKind::AchromaticBubblesOverColoredBlob { .. } => {
            let bg = BACKGROUND.map(f64::from);
            let c = spec.blob_center(k).expect("blob scene");
            let sigma = spec.blob_support().expect("blob scene") / BLOB_SUPPORT_SIGMAS;
            let r2 = (x - c[0]).powi(2) + (y - c[1]).powi(2);
            let mut color = if r2.sqrt() <= BLOB_SUPPORT_SIGMAS * sigma {
                mix(bg, BLOB_COLOR, (-r2 / (2.0 * sigma * sigma)).exp())
            } else {
                bg
            };
            for &(b, r) in bubbles {
                let coverage = (r + 0.5 - (x - b[0]).hypot(y - b[1])).clamp(0.0, 1.0);
                if coverage > 0.0 {
                    color = mix(color, BUBBLE_COLOR, coverage);
                }
            }
            color
        }
    }
}

fn render_frame(spec: &SceneSpec, texture: &Texture, k: usize) -> RgbFrame {
    let (w, h) = (spec.width, spec.height);
    let bubbles = spec.bubbles_at(k);
    let noise = (spec.noise_sigma > 0.0).then(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(2 + k as u64);
        let normal = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
        (0..w * h).map(|_| normal.sample(&mut rng)).collect::<Vec<f64>>()
    });
    let mut data = vec![0u8; 3 * w * h];
    for y in 0..h {
        for x in 0..w {
            let n = noise.as_ref().map_or(0.0, |v| v[y * w + x]);
            let color = shade(spec, texture, &bubbles, k, x as f64, y as f64);
            for c in 0..3 {
                data[3 * (y * w + x) + c] = (color[c] + n).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    RgbFrame::new(w, h, data).expect("positive dimensions")
}

/// Displacement of every pixel of frame `k` into frame `k + 1`. In blob
/// scenes only blob pixels move; bubbles are distractors and carry no truth.
fn truth_field(spec: &SceneSpec, k: usize) -> FlowField {
    let (w, h) = (spec.width, spec.height);
    match &spec.kind {
        SceneKind::GlobalTranslate { shift } => FlowField::from_fn(w, h, |_, _| (shift[0], shift[1])),
        SceneKind::RigidRotate { omega } => {
            let c = center(spec);
            FlowField::from_fn(w, h, |x, y| {
                let p = [x as f64, y as f64];
                let q = rotate_about(p, c, *omega);
                (q[0] - p[0], q[1] - p[1])
            })
        }
        SceneKind::MovingGaussianBlob { .. } | SceneKind::AchromaticBubblesOverColoredBlob { .. } => {
            let a = spec.blob_center(k).expect("blob scene");
            let b = spec.blob_center(k + 1).expect("blob scene");
            let support = spec.blob_support().expect("blob scene");
            let v = (b[0] - a[0], b[1] - a[1]);
            FlowField::from_fn(w, h, |x, y| {
                if (x as f64 - a[0]).hypot(y as f64 - a[1]) <= support {
                    v
                } else {
                    (0.0, 0.0)
                }
            })
        }
    }
}

/// Renders every frame of a scene with its ground truth. Deterministic in
/// the seed regardless of thread count.
pub fn render(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let texture = Texture::new(spec.seed);
    let frames = (0..spec.frames)
        .into_par_iter()
        .map(|k| render_frame(spec, &texture, k))
        .collect();
    let truth = (0..spec.frames - 1)
        .into_par_iter()
        .map(|k| truth_field(spec, k))
        .collect();
    Ok(Scene { frames, truth })
}

/// Pixels at least `margin` pixels away from every image edge.
pub fn interior_mask(width: usize, height: usize, margin: usize) -> Vec<bool> {
    let inside = |i: usize, n: usize| i >= margin && i + margin < n;
    (0..height)
        .flat_map(|y| (0..width).map(move |x| inside(x, width) && inside(y, height)))
        .collect()
}

/// Endpoint error statistics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndpointError {
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    /// Pixels that entered the statistics.
    pub count: usize,
}

/// Euclidean error between `flow` and `truth` over pixels that are in
/// `mask` and valid in both fields. Percentiles use the nearest rank.
pub fn endpoint_error(flow: &FlowField, truth: &FlowField, mask: &[bool]) -> Result<EndpointError> {
    if flow.dims() != truth.dims() {
        return Err(Error::dims(flow.dims(), truth.dims()));
    }
    let n = flow.width() * flow.height();
    if mask.len() != n {
        return Err(Error::InvalidParams(format!(
            "mask has {} entries, expected {n}",
            mask.len()
        )));
    }
    let mut errors: Vec<f64> = (0..n)
        .filter(|&i| mask[i] && flow.valid()[i] && truth.valid()[i])
        .map(|i| (flow.dx()[i] - truth.dx()[i]).hypot(flow.dy()[i] - truth.dy()[i]))
        .collect();
    if errors.is_empty() {
        return Err(Error::InvalidParams("no pixels to compare".into()));
    }
    errors.sort_by(f64::total_cmp);
    let rank = |q: f64| errors[((q * errors.len() as f64).ceil() as usize).clamp(1, errors.len()) - 1];
    let m = errors.len();
    let median = if m % 2 == 1 {
        errors[m / 2]
    } else {
        0.5 * (errors[m / 2 - 1] + errors[m / 2])
    };
    Ok(EndpointError {
        mean: errors.iter().sum::<f64>() / m as f64,
        median,
        p95: rank(0.95),
        count: m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgproc::{chroma_difference, rgb_to_yuv};

    #[test]
    fn translate_truth_is_constant() {
        let scene = render(&SceneSpec::translate(24, 16, [0.5, 0.0], 3)).unwrap();
        assert_eq!(scene.frames.len(), 3);
        assert_eq!(scene.truth.len(), 2);
        for t in &scene.truth {
            assert!(t.dx().iter().all(|&v| v == 0.5));
            assert!(t.dy().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn translate_by_whole_pixel_shifts_frame() {
        let scene = render(&SceneSpec::translate(32, 20, [2.0, 1.0], 2)).unwrap();
        let (a, b) = (&scene.frames[0], &scene.frames[1]);
        for y in 1..20 {
            for x in 2..32 {
                assert_eq!(b.pixel(x, y), a.pixel(x - 2, y - 1));
            }
        }
    }

    #[test]
    fn rotation_truth_matches_closed_form() {
        let omega = 0.01;
        let spec = SceneSpec::rotate(40, 30, omega, 2);
        let scene = render(&spec).unwrap();
        let (cx, cy) = (19.5, 14.5);
        for (x, y) in [(0, 0), (39, 29), (7, 22), (20, 15)] {
            let (u, v) = (x as f64 - cx, y as f64 - cy);
            let want = (
                omega.cos() * u - omega.sin() * v - u,
                omega.sin() * u + omega.cos() * v - v,
            );
            let got = scene.truth[0].get(x, y);
            assert!((got.0 - want.0).abs() <= 1e-12 && (got.1 - want.1).abs() <= 1e-12);
        }
    }

    #[test]
    fn render_is_deterministic() {
        let spec = SceneSpec::bubbles(64, 48, 4).with_noise(2.0).with_seed(7);
        assert_eq!(render(&spec).unwrap(), render(&spec).unwrap());
        let other = render(&spec.clone().with_seed(8)).unwrap();
        assert_ne!(render(&spec).unwrap().frames, other.frames);
    }

    #[test]
    fn texture_uses_its_range() {
        let scene = render(&SceneSpec::translate(128, 128, [0.0, 0.0], 2)).unwrap();
        let data = scene.frames[0].data();
        let mean = data.iter().map(|&v| v as f64).sum::<f64>() / data.len() as f64;
        let var = data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / data.len() as f64;
        assert!((mean - 128.0).abs() < 15.0, "{mean}");
        assert!(var.sqrt() > 20.0 && var.sqrt() < 60.0, "{}", var.sqrt());
    }

    #[test]
    fn bubbles_are_achromatic_and_blob_is_not() {
        let spec = SceneSpec::bubbles(120, 90, 6).with_noise(1.5).with_seed(3);
        let scene = render(&spec).unwrap();
        let support = spec.blob_support().unwrap();
        let (mut bubble_px, mut blob_px) = (0, 0);
        for (k, frame) in scene.frames.iter().enumerate() {
            let chroma = chroma_difference(&rgb_to_yuv(frame));
            let c = spec.blob_center(k).unwrap();
            let bubbles = spec.bubbles_at(k);
            for y in 0..90 {
                for x in 0..120 {
                    let (xf, yf) = (x as f64, y as f64);
                    let in_blob = (xf - c[0]).hypot(yf - c[1]) <= support;
                    let in_bubble = bubbles.iter().any(|(b, r)| (xf - b[0]).hypot(yf - b[1]) < r + 0.5);
                    if in_bubble && !in_blob {
                        bubble_px += 1;
                        assert!(chroma.get(x, y) < 1e-6);
                    }
                    if !in_bubble && (xf - c[0]).hypot(yf - c[1]) < support / 3.0 {
                        blob_px += 1;
                        assert!(chroma.get(x, y) > 0.0);
                    }
                }
            }
        }
        assert!(bubble_px > 100 && blob_px > 100, "{bubble_px} {blob_px}");
    }

    #[test]
    fn blob_follows_waypoints() {
        let spec = SceneSpec::new(
            SceneKind::MovingGaussianBlob {
                sigma: 3.0,
                waypoints: vec![[10.0, 10.0], [30.0, 10.0], [30.0, 20.0]],
            },
            40,
            30,
            5,
        );
        assert_eq!(spec.blob_center(0), Some([10.0, 10.0]));
        assert_eq!(spec.blob_center(1), Some([20.0, 10.0]));
        assert_eq!(spec.blob_center(2), Some([30.0, 10.0]));
        assert_eq!(spec.blob_center(4), Some([30.0, 20.0]));
        let truth = &render(&spec).unwrap().truth[0];
        assert_eq!(truth.get(10, 10), (10.0, 0.0));
        assert_eq!(truth.get(10, 25), (0.0, 0.0));
    }

    #[test]
    fn bubbles_wrap_vertically() {
        let spec = SceneSpec::bubbles(50, 40, 200);
        for k in [0, 17, 199] {
            for (c, r) in spec.bubbles_at(k) {
                assert!(c[1] >= -r && c[1] < 40.0 + r);
            }
        }
    }

    #[test]
    fn endpoint_error_statistics() {
        let truth = FlowField::from_fn(10, 10, |x, _| (x as f64 * 0.1, 0.0));
        let mask = interior_mask(10, 10, 2);
        let e = endpoint_error(&truth, &truth, &mask).unwrap();
        assert_eq!((e.mean, e.median, e.p95, e.count), (0.0, 0.0, 0.0, 36));
        let shifted = FlowField::from_fn(10, 10, |x, _| (x as f64 * 0.1 + 1.0, 0.0));
        let e = endpoint_error(&shifted, &truth, &mask).unwrap();
        assert!((e.mean - 1.0).abs() < 1e-12 && (e.median - 1.0).abs() < 1e-12 && (e.p95 - 1.0).abs() < 1e-12);
        assert!(endpoint_error(&FlowField::zeros(9, 10), &truth, &mask).is_err());
    }

    #[test]
    fn percentiles_use_nearest_rank() {
        let truth = FlowField::zeros(20, 1);
        let flow = FlowField::from_fn(20, 1, |x, _| ((x + 1) as f64, 0.0));
        let e = endpoint_error(&flow, &truth, &[true; 20]).unwrap();
        assert_eq!(e.p95, 19.0);
        assert_eq!(e.median, 10.5);
        assert_eq!(e.mean, 10.5);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(render(&SceneSpec::translate(8, 8, [f64::NAN, 0.0], 2)).is_err());
        assert!(render(&SceneSpec::translate(8, 8, [1.0, 0.0], 1)).is_err());
        assert!(render(&SceneSpec::translate(0, 8, [1.0, 0.0], 2)).is_err());
        assert!(render(&SceneSpec::blob(8, 8, 3).with_noise(-1.0)).is_err());
    }
}
