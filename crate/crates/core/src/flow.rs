//! Two-frame displacement estimation from polynomial expansions.
//!
//! If frame `t+1` is frame `t` translated by `d`, the local models satisfy
//! `A_{t+1} = A_t` and `b_{t+1} = b_t - 2 A_t d`, which gives the closed form
//! `d = 1/2 A_t^{-1} (b_t - b_{t+1})` ([`displacement_ideal`]). Real frames
//! do not satisfy the model exactly, so [`displacement_practical`] averages
//! the quadratic terms of both frames, compensates for a prior displacement,
//! and solves the resulting equations in a Gaussian least-squares sense over
//! a neighbourhood. [`pyramid_flow`] runs the practical solver coarse to fine.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{blur, blur_in_place, gaussian_kernel, gaussian_weights, Border, Planes};
use crate::imgproc::{FieldKind, ScalarField};
use crate::polyexp::{polynomial_expansion, ExpansionParams, PolyCoeffField};

/// Pixels whose quadratic term has `|det A| < DET_FLOOR` are not solved by
/// the ideal estimator.
pub const DET_FLOOR: f64 = 1e-9;

/// Dense per-pixel displacement in pixels per frame pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    dx: Vec<f64>,
    dy: Vec<f64>,
    valid: Vec<bool>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            dx: vec![0.0; n],
            dy: vec![0.0; n],
            valid: vec![true; n],
        }
    }

    /// Builds a field where every pixel is valid.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> (f64, f64)) -> Self {
        let mut out = Self::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                let (dx, dy) = f(x, y);
                out.dx[y * width + x] = dx;
                out.dy[y * width + x] = dy;
            }
        }
        out
    }

    /// Assembles a field from planes; invalid pixels are forced to zero.
    pub fn from_parts(
        width: usize,
        height: usize,
        mut dx: Vec<f64>,
        mut dy: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let n = width * height;
        if dx.len() != n || dy.len() != n || valid.len() != n {
            return Err(Error::InvalidParams(format!(
                "flow planes do not match {width}x{height}"
            )));
        }
        for i in 0..n {
            if !valid[i] || !dx[i].is_finite() || !dy[i].is_finite() {
                dx[i] = 0.0;
                dy[i] = 0.0;
            }
        }
        Ok(Self {
            width,
            height,
            dx,
            dy,
            valid,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.dx[i], self.dy[i])
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn dx(&self) -> &[f64] {
        &self.dx
    }

    pub fn dy(&self) -> &[f64] {
        &self.dy
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn max_magnitude(&self) -> f64 {
        self.dx
            .iter()
            .zip(&self.dy)
            .map(|(x, y)| x.hypot(*y))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    /// Sigma of the Gaussian that aggregates the per-pixel equations. The
    /// weights peak at 1, so `regularization_eps` is on the scale of a single
    /// pixel's equations. Zero solves every pixel on its own.
    pub aggregation_sigma: f64,
    /// Tikhonov term added to the diagonal of the aggregated 2x2 system.
    pub regularization_eps: f64,
    /// Refinement passes per pyramid level.
    pub iterations: usize,
    pub pyramid_levels: usize,
    /// Size ratio between consecutive pyramid levels.
    pub pyramid_scale: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            aggregation_sigma: 7.0,
            regularization_eps: 1e-6,
            iterations: 3,
            pyramid_levels: 3,
            pyramid_scale: 0.5,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParams(msg.into()));
        if !(self.aggregation_sigma.is_finite() && self.aggregation_sigma >= 0.0) {
            return bad("aggregation_sigma must be finite and non-negative");
        }
        if !(self.regularization_eps.is_finite() && self.regularization_eps >= 0.0) {
            return bad("regularization_eps must be finite and non-negative");
        }
        if self.iterations < 1 {
            return bad("iterations must be >= 1");
        }
        if self.pyramid_levels < 1 {
            return bad("pyramid_levels must be >= 1");
        }
        if !(self.pyramid_scale > 0.0 && self.pyramid_scale < 1.0) {
            return bad("pyramid_scale must lie in (0, 1)");
        }
        Ok(())
    }
}

fn check_same(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::dims(a, b));
    }
    Ok(())
}

/// Closed-form displacement `d = 1/2 A_t^{-1} (b_t - b_{t+1})` at every pixel.
pub fn displacement_ideal(ct: &PolyCoeffField, ct1: &PolyCoeffField) -> Result<FlowField> {
    check_same(ct.dims(), ct1.dims())?;
    let (w, h) = ct.dims();
    let n = w * h;
    let mut dx = vec![0.0; n];
    let mut dy = vec![0.0; n];
    let mut valid = vec![false; n];
    for i in 0..n {
        let (a11, a12, a22) = (ct.a11[i], ct.a12[i], ct.a22[i]);
        let det = a11 * a22 - a12 * a12;
        if det.abs() < DET_FLOOR || !ct.certain[i] || !ct1.certain[i] {
            continue;
        }
        let db = [0.5 * (ct.bx[i] - ct1.bx[i]), 0.5 * (ct.by[i] - ct1.by[i])];
        dx[i] = (a22 * db[0] - a12 * db[1]) / det;
        dy[i] = (a11 * db[1] - a12 * db[0]) / det;
        valid[i] = true;
    }
    FlowField::from_parts(w, h, dx, dy, valid)
}

/// Averaged-coefficient estimator with prior compensation and Gaussian
/// neighbourhood aggregation, iterated `params.iterations` times.
pub fn displacement_practical(
    ct: &PolyCoeffField,
    ct1: &PolyCoeffField,
    prior: &FlowField,
    params: &FlowParams,
) -> Result<FlowField> {
    params.validate()?;
    check_same(ct.dims(), ct1.dims())?;
    check_same(ct.dims(), prior.dims())?;
    let (w, h) = ct.dims();
    let kernel = gaussian_weights(params.aggregation_sigma);
    let mut d = (prior.dx.clone(), prior.dy.clone());
    let mut ws = Workspace::default();
    for _ in 0..params.iterations {
        solve_once(ct, ct1, &mut d, &kernel, params.regularization_eps, &mut ws);
    }
    FlowField::from_parts(w, h, d.0, d.1, ct.certain.clone())
}

/// Scratch buffers reused across refinement passes.
#[derive(Default)]
struct Workspace {
    /// Per-pixel normal equations, planes `[g11, g12, g22, h1, h2]` back to back.
    eq: Vec<f64>,
    tmp: Planes,
    next: (Vec<f64>, Vec<f64>),
}

/// One aggregated solve, replacing `d` with the new estimate. Raw estimates
/// are kept for every pixel, including the uncertain border band, so they
/// can seed the next pass.
fn solve_once(
    ct: &PolyCoeffField,
    ct1: &PolyCoeffField,
    d: &mut (Vec<f64>, Vec<f64>),
    kernel: &[f64],
    eps: f64,
    ws: &mut Workspace,
) {
    let (w, h) = ct.dims();
    let n = w * h;
    let (prior_dx, prior_dy) = (&d.0, &d.1);
    // G = A^T A (symmetric) and h = A^T db per pixel.
    ws.eq.resize(5 * n, 0.0);
    let (g11, rest) = ws.eq.split_at_mut(n);
    let (g12, rest) = rest.split_at_mut(n);
    let (g22, rest) = rest.split_at_mut(n);
    let (h1, h2) = rest.split_at_mut(n);
    g11.par_chunks_mut(w)
        .zip(g12.par_chunks_mut(w))
        .zip(g22.par_chunks_mut(w))
        .zip(h1.par_chunks_mut(w))
        .zip(h2.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, ((((g11, g12), g22), h1), h2))| {
            for x in 0..w {
                let i = y * w + x;
                let sx = (x as isize + round_offset(prior_dx[i])).clamp(0, w as isize - 1) as usize;
                let sy = (y as isize + round_offset(prior_dy[i])).clamp(0, h as isize - 1) as usize;
                let j = sy * w + sx;
                // Offset actually applied after clamping to the image.
                let (rx, ry) = (sx as f64 - x as f64, sy as f64 - y as f64);

                let a11 = 0.5 * (ct.a11[i] + ct1.a11[j]);
                let a12 = 0.5 * (ct.a12[i] + ct1.a12[j]);
                let a22 = 0.5 * (ct.a22[i] + ct1.a22[j]);
                let db1 = 0.5 * (ct.bx[i] - ct1.bx[j]) + a11 * rx + a12 * ry;
                let db2 = 0.5 * (ct.by[i] - ct1.by[j]) + a12 * rx + a22 * ry;

                g11[x] = a11 * a11 + a12 * a12;
                g12[x] = a12 * (a11 + a22);
                g22[x] = a12 * a12 + a22 * a22;
                h1[x] = a11 * db1 + a12 * db2;
                h2[x] = a12 * db1 + a22 * db2;
            }
        });

    for plane in ws.eq.chunks_exact_mut(n) {
        blur_in_place(plane, w, h, kernel, Border::Zero, &mut ws.tmp);
    }

    let (g11, rest) = ws.eq.split_at(n);
    let (g12, rest) = rest.split_at(n);
    let (g22, rest) = rest.split_at(n);
    let (h1, h2) = rest.split_at(n);
    let (nx, ny) = &mut ws.next;
    nx.resize(n, 0.0);
    ny.resize(n, 0.0);
    nx.par_chunks_mut(w)
        .zip(ny.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (dx, dy))| {
            let o = y * w;
            for x in 0..w {
                let i = o + x;
                let (a, b, c) = (g11[i] + eps, g12[i], g22[i] + eps);
                let det = a * c - b * b;
                let scale = a + c;
                let (mut ex, mut ey) = (0.0, 0.0);
                if det > 1e-12 * scale * scale && det > 0.0 {
                    let inv = 1.0 / det;
                    let (px, py) = ((c * h1[i] - b * h2[i]) * inv, (a * h2[i] - b * h1[i]) * inv);
                    if px.is_finite() && py.is_finite() {
                        (ex, ey) = (px, py);
                    }
                }
                dx[x] = ex;
                dy[x] = ey;
            }
        });
    std::mem::swap(d, &mut ws.next);
}

/// Rounds half away from zero. A plain cast avoids the libm call that
/// `f64::round` compiles to without SSE4.1. Offsets beyond the image are
/// clamped by the caller, so saturation is harmless.
#[inline(always)]
fn round_offset(v: f64) -> isize {
    (v + 0.5f64.copysign(v)) as isize
}

/// Polynomial expansions of every level of a frame's Gaussian pyramid,
/// finest first. Reusable across the two pairs a frame takes part in.
#[derive(Debug, Clone)]
pub struct ExpansionPyramid {
    levels: Vec<PolyCoeffField>,
}

impl ExpansionPyramid {
    pub fn build(frame: &ScalarField, eparams: &ExpansionParams, fparams: &FlowParams) -> Result<Self> {
        eparams.validate()?;
        fparams.validate()?;
        let (w, h) = frame.dims();
        let dims = level_dims(w, h, fparams);
        let r = eparams.window_radius;
        let &(cw, ch) = dims.last().expect("at least one level");
        if cw <= 2 * r || ch <= 2 * r {
            return Err(Error::FrameTooSmall {
                width: w,
                height: h,
                reason: format!(
                    "coarsest of {} pyramid levels is {cw}x{ch}, expansion needs more than {} per side",
                    fparams.pyramid_levels,
                    2 * r
                ),
            });
        }
        let sigma = 0.5 / fparams.pyramid_scale;
        let kernel = gaussian_kernel(sigma);
        let mut levels = Vec::with_capacity(dims.len());
        let mut current = frame.clone();
        for (k, &(lw, lh)) in dims.iter().enumerate() {
            if k > 0 {
                current = downsample(&current, lw, lh, &kernel);
            }
            levels.push(polynomial_expansion(&current, eparams)?);
        }
        Ok(Self { levels })
    }

    pub fn finest(&self) -> &PolyCoeffField {
        &self.levels[0]
    }

    pub fn levels(&self) -> &[PolyCoeffField] {
        &self.levels
    }
}

/// Dimensions of every pyramid level, finest first. Coarse sample `i` sits
/// at fine coordinate `i * (W - 1) / (Wc - 1)` so the end pixels align.
fn level_dims(w: usize, h: usize, p: &FlowParams) -> Vec<(usize, usize)> {
    let mut dims = vec![(w, h)];
    for _ in 1..p.pyramid_levels {
        let &(pw, ph) = dims.last().unwrap();
        let shrink = |len: usize| -> usize {
            if len <= 1 {
                1
            } else {
                (((len - 1) as f64 * p.pyramid_scale).round() as usize).max(1) + 1
            }
        };
        dims.push((shrink(pw), shrink(ph)));
    }
    dims
}

fn axis_ratio(fine: usize, coarse: usize) -> f64 {
    if coarse <= 1 {
        1.0
    } else {
        (fine - 1) as f64 / (coarse - 1) as f64
    }
}

fn downsample(src: &ScalarField, cw: usize, ch: usize, kernel: &[f64]) -> ScalarField {
    let (w, h) = src.dims();
    let smooth = blur(src.data(), w, h, kernel, Border::Clamp);
    let (fx, fy) = (axis_ratio(w, cw), axis_ratio(h, ch));
    let mut data = vec![0.0; cw * ch];
    data.par_chunks_mut(cw).enumerate().for_each(|(j, row)| {
        for (i, v) in row.iter_mut().enumerate() {
            *v = bilinear(&smooth, w, h, i as f64 * fx, j as f64 * fy);
        }
    });
    ScalarField::from_parts_unchecked(cw, ch, data, src.kind())
}

#[inline]
fn bilinear(plane: &[f64], w: usize, h: usize, px: f64, py: f64) -> f64 {
    let split = |p: f64, len: usize| -> (usize, usize, f64) {
        if len == 1 {
            return (0, 0, 0.0);
        }
        let p = p.clamp(0.0, (len - 1) as f64);
        // Truncation is floor for the non-negative clamped coordinate.
        let i0 = (p as usize).min(len - 2);
        (i0, i0 + 1, p - i0 as f64)
    };
    let (x0, x1, tx) = split(px, w);
    let (y0, y1, ty) = split(py, h);
    let top = plane[y0 * w + x0] * (1.0 - tx) + plane[y0 * w + x1] * tx;
    let bottom = plane[y1 * w + x0] * (1.0 - tx) + plane[y1 * w + x1] * tx;
    top * (1.0 - ty) + bottom * ty
}

/// Bilinearly resamples a coarse flow onto a finer grid, rescaling each
/// component by that axis' size ratio.
fn upsample_flow(dx: &[f64], dy: &[f64], cw: usize, ch: usize, w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let (fx, fy) = (axis_ratio(w, cw), axis_ratio(h, ch));
    let mut ux = vec![0.0; w * h];
    let mut uy = vec![0.0; w * h];
    ux.par_chunks_mut(w)
        .zip(uy.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (rx, ry))| {
            let cy = y as f64 / fy;
            for x in 0..w {
                let cx = x as f64 / fx;
                rx[x] = fx * bilinear(dx, cw, ch, cx, cy);
                ry[x] = fy * bilinear(dy, cw, ch, cx, cy);
            }
        });
    (ux, uy)
}

/// Coarse-to-fine flow between two precomputed expansion pyramids.
pub fn flow_from_pyramids(pt: &ExpansionPyramid, pt1: &ExpansionPyramid, fparams: &FlowParams) -> Result<FlowField> {
    fparams.validate()?;
    if pt.levels.len() != pt1.levels.len() {
        return Err(Error::InvalidParams("pyramids differ in depth".into()));
    }
    for (a, b) in pt.levels.iter().zip(&pt1.levels) {
        check_same(a.dims(), b.dims())?;
    }
    let kernel = gaussian_weights(fparams.aggregation_sigma);
    let eps = fparams.regularization_eps;

    let coarsest = pt.levels.len() - 1;
    let (cw, ch) = pt.levels[coarsest].dims();
    let mut d = (vec![0.0; cw * ch], vec![0.0; cw * ch]);
    let mut ws = Workspace::default();
    for level in (0..=coarsest).rev() {
        let (ct, ct1) = (&pt.levels[level], &pt1.levels[level]);
        if level < coarsest {
            let (pw, ph) = pt.levels[level + 1].dims();
            let (w, h) = ct.dims();
            d = upsample_flow(&d.0, &d.1, pw, ph, w, h);
        }
        for _ in 0..fparams.iterations {
            solve_once(ct, ct1, &mut d, &kernel, eps, &mut ws);
        }
    }
    let (w, h) = pt.finest().dims();
    FlowField::from_parts(w, h, d.0, d.1, pt.finest().certain.clone())
}

/// Dense flow from `frame_t` to `frame_t1`.
pub fn pyramid_flow(
    frame_t: &ScalarField,
    frame_t1: &ScalarField,
    eparams: &ExpansionParams,
    fparams: &FlowParams,
) -> Result<FlowField> {
    check_same(frame_t.dims(), frame_t1.dims())?;
    let pt = ExpansionPyramid::build(frame_t, eparams, fparams)?;
    let pt1 = ExpansionPyramid::build(frame_t1, eparams, fparams)?;
    flow_from_pyramids(&pt, &pt1, fparams)
}

/// Speed `sqrt(dx^2 + dy^2)` and direction `atan2(dy, dx)` in `(-pi, pi]`,
/// with direction 0 where the speed is 0.
pub fn magnitude_angle(flow: &FlowField) -> (ScalarField, ScalarField) {
    let (w, h) = flow.dims();
    let (mag, angle): (Vec<f64>, Vec<f64>) = flow
        .dx
        .par_iter()
        .zip(flow.dy.par_iter())
        .map(|(&dx, &dy)| {
            let m = (dx * dx + dy * dy).sqrt();
            if m == 0.0 {
                return (0.0, 0.0);
            }
            let a = dy.atan2(dx);
            (
                m,
                if a <= -std::f64::consts::PI {
                    std::f64::consts::PI
                } else {
                    a
                },
            )
        })
        .unzip();
    (
        ScalarField::from_parts_unchecked(w, h, mag, FieldKind::Magnitude),
        ScalarField::from_parts_unchecked(w, h, angle, FieldKind::Angle),
    )
}
