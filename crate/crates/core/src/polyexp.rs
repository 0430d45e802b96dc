//! Per-pixel quadratic polynomial expansion.
//!
//! Around every pixel the signal is approximated as
//! `f(p + (u, v)) ~ [u v] A [u v]^T + b^T [u v]^T + c` by a weighted least
//! squares fit over a `(2r + 1)^2` window with a Gaussian applicability.
//! The fit is evaluated separably: the right-hand side of the 6x6 normal
//! equations is built from nine 1-D correlations, and the normal matrix only
//! depends on how far a pixel is from the image edges, so there are at most
//! `(2r + 1)^2` distinct matrices to factor.

use nalgebra::{Matrix6, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{gaussian_half, moment_cols, moment_rows, Border};
use crate::imgproc::ScalarField;

/// Monomial exponents `(px, py)` of the basis `{1, x, y, x^2, y^2, xy}`.
const BASIS: [(usize, usize); 6] = [(0, 0), (1, 0), (0, 1), (2, 0), (0, 2), (1, 1)];

/// How samples outside the image enter the local fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertaintyMode {
    /// Edge samples are replicated outward with full certainty.
    Uniform,
    /// Samples outside the image have zero certainty and drop out of the fit.
    ZeroOutsideBorder,
}

impl std::str::FromStr for CertaintyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "zero-outside-border" => Ok(Self::ZeroOutsideBorder),
            other => Err(Error::InvalidParams(format!("unknown certainty mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionParams {
    /// Half-width of the square fitting window; the side is `2r + 1`.
    pub window_radius: usize,
    /// Standard deviation of the Gaussian applicability, in pixels.
    pub applicability_sigma: f64,
    pub certainty_mode: CertaintyMode,
}

impl Default for ExpansionParams {
    fn default() -> Self {
        Self {
            window_radius: 5,
            applicability_sigma: 1.5,
            certainty_mode: CertaintyMode::ZeroOutsideBorder,
        }
    }
}

impl ExpansionParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_radius < 1 {
            return Err(Error::InvalidParams("window_radius must be >= 1".into()));
        }
        if !(self.applicability_sigma.is_finite() && self.applicability_sigma > 0.0) {
            return Err(Error::InvalidParams("applicability_sigma must be positive".into()));
        }
        Ok(())
    }

    pub fn window_side(&self) -> usize {
        2 * self.window_radius + 1
    }

    /// Applicability weights `g(|u|)` for `u in 0..=r`.
    fn applicability(&self) -> Vec<f64> {
        gaussian_half(self.applicability_sigma, self.window_radius)
    }

    fn border(&self) -> Border {
        match self.certainty_mode {
            CertaintyMode::Uniform => Border::Clamp,
            CertaintyMode::ZeroOutsideBorder => Border::Zero,
        }
    }
}

/// Quadratic model coefficients at one pixel, in coordinates centered on it.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PolyCoeffs {
    pub a11: f64,
    /// Off-diagonal of the symmetric matrix `A`, stored once.
    pub a12: f64,
    pub a22: f64,
    pub b: [f64; 2],
    pub c: f64,
}

impl PolyCoeffs {
    pub fn a(&self) -> [[f64; 2]; 2] {
        [[self.a11, self.a12], [self.a12, self.a22]]
    }

    /// Evaluates the model at local offset `(u, v)`.
    pub fn eval(&self, u: f64, v: f64) -> f64 {
        self.a11 * u * u + 2.0 * self.a12 * u * v + self.a22 * v * v + self.b[0] * u + self.b[1] * v + self.c
    }

    /// Maps the solution of the normal equations in basis order to coefficients.
    fn from_basis(theta: &[f64; 6]) -> Self {
        Self {
            c: theta[0],
            b: [theta[1], theta[2]],
            a11: theta[3],
            a22: theta[4],
            a12: 0.5 * theta[5],
        }
    }
}

/// Per-pixel quadratic coefficients of a whole image.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyCoeffField {
    width: usize,
    height: usize,
    pub(crate) a11: Vec<f64>,
    pub(crate) a12: Vec<f64>,
    pub(crate) a22: Vec<f64>,
    pub(crate) bx: Vec<f64>,
    pub(crate) by: Vec<f64>,
    pub(crate) c: Vec<f64>,
    pub(crate) certain: Vec<bool>,
}

impl PolyCoeffField {
    /// Builds a field from an analytic description; every pixel is certain.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> PolyCoeffs) -> Self {
        let mut out = Self::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                out.set(x, y, f(x, y));
            }
        }
        out.certain.iter_mut().for_each(|c| *c = true);
        out
    }

    fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            a11: vec![0.0; n],
            a12: vec![0.0; n],
            a22: vec![0.0; n],
            bx: vec![0.0; n],
            by: vec![0.0; n],
            c: vec![0.0; n],
            certain: vec![false; n],
        }
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

    pub fn get(&self, x: usize, y: usize) -> PolyCoeffs {
        let i = y * self.width + x;
        PolyCoeffs {
            a11: self.a11[i],
            a12: self.a12[i],
            a22: self.a22[i],
            b: [self.bx[i], self.by[i]],
            c: self.c[i],
        }
    }

    fn set(&mut self, x: usize, y: usize, k: PolyCoeffs) {
        let i = y * self.width + x;
        self.a11[i] = k.a11;
        self.a12[i] = k.a12;
        self.a22[i] = k.a22;
        self.bx[i] = k.b[0];
        self.by[i] = k.b[1];
        self.c[i] = k.c;
    }

    /// False for pixels within half a window of the edge and for pixels
    /// whose normal equations were singular.
    pub fn is_certain(&self, x: usize, y: usize) -> bool {
        self.certain[y * self.width + x]
    }

    pub fn certainty(&self) -> &[bool] {
        &self.certain
    }

    pub fn set_certain(&mut self, x: usize, y: usize, certain: bool) {
        self.certain[y * self.width + x] = certain;
    }
}

/// Fits the local quadratic model at every pixel.
///
/// Pixels whose normal equations are numerically singular do not abort the
/// expansion; they are flagged uncertain with coefficients `(0, 0, mean)`.
pub fn polynomial_expansion(field: &ScalarField, params: &ExpansionParams) -> Result<PolyCoeffField> {
    params.validate()?;
    let (w, h) = field.dims();
    let r = params.window_radius;
    if w <= 2 * r || h <= 2 * r {
        return Err(Error::FrameTooSmall {
            width: w,
            height: h,
            reason: format!(
                "expansion window of radius {r} needs more than {} pixels per side",
                2 * r
            ),
        });
    }

    let g = params.applicability();
    let border = params.border();
    let rows = moment_rows::<3>(field.data(), w, h, &g, border);
    let c0 = moment_cols::<3>(&rows, 0, &g, border);
    let c1 = moment_cols::<2>(&rows, 1, &g, border);
    let c2 = moment_cols::<1>(&rows, 2, &g, border);

    let inverses = NormalInverses::new(w, h, &g, params.certainty_mode);

    let mut out = PolyCoeffField::zeros(w, h);
    let rows = out
        .a11
        .par_chunks_mut(w)
        .zip(out.a12.par_chunks_mut(w))
        .zip(out.a22.par_chunks_mut(w))
        .zip(out.bx.par_chunks_mut(w))
        .zip(out.by.par_chunks_mut(w))
        .zip(out.c.par_chunks_mut(w))
        .zip(out.certain.par_chunks_mut(w))
        .enumerate();
    rows.for_each(|(y, ((((((a11, a12), a22), bx), by), c), certain))| {
        let cy = class_of(y, h, r);
        let edge_y = y < r || y + r >= h;
        // Right-hand side in basis order {1, x, y, x^2, y^2, xy}.
        let rhs = [
            c0.row(y, 0),
            c1.row(y, 0),
            c0.row(y, 1),
            c2.row(y, 0),
            c0.row(y, 2),
            c1.row(y, 1),
        ];
        for x in 0..w {
            let hv = [rhs[0][x], rhs[1][x], rhs[2][x], rhs[3][x], rhs[4][x], rhs[5][x]];
            let cx = class_of(x, w, r);
            match inverses.get(cx, cy) {
                Some(inv) => {
                    let t = |row: usize| -> f64 {
                        let m = &inv[row * 6..row * 6 + 6];
                        m[0] * hv[0] + m[1] * hv[1] + m[2] * hv[2] + m[3] * hv[3] + m[4] * hv[4] + m[5] * hv[5]
                    };
                    c[x] = t(0);
                    bx[x] = t(1);
                    by[x] = t(2);
                    a11[x] = t(3);
                    a22[x] = t(4);
                    a12[x] = 0.5 * t(5);
                    certain[x] = !(edge_y || x < r || x + r >= w);
                }
                None => {
                    let mass = inverses.mass(cx, cy);
                    c[x] = if mass > 0.0 { hv[0] / mass } else { 0.0 };
                    certain[x] = false;
                }
            }
        }
    });
    Ok(out)
}

/// Edge-distance class of a coordinate: `0..r` near the low edge, `r` for
/// the interior and `r+1..=2r` near the high edge.
fn class_of(x: usize, len: usize, r: usize) -> usize {
    if x < r {
        x
    } else if x + r >= len {
        2 * r - (len - 1 - x)
    } else {
        r
    }
}

/// Inverted normal matrices for every pair of edge-distance classes.
struct NormalInverses {
    classes: usize,
    inv: Vec<Option<[f64; 36]>>,
    mass: Vec<f64>,
}

impl NormalInverses {
    fn new(w: usize, h: usize, g: &[f64], mode: CertaintyMode) -> Self {
        let r = g.len() - 1;
        let classes = 2 * r + 1;
        // Representative coordinate for each class.
        let rep = |cls: usize, len: usize| -> usize {
            if cls <= r {
                if cls < r {
                    cls
                } else {
                    len / 2
                }
            } else {
                len - 1 - (2 * r - cls)
            }
        };
        // 1-D applicability moments sum_u g(u) u^p over in-image offsets.
        let moments = |pos: usize, len: usize| -> [f64; 5] {
            let mut m = [0.0; 5];
            for u in -(r as isize)..=r as isize {
                let gv = g[u.unsigned_abs()];
                let inside = (0..len as isize).contains(&(pos as isize + u));
                if inside || mode == CertaintyMode::Uniform {
                    for (p, mp) in m.iter_mut().enumerate() {
                        *mp += gv * (u as f64).powi(p as i32);
                    }
                }
            }
            m
        };
        let mx: Vec<[f64; 5]> = (0..classes).map(|c| moments(rep(c, w), w)).collect();
        let my: Vec<[f64; 5]> = (0..classes).map(|c| moments(rep(c, h), h)).collect();

        let mut inv = Vec::with_capacity(classes * classes);
        let mut mass = Vec::with_capacity(classes * classes);
        for sy in &my {
            for sx in &mx {
                let mut gm = [0.0; 36];
                for (i, (pi, qi)) in BASIS.iter().enumerate() {
                    for (j, (pj, qj)) in BASIS.iter().enumerate() {
                        gm[i * 6 + j] = sx[pi + pj] * sy[qi + qj];
                    }
                }
                mass.push(gm[0]);
                inv.push(spd_inverse(&gm));
            }
        }
        Self { classes, inv, mass }
    }

    fn get(&self, cx: usize, cy: usize) -> Option<&[f64; 36]> {
        self.inv[cy * self.classes + cx].as_ref()
    }

    fn mass(&self, cx: usize, cy: usize) -> f64 {
        self.mass[cy * self.classes + cx]
    }
}

/// Inverse of a symmetric positive definite 6x6 matrix via Cholesky.
/// Returns `None` when a pivot collapses relative to the diagonal scale.
fn spd_inverse(m: &[f64; 36]) -> Option<[f64; 36]> {
    const N: usize = 6;
    let scale = (0..N).map(|i| m[i * N + i]).fold(0.0, f64::max);
    if !(scale > 0.0) {
        return None;
    }
    let mut l = [0.0; 36];
    for i in 0..N {
        for j in 0..=i {
            let s: f64 = m[i * N + j] - (0..j).map(|k| l[i * N + k] * l[j * N + k]).sum::<f64>();
            if i == j {
                if s <= 1e-12 * scale {
                    return None;
                }
                l[i * N + i] = s.sqrt();
            } else {
                l[i * N + j] = s / l[j * N + j];
            }
        }
    }
    let mut inv = [0.0; 36];
    for col in 0..N {
        // Solve L y = e_col, then L^T x = y.
        let mut y = [0.0; N];
        for i in 0..N {
            let e = if i == col { 1.0 } else { 0.0 };
            y[i] = (e - (0..i).map(|k| l[i * N + k] * y[k]).sum::<f64>()) / l[i * N + i];
        }
        let mut x = [0.0; N];
        for i in (0..N).rev() {
            x[i] = (y[i] - (i + 1..N).map(|k| l[k * N + i] * x[k]).sum::<f64>()) / l[i * N + i];
        }
        for i in 0..N {
            inv[i * N + col] = x[i];
        }
    }
    Some(inv)
}

/// Reference fit at a single pixel: assembles and solves the weighted 6x6
/// normal equations directly over the window.
pub fn dense_lsq_oracle(field: &ScalarField, params: &ExpansionParams, pixel: (usize, usize)) -> Result<PolyCoeffs> {
    params.validate()?;
    let (w, h) = field.dims();
    let (x0, y0) = pixel;
    if x0 >= w || y0 >= h {
        return Err(Error::InvalidParams(format!("pixel ({x0}, {y0}) outside {w}x{h}")));
    }
    let r = params.window_radius as isize;
    let g = params.applicability();
    let mut normal = Matrix6::<f64>::zeros();
    let mut rhs = Vector6::<f64>::zeros();
    for v in -r..=r {
        for u in -r..=r {
            let (sx, sy) = (x0 as isize + u, y0 as isize + v);
            let inside = sx >= 0 && sy >= 0 && sx < w as isize && sy < h as isize;
            let sample = match (inside, params.certainty_mode) {
                (true, _) => field.get(sx as usize, sy as usize),
                (false, CertaintyMode::ZeroOutsideBorder) => continue,
                (false, CertaintyMode::Uniform) => field.get(
                    sx.clamp(0, w as isize - 1) as usize,
                    sy.clamp(0, h as isize - 1) as usize,
                ),
            };
            let weight = g[u.unsigned_abs()] * g[v.unsigned_abs()];
            let (uf, vf) = (u as f64, v as f64);
            let phi = Vector6::new(1.0, uf, vf, uf * uf, vf * vf, uf * vf);
            normal += weight * phi * phi.transpose();
            rhs += weight * sample * phi;
        }
    }
    let theta = normal
        .lu()
        .solve(&rhs)
        .filter(|t| t.iter().all(|v| v.is_finite()))
        .ok_or(Error::DegenerateWindow { x: x0, y: y0 })?;
    let t: [f64; 6] = theta.into();
    Ok(PolyCoeffs::from_basis(&t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgproc::FieldKind;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field(w: usize, h: usize, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        ScalarField::from_fn(w, h, FieldKind::Luma, |x, y| f(x as f64, y as f64)).unwrap()
    }

    fn random_field(w: usize, h: usize, seed: u64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h).map(|_| rng.random_range(-50.0..50.0)).collect();
        ScalarField::new(w, h, data, FieldKind::Luma).unwrap()
    }

    fn assert_close(a: PolyCoeffs, b: PolyCoeffs, tol: f64) {
        let pa = [a.a11, a.a12, a.a22, a.b[0], a.b[1], a.c];
        let pb = [b.a11, b.a12, b.a22, b.b[0], b.b[1], b.c];
        for (x, y) in pa.iter().zip(&pb) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    fn interior(p: &ExpansionParams, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
        let r = p.window_radius;
        (r..h - r).flat_map(move |y| (r..w - r).map(move |x| (x, y)))
    }

    #[test]
    fn constant_field() {
        let p = ExpansionParams::default();
        let e = polynomial_expansion(&field(24, 20, |_, _| 7.0), &p).unwrap();
        for (x, y) in interior(&p, 24, 20) {
            let k = e.get(x, y);
            assert_close(
                k,
                PolyCoeffs {
                    c: 7.0,
                    ..Default::default()
                },
                1e-10,
            );
        }
    }

    #[test]
    fn ramp_field() {
        let p = ExpansionParams::default();
        let e = polynomial_expansion(&field(24, 20, |x, _| x), &p).unwrap();
        for (x, y) in interior(&p, 24, 20) {
            let want = PolyCoeffs {
                b: [1.0, 0.0],
                c: x as f64,
                ..Default::default()
            };
            assert_close(e.get(x, y), want, 1e-9);
        }
    }

    #[test]
    fn parabola_matches_oracle_and_closed_form() {
        let p = ExpansionParams::default();
        let f = field(24, 20, |x, _| x * x);
        let e = polynomial_expansion(&f, &p).unwrap();
        for (x, y) in interior(&p, 24, 20) {
            let x0 = x as f64;
            let want = PolyCoeffs {
                a11: 1.0,
                b: [2.0 * x0, 0.0],
                c: x0 * x0,
                ..Default::default()
            };
            let oracle = dense_lsq_oracle(&f, &p, (x, y)).unwrap();
            assert_close(oracle, want, 1e-8);
            assert_close(e.get(x, y), want, 1e-8);
        }
    }

    #[test]
    fn mixed_quadratic_local_expansion() {
        // f = 2x^2 + 3xy - y + 5 expanded about (x0, y0):
        // a11 = 2, a12 = 1.5, a22 = 0, b = (4x0 + 3y0, 3x0 - 1), c = f(x0, y0).
        let f = |x: f64, y: f64| 2.0 * x * x + 3.0 * x * y - y + 5.0;
        let img = field(20, 18, f);
        for p in [
            ExpansionParams::default(),
            ExpansionParams {
                window_radius: 2,
                applicability_sigma: 0.7,
                ..Default::default()
            },
            ExpansionParams {
                window_radius: 4,
                applicability_sigma: 3.0,
                ..Default::default()
            },
        ] {
            let e = polynomial_expansion(&img, &p).unwrap();
            for y in 0..18 {
                for x in 0..20 {
                    let (x0, y0) = (x as f64, y as f64);
                    let want = PolyCoeffs {
                        a11: 2.0,
                        a12: 1.5,
                        a22: 0.0,
                        b: [4.0 * x0 + 3.0 * y0, 3.0 * x0 - 1.0],
                        c: f(x0, y0),
                    };
                    // Zero certainty outside keeps exact quadratics exact at the border too.
                    assert_close(e.get(x, y), want, 1e-6);
                }
            }
        }
    }

    #[test]
    fn separable_agrees_with_dense_oracle_on_random_fields() {
        for mode in [CertaintyMode::ZeroOutsideBorder, CertaintyMode::Uniform] {
            let p = ExpansionParams {
                certainty_mode: mode,
                ..Default::default()
            };
            for seed in 0..5 {
                let f = random_field(16, 16, seed);
                let e = polynomial_expansion(&f, &p).unwrap();
                for y in 0..16 {
                    for x in 0..16 {
                        let o = dense_lsq_oracle(&f, &p, (x, y)).unwrap();
                        assert_close(e.get(x, y), o, 1e-8);
                    }
                }
            }
        }
    }

    #[test]
    fn border_pixels_are_flagged() {
        let p = ExpansionParams::default();
        let e = polynomial_expansion(&random_field(16, 13, 3), &p).unwrap();
        for y in 0..13 {
            for x in 0..16 {
                let inner = (5..11).contains(&x) && (5..8).contains(&y);
                assert_eq!(e.is_certain(x, y), inner, "({x}, {y})");
            }
        }
    }

    #[test]
    fn too_small_is_rejected() {
        let p = ExpansionParams::default();
        let err = polynomial_expansion(&random_field(10, 30, 0), &p).unwrap_err();
        assert!(matches!(err, Error::FrameTooSmall { .. }));
        assert!(polynomial_expansion(&random_field(11, 11, 0), &p).is_ok());
    }

    #[test]
    fn singular_inverse_is_detected() {
        let mut m = [0.0; 36];
        for i in 0..5 {
            m[i * 6 + i] = 1.0;
        }
        assert!(spd_inverse(&m).is_none());
        m[35] = 2.0;
        let inv = spd_inverse(&m).unwrap();
        assert!((inv[35] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn horizontal_mirror() {
        let p = ExpansionParams::default();
        let f = random_field(17, 15, 9);
        let mirrored = ScalarField::from_fn(17, 15, FieldKind::Luma, |x, y| f.get(16 - x, y)).unwrap();
        let a = polynomial_expansion(&f, &p).unwrap();
        let b = polynomial_expansion(&mirrored, &p).unwrap();
        for y in 0..15 {
            for x in 0..17 {
                let (ka, kb) = (a.get(x, y), b.get(16 - x, y));
                assert!((ka.b[0] + kb.b[0]).abs() < 1e-9);
                assert!((ka.a11 - kb.a11).abs() < 1e-9);
                assert!((ka.a22 - kb.a22).abs() < 1e-9);
                assert!((ka.a12 + kb.a12).abs() < 1e-9);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn expansion_is_linear(seed_f in 0u64..1000, seed_g in 0u64..1000, alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
            let p = ExpansionParams { window_radius: 3, applicability_sigma: 1.2, ..Default::default() };
            let (f, g) = (random_field(12, 11, seed_f), random_field(12, 11, seed_g));
            let combo = ScalarField::from_fn(12, 11, FieldKind::Luma, |x, y| alpha * f.get(x, y) + beta * g.get(x, y)).unwrap();
            let (ef, eg, ec) = (
                polynomial_expansion(&f, &p).unwrap(),
                polynomial_expansion(&g, &p).unwrap(),
                polynomial_expansion(&combo, &p).unwrap(),
            );
            for y in 0..11 {
                for x in 0..12 {
                    let (kf, kg, kc) = (ef.get(x, y), eg.get(x, y), ec.get(x, y));
                    let lin = |a: f64, b: f64| alpha * a + beta * b;
                    prop_assert!((kc.a11 - lin(kf.a11, kg.a11)).abs() < 1e-9);
                    prop_assert!((kc.a12 - lin(kf.a12, kg.a12)).abs() < 1e-9);
                    prop_assert!((kc.b[0] - lin(kf.b[0], kg.b[0])).abs() < 1e-9);
                    prop_assert!((kc.b[1] - lin(kf.b[1], kg.b[1])).abs() < 1e-9);
                    prop_assert!((kc.c - lin(kf.c, kg.c)).abs() < 1e-8);
                }
            }
        }
    }
}
