//! Separable correlation with symmetric window functions over row-major
//! `f64` planes.
//!
//! A window is given by its non-negative half `g[0..=r]` (`g[u] = g(-u)`).
//! The moment-`p` correlation of a plane `f` along an axis is
//! `sum_{u=-r..=r} g(|u|) u^p f(x + u)`; pairing `+u` with `-u` halves the
//! multiplies, and moments that read the same input are produced in one pass.

use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Border {
    /// Samples outside the plane are zero.
    Zero,
    /// Samples outside the plane repeat the nearest edge sample.
    Clamp,
}

/// Half window of `exp(-u^2 / 2 sigma^2)` for `u in 0..=radius`.
pub(crate) fn gaussian_half(sigma: f64, radius: usize) -> Vec<f64> {
    (0..=radius)
        .map(|u| (-((u * u) as f64) / (2.0 * sigma * sigma)).exp())
        .collect()
}

/// Half window with a unit center tap, truncated at `ceil(3 sigma)`.
/// A non-positive sigma yields the identity window.
pub(crate) fn gaussian_weights(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    gaussian_half(sigma, (3.0 * sigma).ceil() as usize)
}

/// Half window normalized so the full window sums to one.
pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let mut k = gaussian_weights(sigma);
    let total = k[0] + 2.0 * k[1..].iter().sum::<f64>();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// `m` planes of `w x h` stored row-interleaved: row `y` of plane `k`
/// starts at `(y * m + k) * w`.
#[derive(Debug, Clone, Default)]
pub(crate) struct Planes {
    pub w: usize,
    pub h: usize,
    pub m: usize,
    pub data: Vec<f64>,
}

impl Planes {
    #[inline]
    pub fn row(&self, y: usize, k: usize) -> &[f64] {
        let o = (y * self.m + k) * self.w;
        &self.data[o..o + self.w]
    }

    /// Copies plane `k` out into a contiguous buffer.
    #[cfg(test)]
    pub fn plane(&self, k: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.w * self.h);
        for y in 0..self.h {
            out.extend_from_slice(self.row(y, k));
        }
        out
    }
}

#[inline(always)]
fn accumulate<const M: usize>(outs: &mut [&mut [f64]; M], a: &[f64], b: &[f64], g: f64, u: f64) {
    let (gu, guu) = (g * u, g * u * u);
    let n = a.len();
    let (a, b) = (&a[..n], &b[..n]);
    match outs.as_mut_slice() {
        [o0] => {
            let o0 = &mut o0[..n];
            for x in 0..n {
                o0[x] += g * (a[x] + b[x]);
            }
        }
        [o0, o1] => {
            let (o0, o1) = (&mut o0[..n], &mut o1[..n]);
            for x in 0..n {
                o0[x] += g * (a[x] + b[x]);
                o1[x] += gu * (a[x] - b[x]);
            }
        }
        [o0, o1, o2] => {
            let (o0, o1, o2) = (&mut o0[..n], &mut o1[..n], &mut o2[..n]);
            for x in 0..n {
                let s = a[x] + b[x];
                o0[x] += g * s;
                o1[x] += gu * (a[x] - b[x]);
                o2[x] += guu * s;
            }
        }
        _ => unreachable!("moment count is 1, 2 or 3"),
    }
}

/// Moments `0..M` along rows of a single plane. `M` is 1, 2 or 3.
pub(crate) fn moment_rows<const M: usize>(src: &[f64], w: usize, h: usize, half: &[f64], border: Border) -> Planes {
    let mut data = Vec::new();
    moment_rows_into::<M>(src, w, h, half, border, &mut data);
    Planes { w, h, m: M, data }
}

/// [`moment_rows`] into a reusable buffer, resized to `M * w * h`.
pub(crate) fn moment_rows_into<const M: usize>(
    src: &[f64],
    w: usize,
    h: usize,
    half: &[f64],
    border: Border,
    dst: &mut Vec<f64>,
) {
    debug_assert!((1..=3).contains(&M));
    debug_assert_eq!(src.len(), w * h);
    let r = half.len() - 1;
    dst.resize(M * w * h, 0.0);
    dst.par_chunks_mut(M * w).zip(src.par_chunks(w)).for_each_init(
        || vec![0.0; w + 2 * r],
        |pad, (dst, row)| {
            pad[r..r + w].copy_from_slice(row);
            let (lo, hi) = match border {
                Border::Zero => (0.0, 0.0),
                Border::Clamp => (row[0], row[w - 1]),
            };
            pad[..r].iter_mut().for_each(|v| *v = lo);
            pad[r + w..].iter_mut().for_each(|v| *v = hi);

            let mut parts = dst.chunks_exact_mut(w);
            let mut outs: [&mut [f64]; M] = std::array::from_fn(|_| parts.next().unwrap());
            for (o, s) in outs[0].iter_mut().zip(&pad[r..r + w]) {
                *o = half[0] * s;
            }
            for o in outs.iter_mut().skip(1) {
                o.iter_mut().for_each(|v| *v = 0.0);
            }
            for (u, &g) in half.iter().enumerate().skip(1) {
                let a = &pad[r + u..r + u + w];
                let b = &pad[r - u..r - u + w];
                accumulate::<M>(&mut outs, a, b, g, u as f64);
            }
        },
    );
}

/// Moments `0..M` along columns of plane `k` of `src`.
pub(crate) fn moment_cols<const M: usize>(src: &Planes, k: usize, half: &[f64], border: Border) -> Planes {
    debug_assert!((1..=3).contains(&M));
    let (w, h) = (src.w, src.h);
    let mut data = vec![0.0; M * w * h];
    data.par_chunks_mut(M * w).enumerate().for_each(|(y, dst)| {
        let mut parts = dst.chunks_exact_mut(w);
        let mut outs: [&mut [f64]; M] = std::array::from_fn(|_| parts.next().unwrap());
        column_moments::<M>(src, k, y, half, border, &mut outs);
    });
    Planes { w, h, m: M, data }
}

#[inline(always)]
fn column_moments<const M: usize>(
    src: &Planes,
    k: usize,
    y: usize,
    half: &[f64],
    border: Border,
    outs: &mut [&mut [f64]; M],
) {
    let h = src.h as isize;
    let fetch = |y: isize| -> Option<&[f64]> {
        if (0..h).contains(&y) {
            Some(src.row(y as usize, k))
        } else {
            match border {
                Border::Zero => None,
                Border::Clamp => Some(src.row(y.clamp(0, h - 1) as usize, k)),
            }
        }
    };
    for (o, s) in outs[0].iter_mut().zip(src.row(y, k)) {
        *o = half[0] * s;
    }
    for o in outs.iter_mut().skip(1) {
        o.iter_mut().for_each(|v| *v = 0.0);
    }
    let yi = y as isize;
    for (v, &g) in half.iter().enumerate().skip(1) {
        let v = v as isize;
        match (fetch(yi + v), fetch(yi - v)) {
            (Some(a), Some(b)) => accumulate::<M>(outs, a, b, g, v as f64),
            // One side is outside a zero border: pair the other with zeros.
            (Some(a), None) => accumulate_one::<M>(outs, a, g, v as f64),
            (None, Some(b)) => accumulate_one::<M>(outs, b, g, -(v as f64)),
            (None, None) => break,
        }
    }
}

#[inline(always)]
fn accumulate_one<const M: usize>(outs: &mut [&mut [f64]; M], a: &[f64], g: f64, u: f64) {
    let coef = [g, g * u, g * u * u];
    for (o, c) in outs.iter_mut().zip(coef) {
        for (o, s) in o.iter_mut().zip(a) {
            *o += c * s;
        }
    }
}

/// Separable 2-D correlation with the same symmetric window along both axes.
pub(crate) fn blur(src: &[f64], w: usize, h: usize, half: &[f64], border: Border) -> Vec<f64> {
    if half.len() == 1 {
        let k = half[0] * half[0];
        return src.iter().map(|v| v * k).collect();
    }
    let rows = moment_rows::<1>(src, w, h, half, border);
    moment_cols::<1>(&rows, 0, half, border).data
}

/// Blurs a single plane in place, using `tmp` as scratch.
pub(crate) fn blur_in_place(plane: &mut [f64], w: usize, h: usize, half: &[f64], border: Border, tmp: &mut Planes) {
    if half.len() == 1 {
        let k = half[0] * half[0];
        plane.iter_mut().for_each(|v| *v *= k);
        return;
    }
    moment_rows_into::<1>(plane, w, h, half, border, &mut tmp.data);
    (tmp.w, tmp.h, tmp.m) = (w, h, 1);
    let tmp = &*tmp;
    plane.par_chunks_mut(w).enumerate().for_each(|(y, out)| {
        column_moments::<1>(tmp, 0, y, half, border, &mut [out]);
    });
}
