//! Per-sample tensor kernels: convolution via im2col + gemm, group
//! normalization and ReLU, each with its backward pass.
//!
//! Feature maps are `[channels][height][width]`, row-major, one sample at a time.

use super::scalar::{gemm, MatRef, Scalar};

/// Geometry of a square-kernel 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    pub fn patch_len(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Patch-column budget per strip, in elements (about 512 KiB of f32).
const STRIP_ELEMS: usize = 1 << 17;

/// Output rows `[r0, r1)` processed together so the patch columns stay in cache.
fn strips(g: &ConvGeom, oh: usize, ow: usize) -> impl Iterator<Item = (usize, usize)> {
    let rows = (STRIP_ELEMS / (g.patch_len() * ow).max(1)).clamp(1, oh.max(1));
    (0..oh).step_by(rows).map(move |r0| (r0, (r0 + rows).min(oh)))
}

/// Unfold output rows `[r0, r1)` of `x` into `[cin·k·k][(r1 - r0)·ow]` patch columns.
fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], h: usize, w: usize, (r0, r1): (usize, usize), col: &mut Vec<T>) {
    let (_, ow) = g.out_size(h, w);
    let n = (r1 - r0) * ow;
    let k = g.kernel;
    col.clear();
    col.resize(g.patch_len() * n, T::zero());
    for ci in 0..g.cin {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * n..(row + 1) * n];
                for oy in r0..r1 {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let out_row = &mut dst[(oy - r0) * ow..(oy - r0 + 1) * ow];
                    if g.stride == 1 {
                        // valid ox satisfy 0 <= ox + kx - pad < w
                        let lo = g.pad.saturating_sub(kx);
                        let hi = (w + g.pad - kx).min(ow);
                        if lo < hi {
                            let s0 = lo + kx - g.pad;
                            out_row[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                        }
                    } else {
                        for (ox, o) in out_row.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && (ix as usize) < w {
                                *o = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Fold patch-column gradients of output rows `[r0, r1)` back onto the input
/// grid, accumulating.
fn col2im<T: Scalar>(g: &ConvGeom, col: &[T], h: usize, w: usize, (r0, r1): (usize, usize), dx: &mut [T]) {
    let (_, ow) = g.out_size(h, w);
    let n = (r1 - r0) * ow;
    let k = g.kernel;
    for ci in 0..g.cin {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * n..(row + 1) * n];
                for oy in r0..r1 {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let in_row = &src[(oy - r0) * ow..(oy - r0 + 1) * ow];
                    if g.stride == 1 {
                        let lo = g.pad.saturating_sub(kx);
                        let hi = (w + g.pad - kx).min(ow);
                        if lo < hi {
                            let s0 = lo + kx - g.pad;
                            for (d, &v) in dst[s0..s0 + (hi - lo)].iter_mut().zip(&in_row[lo..hi]) {
                                *d = *d + v;
                            }
                        }
                    } else {
                        for (ox, &v) in in_row.iter().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && (ix as usize) < w {
                                dst[ix as usize] = dst[ix as usize] + v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Reusable patch-column buffers.
#[derive(Default)]
pub struct Workspace<T> {
    col: Vec<T>,
    dcol: Vec<T>,
}

impl<T: Scalar> Workspace<T> {
    pub fn new() -> Self {
        Self { col: Vec::new(), dcol: Vec::new() }
    }
}

/// Convolution without bias. `weight` is `[cout][cin][k][k]`.
pub fn conv2d<T: Scalar>(g: &ConvGeom, weight: &[T], x: &[T], h: usize, w: usize, ws: &mut Workspace<T>) -> Vec<T> {
    debug_assert_eq!(x.len(), g.cin * h * w);
    debug_assert_eq!(weight.len(), g.cout * g.patch_len());
    let (oh, ow) = g.out_size(h, w);
    let mut out = vec![T::zero(); g.cout * oh * ow];
    let wmat = MatRef::new(weight, g.cout, g.patch_len());
    if g.is_pointwise() {
        gemm(wmat, MatRef::new(x, g.cin, h * w), T::zero(), &mut out);
        return out;
    }
    for strip in strips(g, oh, ow) {
        im2col(g, x, h, w, strip, &mut ws.col);
        let n = (strip.1 - strip.0) * ow;
        gemm_into_cols(wmat, MatRef::new(&ws.col, g.patch_len(), n), &mut out, oh * ow, strip.0 * ow);
    }
    out
}

/// `out[:, c0..c0+n] = a·b` where `out` has `ld` columns.
fn gemm_into_cols<T: Scalar>(a: MatRef<'_, T>, b: MatRef<'_, T>, out: &mut [T], ld: usize, c0: usize) {
    super::scalar::gemm_strided(a, b, T::zero(), &mut out[c0..], ld);
}

/// Backward of [`conv2d`]: accumulates the weight gradient into `dweight` and
/// returns the input gradient when `want_dx`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    weight: &[T],
    x: &[T],
    h: usize,
    w: usize,
    dout: &[T],
    dweight: &mut [T],
    want_dx: bool,
    ws: &mut Workspace<T>,
) -> Option<Vec<T>> {
    let (oh, ow) = g.out_size(h, w);
    let plane = oh * ow;
    let k = g.patch_len();
    let wmat = MatRef::new(weight, g.cout, k);
    if g.is_pointwise() {
        let dmat = MatRef::new(dout, g.cout, plane);
        gemm(dmat, MatRef::new(x, k, plane).t(), T::one(), dweight);
        if !want_dx {
            return None;
        }
        let mut dx = vec![T::zero(); g.cin * h * w];
        gemm(wmat.t(), dmat, T::zero(), &mut dx);
        return Some(dx);
    }
    let mut dx = want_dx.then(|| vec![T::zero(); g.cin * h * w]);
    for strip in strips(g, oh, ow) {
        let n = (strip.1 - strip.0) * ow;
        let dstrip = MatRef::strided(&dout[strip.0 * ow..], g.cout, n, plane);
        im2col(g, x, h, w, strip, &mut ws.col);
        gemm(dstrip, MatRef::new(&ws.col, k, n).t(), T::one(), dweight);
        if let Some(dx) = dx.as_mut() {
            ws.dcol.clear();
            ws.dcol.resize(k * n, T::zero());
            gemm(wmat.t(), dstrip, T::zero(), &mut ws.dcol);
            col2im(g, &ws.dcol, h, w, strip, dx);
        }
    }
    dx
}

/// Group normalization statistics kept for the backward pass.
pub struct NormCache<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

pub const NORM_EPSILON: f64 = 1e-5;

/// Group normalization with per-channel affine `scale`/`offset`.
pub fn group_norm<T: Scalar>(
    x: &[T],
    channels: usize,
    groups: usize,
    scale: &[T],
    offset: &[T],
    keep: bool,
) -> (Vec<T>, Option<NormCache<T>>) {
    let plane = x.len() / channels;
    let per_group = channels / groups;
    let m = (per_group * plane) as f64;
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = if keep { vec![T::zero(); x.len()] } else { Vec::new() };
    let mut rstds = Vec::with_capacity(groups);
    for gi in 0..groups {
        let span = gi * per_group * plane..(gi + 1) * per_group * plane;
        let xs = &x[span.clone()];
        let mean = xs.iter().map(|v| v.as_f64()).sum::<f64>() / m;
        let var = xs.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / m;
        let rstd = 1.0 / (var + NORM_EPSILON).sqrt();
        let (mean_t, rstd_t) = (T::of_f64(mean), T::of_f64(rstd));
        rstds.push(rstd_t);
        for c in 0..per_group {
            let ch = gi * per_group + c;
            let (s, o) = (scale[ch], offset[ch]);
            let r = ch * plane..(ch + 1) * plane;
            for (i, (yv, &xv)) in y[r.clone()].iter_mut().zip(&x[r.clone()]).enumerate() {
                let xh = (xv - mean_t) * rstd_t;
                *yv = s * xh + o;
                if keep {
                    xhat[r.start + i] = xh;
                }
            }
        }
    }
    let cache = keep.then_some(NormCache { xhat, rstd: rstds });
    (y, cache)
}

/// Backward of [`group_norm`]; accumulates affine gradients.
pub fn group_norm_backward<T: Scalar>(
    dy: &[T],
    cache: &NormCache<T>,
    channels: usize,
    groups: usize,
    scale: &[T],
    dscale: &mut [T],
    doffset: &mut [T],
) -> Vec<T> {
    let plane = dy.len() / channels;
    let per_group = channels / groups;
    let m = (per_group * plane) as f64;
    let mut dx = vec![T::zero(); dy.len()];
    for gi in 0..groups {
        let mut sum_dxh = 0.0f64;
        let mut sum_dxh_xh = 0.0f64;
        for c in 0..per_group {
            let ch = gi * per_group + c;
            let r = ch * plane..(ch + 1) * plane;
            let mut ds = 0.0f64;
            let mut db = 0.0f64;
            for (&g, &xh) in dy[r.clone()].iter().zip(&cache.xhat[r.clone()]) {
                let (g, xh) = (g.as_f64(), xh.as_f64());
                ds += g * xh;
                db += g;
            }
            dscale[ch] = dscale[ch] + T::of_f64(ds);
            doffset[ch] = doffset[ch] + T::of_f64(db);
            let s = scale[ch].as_f64();
            sum_dxh += db * s;
            sum_dxh_xh += ds * s;
        }
        let mean_dxh = T::of_f64(sum_dxh / m);
        let mean_dxh_xh = T::of_f64(sum_dxh_xh / m);
        let rstd = cache.rstd[gi];
        for c in 0..per_group {
            let ch = gi * per_group + c;
            let s = scale[ch];
            let r = ch * plane..(ch + 1) * plane;
            for ((d, &g), &xh) in dx[r.clone()].iter_mut().zip(&dy[r.clone()]).zip(&cache.xhat[r.clone()]) {
                *d = rstd * (g * s - mean_dxh - xh * mean_dxh_xh);
            }
        }
    }
    dx
}

pub fn relu_inplace<T: Scalar>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zero the gradient wherever the ReLU output was not positive.
pub fn relu_backward_inplace<T: Scalar>(dy: &mut [T], y: &[T]) {
    for (d, &v) in dy.iter_mut().zip(y) {
        if v <= T::zero() {
            *d = T::zero();
        }
    }
}

pub fn add_inplace<T: Scalar>(acc: &mut [T], other: &[T]) {
    for (a, &b) in acc.iter_mut().zip(other) {
        *a = *a + b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // direct nested-loop convolution
    fn naive_conv(g: &ConvGeom, wt: &[f64], x: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (oh, ow) = g.out_size(h, w);
        let mut out = vec![0.0; g.cout * oh * ow];
        for co in 0..g.cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..g.cin {
                        for ky in 0..g.kernel {
                            for kx in 0..g.kernel {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += wt[((co * g.cin + ci) * g.kernel + ky) * g.kernel + kx]
                                    * x[(ci * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    out[(co * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    const GEOMS: [ConvGeom; 4] = [
        ConvGeom { cin: 3, cout: 4, kernel: 3, stride: 1, pad: 1 },
        ConvGeom { cin: 2, cout: 5, kernel: 3, stride: 2, pad: 1 },
        ConvGeom { cin: 4, cout: 3, kernel: 1, stride: 2, pad: 0 },
        ConvGeom { cin: 4, cout: 2, kernel: 1, stride: 1, pad: 0 },
    ];

    #[test]
    fn conv_matches_naive() {
        for (i, g) in GEOMS.iter().enumerate() {
            for (h, w) in [(6, 6), (7, 5)] {
                let wt = pseudo(g.cout * g.patch_len(), i as u64);
                let x = pseudo(g.cin * h * w, 100 + i as u64);
                let got = conv2d(g, &wt, &x, h, w, &mut Workspace::new());
                let want = naive_conv(g, &wt, &x, h, w);
                for (a, b) in got.iter().zip(&want) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x), d> must equal <x, dx> and <w, dw> for a linear map
        for (i, g) in GEOMS.iter().enumerate() {
            let (h, w) = (7, 6);
            let wt = pseudo(g.cout * g.patch_len(), i as u64);
            let x = pseudo(g.cin * h * w, 7 + i as u64);
            let y = conv2d(g, &wt, &x, h, w, &mut Workspace::new());
            let d = pseudo(y.len(), 50 + i as u64);
            let mut dw = vec![0.0; wt.len()];
            let dx = conv2d_backward(g, &wt, &x, h, w, &d, &mut dw, true, &mut Workspace::new()).unwrap();
            let lhs: f64 = y.iter().zip(&d).map(|(a, b)| a * b).sum();
            let via_x: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
            let via_w: f64 = wt.iter().zip(&dw).map(|(a, b)| a * b).sum();
            assert!((lhs - via_x).abs() < 1e-10, "{lhs} vs {via_x}");
            assert!((lhs - via_w).abs() < 1e-10, "{lhs} vs {via_w}");
        }
    }

    #[test]
    fn strips_cover_large_maps() {
        // big enough that the output is split into several row strips
        for g in [
            ConvGeom { cin: 16, cout: 3, kernel: 3, stride: 1, pad: 1 },
            ConvGeom { cin: 16, cout: 3, kernel: 3, stride: 2, pad: 1 },
        ] {
            let (h, w) = (61, 67);
            let (oh, ow) = g.out_size(h, w);
            assert!(strips(&g, oh, ow).count() > 1);
            let wt = pseudo(g.cout * g.patch_len(), 3);
            let x = pseudo(g.cin * h * w, 4);
            let y = conv2d(&g, &wt, &x, h, w, &mut Workspace::new());
            for (a, b) in y.iter().zip(&naive_conv(&g, &wt, &x, h, w)) {
                assert!((a - b).abs() < 1e-12);
            }
            let d = pseudo(y.len(), 5);
            let mut dw = vec![0.0; wt.len()];
            let dx = conv2d_backward(&g, &wt, &x, h, w, &d, &mut dw, true, &mut Workspace::new()).unwrap();
            let lhs: f64 = y.iter().zip(&d).map(|(a, b)| a * b).sum();
            let via_x: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
            let via_w: f64 = wt.iter().zip(&dw).map(|(a, b)| a * b).sum();
            assert!((lhs - via_x).abs() < 1e-8 * lhs.abs().max(1.0));
            assert!((lhs - via_w).abs() < 1e-8 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn group_norm_zero_input_gives_offset() {
        let x = vec![0.0f64; 4 * 9];
        let (y, _) = group_norm(&x, 4, 2, &[1.0; 4], &[0.5, 0.5, -1.0, 2.0], false);
        for (c, want) in [0.5, 0.5, -1.0, 2.0].iter().enumerate() {
            assert!(y[c * 9..(c + 1) * 9].iter().all(|v| v == want));
        }
    }

    #[test]
    fn group_norm_backward_matches_differences() {
        let (c, g, plane) = (4, 2, 5);
        let x = pseudo(c * plane, 3);
        let scale = pseudo(c, 4);
        let offset = pseudo(c, 5);
        let d = pseudo(c * plane, 6);
        let f = |x: &[f64]| -> f64 {
            let (y, _) = group_norm(x, c, g, &scale, &offset, false);
            y.iter().zip(&d).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = group_norm(&x, c, g, &scale, &offset, true);
        let mut ds = vec![0.0; c];
        let mut db = vec![0.0; c];
        let dx = group_norm_backward(&d, &cache.unwrap(), c, g, &scale, &mut ds, &mut db);
        let eps = 1e-6;
        for i in 0..x.len() {
            let mut p = x.clone();
            p[i] += eps;
            let mut q = x.clone();
            q[i] -= eps;
            let num = (f(&p) - f(&q)) / (2.0 * eps);
            assert!((num - dx[i]).abs() < 1e-7, "{i}: {num} vs {}", dx[i]);
        }
    }
}
