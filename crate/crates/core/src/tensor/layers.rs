//! Per-layer kernels over a batch. Activations are `[N, ...]` row-major.
//! Convolutions are 3×3 with padding 1 and lower to GEMM via im2col.

use super::{matmul, Real};

pub(crate) const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;
pub(crate) const LN_EPS: f64 = 1e-5;

/// Spatial size of a padded 3×3 convolution output.
pub(crate) fn conv_out(size: usize, stride: usize) -> usize {
    (size - 1) / stride + 1
}

/// Unfold `x` (`c×h×w`) into `cols` (`c·9 × oh·ow`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, stride: usize, oh: usize, ow: usize, cols: &mut [T]) {
    let p = oh * ow;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut cols[(ci * TAPS + ky * KERNEL + kx) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - 1;
                    let out = &mut row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        out.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in out.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - 1;
                        *v = if ix < 0 || ix >= w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add `cols` back into `x` (`c×h×w`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, stride: usize, oh: usize, ow: usize, x: &mut [T]) {
    let p = oh * ow;
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &cols[(ci * TAPS + ky * KERNEL + kx) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in row[oy * ow..(oy + 1) * ow].iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) struct ConvDims {
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub oh: usize,
    pub ow: usize,
    pub stride: usize,
}

/// Returns output and the unfolded input (cached for backward).
pub(crate) fn conv_forward<T: Real>(x: &[T], n: usize, d: &ConvDims, weight: &[T], bias: &[T]) -> (Vec<T>, Vec<T>) {
    let k = d.cin * TAPS;
    let p = d.oh * d.ow;
    let mut cols = vec![T::zero(); n * k * p];
    let mut y = vec![T::zero(); n * d.cout * p];
    for s in 0..n {
        let xs = &x[s * d.cin * d.h * d.w..(s + 1) * d.cin * d.h * d.w];
        let cs = &mut cols[s * k * p..(s + 1) * k * p];
        im2col(xs, d.cin, d.h, d.w, d.stride, d.oh, d.ow, cs);
        let ys = &mut y[s * d.cout * p..(s + 1) * d.cout * p];
        for (co, row) in ys.chunks_mut(p).enumerate() {
            row.iter_mut().for_each(|v| *v = bias[co]);
        }
        matmul(false, false, d.cout, p, k, weight, cs, T::one(), ys);
    }
    (y, cols)
}

/// Accumulates weight/bias gradients; returns the input gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Real>(
    dy: &[T],
    cols: &[T],
    n: usize,
    d: &ConvDims,
    weight: &[T],
    dweight: &mut [T],
    dbias: &mut [T],
) -> Vec<T> {
    let k = d.cin * TAPS;
    let p = d.oh * d.ow;
    let mut dx = vec![T::zero(); n * d.cin * d.h * d.w];
    let mut dcols = vec![T::zero(); k * p];
    for s in 0..n {
        let dys = &dy[s * d.cout * p..(s + 1) * d.cout * p];
        let cs = &cols[s * k * p..(s + 1) * k * p];
        matmul(false, true, d.cout, k, p, dys, cs, T::one(), dweight);
        for (co, row) in dys.chunks(p).enumerate() {
            dbias[co] += row.iter().copied().sum();
        }
        matmul(true, false, k, p, d.cout, weight, dys, T::zero(), &mut dcols);
        let dxs = &mut dx[s * d.cin * d.h * d.w..(s + 1) * d.cin * d.h * d.w];
        col2im(&dcols, d.cin, d.h, d.w, d.stride, d.oh, d.ow, dxs);
    }
    dx
}

/// Transposed convolution. `d.h, d.w` is the (small) input grid and
/// `d.oh, d.ow` the (large) output grid; weight is `cin × cout·9`.
pub(crate) fn tconv_forward<T: Real>(x: &[T], n: usize, d: &ConvDims, weight: &[T], bias: &[T]) -> Vec<T> {
    let q = d.h * d.w;
    let big = d.oh * d.ow;
    let k = d.cout * TAPS;
    let mut cols = vec![T::zero(); k * q];
    let mut y = vec![T::zero(); n * d.cout * big];
    for s in 0..n {
        let xs = &x[s * d.cin * q..(s + 1) * d.cin * q];
        matmul(true, false, k, q, d.cin, weight, xs, T::zero(), &mut cols);
        let ys = &mut y[s * d.cout * big..(s + 1) * d.cout * big];
        for (co, row) in ys.chunks_mut(big).enumerate() {
            row.iter_mut().for_each(|v| *v = bias[co]);
        }
        col2im(&cols, d.cout, d.oh, d.ow, d.stride, d.h, d.w, ys);
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn tconv_backward<T: Real>(
    dy: &[T],
    x: &[T],
    n: usize,
    d: &ConvDims,
    weight: &[T],
    dweight: &mut [T],
    dbias: &mut [T],
) -> Vec<T> {
    let q = d.h * d.w;
    let big = d.oh * d.ow;
    let k = d.cout * TAPS;
    let mut dcols = vec![T::zero(); k * q];
    let mut dx = vec![T::zero(); n * d.cin * q];
    for s in 0..n {
        let dys = &dy[s * d.cout * big..(s + 1) * d.cout * big];
        for (co, row) in dys.chunks(big).enumerate() {
            dbias[co] += row.iter().copied().sum();
        }
        im2col(dys, d.cout, d.oh, d.ow, d.stride, d.h, d.w, &mut dcols);
        let xs = &x[s * d.cin * q..(s + 1) * d.cin * q];
        matmul(false, true, d.cin, k, q, xs, &dcols, T::one(), dweight);
        let dxs = &mut dx[s * d.cin * q..(s + 1) * d.cin * q];
        matmul(false, false, d.cin, q, k, weight, &dcols, T::zero(), dxs);
    }
    dx
}

/// `y = x Wᵀ + b` with `x: [n, fin]`, `W: [fout, fin]`.
pub(crate) fn affine_forward<T: Real>(x: &[T], n: usize, fin: usize, fout: usize, weight: &[T], bias: &[T]) -> Vec<T> {
    let mut y = Vec::with_capacity(n * fout);
    for _ in 0..n {
        y.extend_from_slice(bias);
    }
    matmul(false, true, n, fout, fin, x, weight, T::one(), &mut y);
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn affine_backward<T: Real>(
    dy: &[T],
    x: &[T],
    n: usize,
    fin: usize,
    fout: usize,
    weight: &[T],
    dweight: &mut [T],
    dbias: &mut [T],
) -> Vec<T> {
    matmul(true, false, fout, fin, n, dy, x, T::one(), dweight);
    for row in dy.chunks(fout) {
        for (db, &g) in dbias.iter_mut().zip(row) {
            *db += g;
        }
    }
    let mut dx = vec![T::zero(); n * fin];
    matmul(false, false, n, fin, fout, dy, weight, T::zero(), &mut dx);
    dx
}

/// Normalizes each sample over all of its elements, then applies a
/// per-channel gain and shift (channel = leading per-sample axis).
/// Returns `(y, xhat, inv_std)`.
pub(crate) fn layer_norm_forward<T: Real>(
    x: &[T],
    n: usize,
    channels: usize,
    gain: &[T],
    shift: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let d = x.len() / n;
    let inner = d / channels;
    let dn = T::of(d as f64);
    let eps = T::of(LN_EPS);
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv = Vec::with_capacity(n);
    for s in 0..n {
        let xs = &x[s * d..(s + 1) * d];
        let mean = xs.iter().copied().sum::<T>() / dn;
        let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
        let is = T::one() / (var + eps).sqrt();
        inv.push(is);
        for c in 0..channels {
            for i in c * inner..(c + 1) * inner {
                let h = (xs[i] - mean) * is;
                xhat[s * d + i] = h;
                y[s * d + i] = gain[c] * h + shift[c];
            }
        }
    }
    (y, xhat, inv)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn layer_norm_backward<T: Real>(
    dy: &[T],
    xhat: &[T],
    inv: &[T],
    n: usize,
    channels: usize,
    gain: &[T],
    dgain: &mut [T],
    dshift: &mut [T],
) -> Vec<T> {
    let d = dy.len() / n;
    let inner = d / channels;
    let dn = T::of(d as f64);
    let mut dx = vec![T::zero(); dy.len()];
    let mut dxhat = vec![T::zero(); d];
    for s in 0..n {
        let dys = &dy[s * d..(s + 1) * d];
        let hs = &xhat[s * d..(s + 1) * d];
        for c in 0..channels {
            for i in c * inner..(c + 1) * inner {
                dgain[c] += dys[i] * hs[i];
                dshift[c] += dys[i];
                dxhat[i] = dys[i] * gain[c];
            }
        }
        let sum_d = dxhat.iter().copied().sum::<T>();
        let sum_dh = dxhat.iter().zip(hs).map(|(&a, &b)| a * b).sum::<T>();
        let scale = inv[s] / dn;
        for i in 0..d {
            dx[s * d + i] = scale * (dn * dxhat[i] - sum_d - hs[i] * sum_dh);
        }
    }
    dx
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
