//! Forward and backward kernels for the network's building blocks.
//!
//! Convolutions go through im2col + GEMM. Every kernel is written for a single
//! sample; batches are handled by the trainer accumulating gradients.

use crate::grid::{reflect_index, Features};
use crate::scalar::{lit, Scalar};

pub(crate) const NORM_EPS: f64 = 1e-5;

/// Reflect-padded 3x3 patches, laid out `(in_ch * 9) x (h * w)`.
pub(crate) fn im2col3x3<T: Scalar>(x: &Features<T>) -> Vec<T> {
    let (ch, h, w) = x.shape();
    let hw = h * w;
    let mut col = vec![T::zero(); ch * 9 * hw];
    for ci in 0..ch {
        let plane = x.plane(ci);
        for ky in 0..3 {
            for kx in 0..3 {
                let dst = &mut col[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for r in 0..h {
                    let rr = reflect_index(r as isize + ky as isize - 1, h as isize);
                    let src = &plane[rr * w..(rr + 1) * w];
                    let row = &mut dst[r * w..(r + 1) * w];
                    match kx {
                        1 => row.copy_from_slice(src),
                        0 => {
                            row[0] = src[reflect_index(-1, w as isize)];
                            row[1..].copy_from_slice(&src[..w - 1]);
                        }
                        _ => {
                            row[..w - 1].copy_from_slice(&src[1..]);
                            row[w - 1] = src[reflect_index(w as isize, w as isize)];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col3x3`]: scatter-adds patch gradients back onto the image.
pub(crate) fn col2im3x3<T: Scalar>(dcol: &[T], ch: usize, h: usize, w: usize) -> Features<T> {
    let hw = h * w;
    let mut dx = Features::zeros(ch, h, w);
    for ci in 0..ch {
        let plane = dx.plane_mut(ci);
        for ky in 0..3 {
            for kx in 0..3 {
                let src = &dcol[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for r in 0..h {
                    let rr = reflect_index(r as isize + ky as isize - 1, h as isize);
                    let row = &src[r * w..(r + 1) * w];
                    let dst = &mut plane[rr * w..(rr + 1) * w];
                    match kx {
                        1 => {
                            for (d, &s) in dst.iter_mut().zip(row) {
                                *d += s;
                            }
                        }
                        0 => {
                            dst[reflect_index(-1, w as isize)] += row[0];
                            for (d, &s) in dst[..w - 1].iter_mut().zip(&row[1..]) {
                                *d += s;
                            }
                        }
                        _ => {
                            for (d, &s) in dst[1..].iter_mut().zip(&row[..w - 1]) {
                                *d += s;
                            }
                            dst[reflect_index(w as isize, w as isize)] += row[w - 1];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// 3x3 convolution of precomputed patches: `weight` is `out_ch x (in_ch * 9)`.
pub(crate) fn conv3x3_from_col<T: Scalar>(
    col: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    out_ch: usize,
    h: usize,
    w: usize,
) -> Features<T> {
    let hw = h * w;
    let k = weight.len() / out_ch;
    let mut y = Features::zeros(out_ch, h, w);
    if let Some(b) = bias {
        for (co, &bv) in b.iter().enumerate() {
            y.plane_mut(co).fill(bv);
        }
    }
    let beta = if bias.is_some() { T::one() } else { T::zero() };
    T::gemm(out_ch, k, hw, T::one(), weight, false, col, false, beta, &mut y.data);
    y
}

/// Accumulates weight/bias gradients and optionally returns the patch gradient.
pub(crate) fn conv_backward<T: Scalar>(
    dy: &Features<T>,
    col: &[T],
    weight: &[T],
    dweight: &mut [T],
    dbias: Option<&mut [T]>,
    need_dcol: bool,
) -> Option<Vec<T>> {
    let out_ch = dy.channels;
    let hw = dy.plane_len();
    let k = weight.len() / out_ch;
    // dW += dY * col^T
    T::gemm(out_ch, hw, k, T::one(), &dy.data, false, col, true, T::one(), dweight);
    if let Some(db) = dbias {
        for (co, d) in db.iter_mut().enumerate() {
            *d += dy.plane(co).iter().copied().sum::<T>();
        }
    }
    if !need_dcol {
        return None;
    }
    // dcol = W^T * dY
    let mut dcol = vec![T::zero(); k * hw];
    T::gemm(k, out_ch, hw, T::one(), weight, true, &dy.data, false, T::zero(), &mut dcol);
    Some(dcol)
}

/// Per-channel standardization without affine parameters.
///
/// Returns the normalized maps and `1 / sqrt(var + eps)` per channel.
pub(crate) fn instance_norm<T: Scalar>(x: &Features<T>) -> (Features<T>, Vec<T>) {
    let n = lit::<T>(x.plane_len() as f64);
    let eps = lit::<T>(NORM_EPS);
    let mut y = x.clone();
    let mut inv_std = Vec::with_capacity(x.channels);
    for c in 0..x.channels {
        let p = y.plane_mut(c);
        let mean = p.iter().copied().sum::<T>() / n;
        let var = p.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let is = T::one() / (var + eps).sqrt();
        for v in p.iter_mut() {
            *v = (*v - mean) * is;
        }
        inv_std.push(is);
    }
    (y, inv_std)
}

/// Backward of [`instance_norm`] given its output `xhat`.
pub(crate) fn instance_norm_backward<T: Scalar>(
    dxhat: &Features<T>,
    xhat: &Features<T>,
    inv_std: &[T],
) -> Features<T> {
    let n = lit::<T>(xhat.plane_len() as f64);
    let mut dx = dxhat.clone();
    for c in 0..xhat.channels {
        let g = dxhat.plane(c);
        let xh = xhat.plane(c);
        let mean_g = g.iter().copied().sum::<T>() / n;
        let mean_gx = g.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() / n;
        let is = inv_std[c];
        for ((d, &gv), &xv) in dx.plane_mut(c).iter_mut().zip(g).zip(xh) {
            *d = is * (gv - mean_g - xv * mean_gx);
        }
    }
    dx
}

#[inline]
pub(crate) fn leaky<T: Scalar>(v: T, slope: T) -> T {
    if v > T::zero() {
        v
    } else {
        v * slope
    }
}

pub(crate) fn leaky_features<T: Scalar>(x: &Features<T>, slope: T) -> Features<T> {
    let mut y = x.clone();
    for v in y.data.iter_mut() {
        *v = leaky(*v, slope);
    }
    y
}

/// In-place backward of a leaky rectifier whose pre-activation is `pre`.
pub(crate) fn leaky_backward_inplace<T: Scalar>(grad: &mut Features<T>, pre: &Features<T>, slope: T) {
    for (g, &p) in grad.data.iter_mut().zip(&pre.data) {
        if p <= T::zero() {
            *g *= slope;
        }
    }
}

/// Non-overlapping `k x k` max pooling; returns the winning flat index per output.
pub(crate) fn max_pool<T: Scalar>(x: &Features<T>, k: usize) -> (Features<T>, Vec<u32>) {
    let (ch, h, w) = x.shape();
    let (oh, ow) = (h / k, w / k);
    let mut y = Features::zeros(ch, oh, ow);
    let mut arg = vec![0u32; ch * oh * ow];
    for c in 0..ch {
        let p = x.plane(c);
        for r in 0..oh {
            for col in 0..ow {
                let mut best_i = r * k * w + col * k;
                let mut best = p[best_i];
                for dr in 0..k {
                    let base = (r * k + dr) * w + col * k;
                    for dc in 0..k {
                        let v = p[base + dc];
                        // strict comparison keeps the first maximum on ties
                        if v > best {
                            best = v;
                            best_i = base + dc;
                        }
                    }
                }
                let o = c * oh * ow + r * ow + col;
                y.data[o] = best;
                arg[o] = best_i as u32;
            }
        }
    }
    (y, arg)
}

pub(crate) fn max_pool_backward<T: Scalar>(
    dy: &Features<T>,
    arg: &[u32],
    in_h: usize,
    in_w: usize,
) -> Features<T> {
    let mut dx = Features::zeros(dy.channels, in_h, in_w);
    let n = dy.plane_len();
    for c in 0..dy.channels {
        let src = dy.plane(c);
        let idx = &arg[c * n..(c + 1) * n];
        let dst = dx.plane_mut(c);
        for (&g, &i) in src.iter().zip(idx) {
            dst[i as usize] += g;
        }
    }
    dx
}

/// 2x2 stride-2 transposed convolution.
///
/// `weight` is stored `(out_ch * 4) x in_ch`, row `co * 4 + dy * 2 + dx`.
pub(crate) fn upconv2x2<T: Scalar>(x: &Features<T>, weight: &[T], bias: &[T], out_ch: usize) -> Features<T> {
    let (ci, h, w) = x.shape();
    let hw = h * w;
    let mut taps = vec![T::zero(); out_ch * 4 * hw];
    T::gemm(out_ch * 4, ci, hw, T::one(), weight, false, &x.data, false, T::zero(), &mut taps);
    let (oh, ow) = (2 * h, 2 * w);
    let mut y = Features::zeros(out_ch, oh, ow);
    for co in 0..out_ch {
        let b = bias[co];
        let plane = y.plane_mut(co);
        for t in 0..4 {
            let (dy, dx) = (t / 2, t % 2);
            let src = &taps[(co * 4 + t) * hw..][..hw];
            for r in 0..h {
                let out_row = &mut plane[(2 * r + dy) * ow..][..ow];
                for c in 0..w {
                    out_row[2 * c + dx] = src[r * w + c] + b;
                }
            }
        }
    }
    y
}

pub(crate) fn upconv2x2_backward<T: Scalar>(
    dy: &Features<T>,
    x: &Features<T>,
    weight: &[T],
    dweight: &mut [T],
    dbias: &mut [T],
) -> Features<T> {
    let (ci, h, w) = x.shape();
    let out_ch = dy.channels;
    let hw = h * w;
    let ow = dy.width;
    let mut dtaps = vec![T::zero(); out_ch * 4 * hw];
    for co in 0..out_ch {
        let plane = dy.plane(co);
        dbias[co] += plane.iter().copied().sum::<T>();
        for t in 0..4 {
            let (ty, tx) = (t / 2, t % 2);
            let dst = &mut dtaps[(co * 4 + t) * hw..][..hw];
            for r in 0..h {
                let in_row = &plane[(2 * r + ty) * ow..][..ow];
                for c in 0..w {
                    dst[r * w + c] = in_row[2 * c + tx];
                }
            }
        }
    }
    T::gemm(out_ch * 4, hw, ci, T::one(), &dtaps, false, &x.data, true, T::one(), dweight);
    let mut dx = Features::zeros(ci, h, w);
    T::gemm(ci, out_ch * 4, hw, T::one(), weight, true, &dtaps, false, T::zero(), &mut dx.data);
    dx
}

/// 1x1 convolution; `weight` is `out_ch x in_ch`.
pub(crate) fn conv1x1<T: Scalar>(x: &Features<T>, weight: &[T], bias: &[T], out_ch: usize) -> Features<T> {
    let (ci, h, w) = x.shape();
    let mut y = Features::zeros(out_ch, h, w);
    for (co, &b) in bias.iter().enumerate() {
        y.plane_mut(co).fill(b);
    }
    T::gemm(out_ch, ci, h * w, T::one(), weight, false, &x.data, false, T::one(), &mut y.data);
    y
}

pub(crate) fn conv1x1_backward<T: Scalar>(
    dy: &Features<T>,
    x: &Features<T>,
    weight: &[T],
    dweight: &mut [T],
    dbias: &mut [T],
) -> Features<T> {
    let (ci, h, w) = x.shape();
    let out_ch = dy.channels;
    let hw = h * w;
    for (co, d) in dbias.iter_mut().enumerate() {
        *d += dy.plane(co).iter().copied().sum::<T>();
    }
    T::gemm(out_ch, hw, ci, T::one(), &dy.data, false, &x.data, true, T::one(), dweight);
    let mut dx = Features::zeros(ci, h, w);
    T::gemm(ci, out_ch, hw, T::one(), weight, true, &dy.data, false, T::zero(), &mut dx.data);
    dx
}

pub(crate) fn concat<T: Scalar>(a: &Features<T>, b: &Features<T>) -> Features<T> {
    debug_assert_eq!((a.height, a.width), (b.height, b.width));
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Features {
        channels: a.channels + b.channels,
        height: a.height,
        width: a.width,
        data,
    }
}

pub(crate) fn split<T: Scalar>(x: &Features<T>, first: usize) -> (Features<T>, Features<T>) {
    let n = first * x.plane_len();
    (
        Features {
            channels: first,
            height: x.height,
            width: x.width,
            data: x.data[..n].to_vec(),
        },
        Features {
            channels: x.channels - first,
            height: x.height,
            width: x.width,
            data: x.data[n..].to_vec(),
        },
    )
}
