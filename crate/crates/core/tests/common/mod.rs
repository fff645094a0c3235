//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use spine_enhance::{Grid, ImageGrid};

/// Gaussian elimination with partial pivoting on a dense row-major system.
pub fn dense_solve(mut a: Vec<f64>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i * n + k].abs().total_cmp(&a[j * n + k].abs())).unwrap();
        if p != k {
            for j in 0..n {
                a.swap(k * n + j, p * n + j);
            }
            b.swap(k, p);
        }
        let pivot = a[k * n + k];
        for i in k + 1..n {
            let f = a[i * n + k] / pivot;
            if f == 0.0 {
                continue;
            }
            for j in k..n {
                a[i * n + j] -= f * a[k * n + j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k * n + j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k * n + k];
    }
    x
}

/// `I + lambda * A` assembled entry by entry from the smoothness weights
/// `1 / (|d log(v + eps)|^alpha + eps)` between 4-neighbours.
pub fn wls_matrix(img: &ImageGrid, lambda: f64, alpha: f64, eps: f64) -> Vec<f64> {
    let (h, w) = img.shape();
    let n = h * w;
    let l = |r: usize, c: usize| (img.get(r, c) + eps).ln();
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    let mut link = |i: usize, j: usize, d: f64| {
        let wt = lambda / (d.abs().powf(alpha) + eps);
        m[i * n + i] += wt;
        m[j * n + j] += wt;
        m[i * n + j] -= wt;
        m[j * n + i] -= wt;
    };
    for r in 0..h {
        for c in 0..w {
            if c + 1 < w {
                link(r * w + c, r * w + c + 1, l(r, c + 1) - l(r, c));
            }
            if r + 1 < h {
                link(r * w + c, (r + 1) * w + c, l(r + 1, c) - l(r, c));
            }
        }
    }
    m
}

pub fn dense_wls(img: &ImageGrid, lambda: f64, alpha: f64, eps: f64) -> ImageGrid {
    let s = dense_solve(wls_matrix(img, lambda, alpha, eps), img.as_slice().to_vec());
    Grid::from_vec(img.height(), img.width(), s).unwrap()
}

pub fn two_region_step(n: usize) -> ImageGrid {
    Grid::from_fn(n, n, |r, c| if c + r / 4 < n / 2 { 0.25 } else { 0.8 })
}

/// Bright vertical band with soft edges, periodic disc gaps and a gentle
/// background gradient.
pub fn ridge_image(n: usize) -> ImageGrid {
    let mid = (n as f64 - 1.0) / 2.0;
    Grid::from_fn(n, n, |r, c| {
        let d = (c as f64 - mid) / (n as f64 / 8.0);
        let band = (-d * d).exp();
        let disc = if r % 5 == 0 { 0.6 } else { 1.0 };
        0.1 + 0.02 * r as f64 / n as f64 + 0.7 * band * disc
    })
}

/// Sum of absolute horizontal and vertical neighbour differences.
pub fn total_variation(img: &ImageGrid) -> f64 {
    let (h, w) = img.shape();
    let mut tv = 0.0;
    for r in 0..h {
        for c in 0..w {
            if c + 1 < w {
                tv += (img.get(r, c + 1) - img.get(r, c)).abs();
            }
            if r + 1 < h {
                tv += (img.get(r + 1, c) - img.get(r, c)).abs();
            }
        }
    }
    tv
}

/// Shannon entropy in bits over 256 equal-width bins of `[0, 1]`.
pub fn entropy_bits(img: &ImageGrid) -> f64 {
    let mut hist = [0usize; 256];
    for &v in img.as_slice() {
        hist[(v.clamp(0.0, 1.0) * 255.0).round() as usize] += 1;
    }
    let n = img.len() as f64;
    hist.iter().filter(|&&k| k > 0).map(|&k| {
        let p = k as f64 / n;
        -p * p.log2()
    }).sum()
}

/// Two-sided signed-rank p-value by enumerating all 2^n sign patterns of
/// the (average-tied) ranks of the nonzero differences.
pub fn brute_force_signed_rank_p(x: &[f64], y: &[f64]) -> f64 {
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|v| *v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return 1.0;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].abs().total_cmp(&d[j].abs()));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && d[order[j + 1]].abs() == d[order[i]].abs() {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    let observed: f64 = (0..n).filter(|&k| d[k] > 0.0).map(|k| ranks[k]).sum();
    let (mut le, mut ge) = (0u64, 0u64);
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|&k| mask >> k & 1 == 1).map(|k| ranks[k]).sum();
        if w <= observed + 1e-9 {
            le += 1;
        }
        if w >= observed - 1e-9 {
            ge += 1;
        }
    }
    let total = (1u64 << n) as f64;
    (2.0 * le.min(ge) as f64 / total).min(1.0)
}
