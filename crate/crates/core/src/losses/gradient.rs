//! 3x3 Sobel derivatives in valid mode (output shrinks by 2 in each axis)
//! and their adjoints.

use crate::grid::Grid;
use crate::scalar::Scalar;

const SMOOTH: [f64; 3] = [1.0, 2.0, 1.0];
const DIFF: [f64; 3] = [-1.0, 0.0, 1.0];

fn correlate<T: Scalar>(img: &Grid<T>, kernel: impl Fn(usize, usize) -> f64) -> Grid<T> {
    let (h, w) = img.shape();
    let k: Vec<T> = (0..9).map(|i| T::from_f64_lossy(kernel(i / 3, i % 3))).collect();
    Grid::from_fn(h - 2, w - 2, |r, c| {
        let mut s = T::zero();
        for dr in 0..3 {
            for dc in 0..3 {
                s += k[dr * 3 + dc] * img.get(r + dr, c + dc);
            }
        }
        s
    })
}

fn correlate_adjoint<T: Scalar>(g: &Grid<T>, kernel: impl Fn(usize, usize) -> f64) -> Grid<T> {
    let (h, w) = (g.height() + 2, g.width() + 2);
    let k: Vec<T> = (0..9).map(|i| T::from_f64_lossy(kernel(i / 3, i % 3))).collect();
    let mut out = Grid::zeros(h, w);
    let dst = out.as_mut_slice();
    for r in 0..g.height() {
        for c in 0..g.width() {
            let v = g.get(r, c);
            for dr in 0..3 {
                for dc in 0..3 {
                    dst[(r + dr) * w + c + dc] += k[dr * 3 + dc] * v;
                }
            }
        }
    }
    out
}

/// Horizontal derivative (increasing column).
pub fn sobel_x<T: Scalar>(img: &Grid<T>) -> Grid<T> {
    correlate(img, |r, c| SMOOTH[r] * DIFF[c])
}

/// Vertical derivative (increasing row).
pub fn sobel_y<T: Scalar>(img: &Grid<T>) -> Grid<T> {
    correlate(img, |r, c| DIFF[r] * SMOOTH[c])
}

pub fn sobel_x_adjoint<T: Scalar>(g: &Grid<T>) -> Grid<T> {
    correlate_adjoint(g, |r, c| SMOOTH[r] * DIFF[c])
}

pub fn sobel_y_adjoint<T: Scalar>(g: &Grid<T>) -> Grid<T> {
    correlate_adjoint(g, |r, c| DIFF[r] * SMOOTH[c])
}
