//! Training objectives: detail-enhancement loss against a selected feature
//! map, gradient-correlation loss against the details layer, and their
//! weighted sum. Each loss has an analytic gradient with respect to the
//! network output.

mod gradient;

use serde::{Deserialize, Serialize};

pub use gradient::{sobel_x, sobel_y, sobel_x_adjoint, sobel_y_adjoint};

use crate::error::{Error, Result};
use crate::grid::{Features, Grid};
use crate::metrics::entropy;
use crate::preprocess::normalize_minmax;
use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Weight of the detail-enhancement term.
    pub lambda1: f64,
    /// Weight of the gradient-correlation term.
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.001,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::field(name, "must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

/// Correlation value plus whether the denominator vanished.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ncc<T> {
    pub value: T,
    pub degenerate: bool,
}

/// Components of the weighted objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue<T> {
    pub total: T,
    pub l1: T,
    pub l2: T,
}

/// The min-max normalized channel with the highest 256-bin entropy.
/// Ties go to the lowest channel index.
pub fn select_max_entropy_feature<T: Scalar>(features: &Features<T>) -> Result<Grid<T>> {
    if features.channels == 0 {
        return Err(Error::Contract("feature stack is empty".into()));
    }
    let mut best: Option<(f64, Grid<T>)> = None;
    for c in 0..features.channels {
        let map = normalize_minmax(&features.channel(c));
        let h = entropy(&map);
        if best.as_ref().map_or(true, |(b, _)| h > *b) {
            best = Some((h, map));
        }
    }
    Ok(best.expect("nonempty").1)
}

/// Mean squared difference.
pub fn mse<T: Scalar>(x: &Grid<T>, y: &Grid<T>) -> Result<T> {
    x.check_same_shape(y)?;
    let n = lit::<T>(x.len() as f64);
    Ok(x.as_slice().iter().zip(y.as_slice()).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>() / n)
}

pub fn mse_grad<T: Scalar>(x: &Grid<T>, y: &Grid<T>) -> Result<Grid<T>> {
    let scale = lit::<T>(2.0 / x.len() as f64);
    x.zip_map(y, |a, b| scale * (a - b))
}

pub fn detail_enhancement_loss<T: Scalar>(x_t: &Grid<T>, target: &Grid<T>) -> Result<T> {
    mse(x_t, target)
}

struct Moments<T> {
    a: Vec<T>,
    b: Vec<T>,
    sab: T,
    saa: T,
    sbb: T,
}

/// Deviations from the mean, accumulated about the first sample so that
/// constant input gives exact zeros.
fn centered<T: Scalar>(x: &[T]) -> Vec<T> {
    let Some(&pivot) = x.first() else {
        return Vec::new();
    };
    let shift = x.iter().map(|&v| v - pivot).sum::<T>() / lit::<T>(x.len() as f64);
    x.iter().map(|&v| (v - pivot) - shift).collect()
}

fn moments<T: Scalar>(x: &[T], y: &[T]) -> Moments<T> {
    let a = centered(x);
    let b = centered(y);
    let dot = |p: &[T], q: &[T]| p.iter().zip(q).map(|(&u, &v)| u * v).sum::<T>();
    Moments {
        sab: dot(&a, &b),
        saa: dot(&a, &a),
        sbb: dot(&b, &b),
        a,
        b,
    }
}

fn ncc_slices<T: Scalar>(x: &[T], y: &[T]) -> Ncc<T> {
    let m = moments(x, y);
    let denom = m.saa.sqrt() * m.sbb.sqrt();
    if denom.is_nan() {
        return Ncc {
            value: denom,
            degenerate: false,
        };
    }
    if !(denom > T::zero()) {
        return Ncc {
            value: T::zero(),
            degenerate: true,
        };
    }
    Ncc {
        value: (m.sab / denom).max(-T::one()).min(T::one()),
        degenerate: false,
    }
}

/// d ncc(x, y) / dx. Zero where the correlation is degenerate.
fn ncc_grad_slices<T: Scalar>(x: &[T], y: &[T]) -> (Ncc<T>, Vec<T>) {
    let m = moments(x, y);
    let denom = m.saa.sqrt() * m.sbb.sqrt();
    if denom.is_nan() {
        let nan = Ncc {
            value: denom,
            degenerate: false,
        };
        return (nan, vec![denom; x.len()]);
    }
    if !(denom > T::zero()) {
        let zero = Ncc {
            value: T::zero(),
            degenerate: true,
        };
        return (zero, vec![T::zero(); x.len()]);
    }
    let r = m.sab / denom;
    let g = m
        .a
        .iter()
        .zip(&m.b)
        .map(|(&ai, &bi)| bi / denom - r * ai / m.saa)
        .collect();
    (
        Ncc {
            value: r.max(-T::one()).min(T::one()),
            degenerate: false,
        },
        g,
    )
}

/// Pearson correlation of two equally shaped grids; 0 (flagged) if either is constant.
pub fn ncc<T: Scalar>(x: &Grid<T>, y: &Grid<T>) -> Result<Ncc<T>> {
    x.check_same_shape(y)?;
    Ok(ncc_slices(x.as_slice(), y.as_slice()))
}

fn check_gc_shape<T: Scalar>(x: &Grid<T>, y: &Grid<T>) -> Result<()> {
    x.check_same_shape(y)?;
    if x.height() < 3 || x.width() < 3 {
        return Err(Error::Contract("gradient correlation needs at least 3x3 inputs".into()));
    }
    Ok(())
}

/// Mean of the horizontal and vertical Sobel-gradient correlations.
pub fn gradient_correlation<T: Scalar>(x: &Grid<T>, y: &Grid<T>) -> Result<T> {
    check_gc_shape(x, y)?;
    let cx = ncc_slices(sobel_x(x).as_slice(), sobel_x(y).as_slice());
    let cy = ncc_slices(sobel_y(x).as_slice(), sobel_y(y).as_slice());
    Ok(lit::<T>(0.5) * (cx.value + cy.value))
}

pub fn gc_loss<T: Scalar>(x_t: &Grid<T>, y_detail: &Grid<T>) -> Result<T> {
    Ok(T::one() - gradient_correlation(x_t, y_detail)?)
}

/// `gc_loss` and its gradient with respect to `x_t`.
pub fn gc_loss_grad<T: Scalar>(x_t: &Grid<T>, y_detail: &Grid<T>) -> Result<(T, Grid<T>)> {
    check_gc_shape(x_t, y_detail)?;
    let (h, w) = x_t.shape();
    let gxx = sobel_x(x_t);
    let gyx = sobel_y(x_t);
    let (cx, dx) = ncc_grad_slices(gxx.as_slice(), sobel_x(y_detail).as_slice());
    let (cy, dy) = ncc_grad_slices(gyx.as_slice(), sobel_y(y_detail).as_slice());
    let half = lit::<T>(-0.5);
    let dx = Grid::from_vec(h - 2, w - 2, dx.into_iter().map(|v| half * v).collect())?;
    let dy = Grid::from_vec(h - 2, w - 2, dy.into_iter().map(|v| half * v).collect())?;
    let grad = sobel_x_adjoint(&dx).zip_map(&sobel_y_adjoint(&dy), |a, b| a + b)?;
    Ok((T::one() - lit::<T>(0.5) * (cx.value + cy.value), grad))
}

pub fn total_loss<T: Scalar>(
    x_t: &Grid<T>,
    target: &Grid<T>,
    y_detail: &Grid<T>,
    w: &LossWeights,
) -> Result<LossValue<T>> {
    let l1 = detail_enhancement_loss(x_t, target)?;
    let l2 = gc_loss(x_t, y_detail)?;
    Ok(combine(l1, l2, w))
}

/// `total_loss` and its gradient with respect to `x_t`; `target` is held constant.
pub fn total_loss_grad<T: Scalar>(
    x_t: &Grid<T>,
    target: &Grid<T>,
    y_detail: &Grid<T>,
    w: &LossWeights,
) -> Result<(LossValue<T>, Grid<T>)> {
    let l1 = detail_enhancement_loss(x_t, target)?;
    let g1 = mse_grad(x_t, target)?;
    let (l2, g2) = gc_loss_grad(x_t, y_detail)?;
    let (w1, w2) = (lit::<T>(w.lambda1), lit::<T>(w.lambda2));
    let grad = g1.zip_map(&g2, |a, b| w1 * a + w2 * b)?;
    Ok((combine(l1, l2, w), grad))
}

pub(crate) fn combine<T: Scalar>(l1: T, l2: T, w: &LossWeights) -> LossValue<T> {
    LossValue {
        total: lit::<T>(w.lambda1) * l1 + lit::<T>(w.lambda2) * l2,
        l1,
        l2,
    }
}
