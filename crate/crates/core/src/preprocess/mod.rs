//! Radiograph preprocessing: min-max normalization, inversion about the mean,
//! WLS edge-preserving smoothing, and the detail-boost composition
//! `E = I / max(WLS(I) + (mean(I) - I), floor)`.
//!
//! The WLS smoothness term is the squared-gradient form: `s` minimizes
//! `|s - i|^2 + lambda * sum(w_x (ds/dx)^2 + w_y (ds/dy)^2)`, i.e. solves
//! `(I + lambda * A) s = i` with `A` the weighted five-point Laplacian.

mod wls;

use serde::{Deserialize, Serialize};

pub use wls::{wls_smooth, WlsSystem};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scalar::{lit, Scalar};

/// Smallest image side accepted by the composed pipeline.
pub const MIN_SIDE: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessParams {
    /// Balance between data fidelity and smoothness.
    pub lambda_smooth: f64,
    /// Gradient sensitivity exponent of the smoothness weights.
    pub alpha: f64,
    /// Stabilizer in the smoothness weights and the log-luminance.
    pub epsilon: f64,
    /// Lower bound applied to the divisor of the composition step.
    pub divide_floor: f64,
    /// Relative residual at which the conjugate-gradient solve stops.
    pub solver_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        Self {
            lambda_smooth: 0.8,
            alpha: 1.8,
            epsilon: 1e-4,
            divide_floor: 0.01,
            solver_tolerance: 1e-12,
            max_iterations: 20_000,
        }
    }
}

impl PreprocessParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_smooth >= 0.0 && self.lambda_smooth.is_finite()) {
            return Err(Error::field("lambda_smooth", "must be finite and >= 0"));
        }
        if !(1.2..=2.0).contains(&self.alpha) {
            return Err(Error::field("alpha", "must lie in [1.2, 2.0]"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::field("epsilon", "must be > 0"));
        }
        if !(self.divide_floor > 0.0) {
            return Err(Error::field("divide_floor", "must be > 0"));
        }
        if !(self.solver_tolerance > 0.0) {
            return Err(Error::field("solver_tolerance", "must be > 0"));
        }
        if self.max_iterations == 0 {
            return Err(Error::field("max_iterations", "must be > 0"));
        }
        Ok(())
    }
}

/// Affine rescale to `[0, 1]`. A constant image maps to all zeros.
pub fn normalize_minmax<T: Scalar>(img: &Grid<T>) -> Grid<T> {
    let lo = img.min();
    let hi = img.max();
    let range = hi - lo;
    if !(range > T::zero()) {
        return Grid::zeros(img.height(), img.width());
    }
    img.map(|v| (v - lo) / range)
}

/// `mean(img) - img`, elementwise.
pub fn invert_about_mean<T: Scalar>(img: &Grid<T>) -> Grid<T> {
    let mean = img.mean();
    img.map(|v| mean - v)
}

/// Detail-boosted image, renormalized to `[0, 1]`.
pub fn compose_enhanced<T: Scalar>(img: &Grid<T>, params: &PreprocessParams) -> Result<Grid<T>> {
    check_pipeline_input(img)?;
    let smooth = wls_smooth(img, params)?;
    let inverted = invert_about_mean(img);
    let floor = lit::<T>(params.divide_floor);
    let boosted = Grid::from_fn(img.height(), img.width(), |r, c| {
        let p = smooth.get(r, c) + inverted.get(r, c);
        img.get(r, c) / p.max(floor)
    });
    Ok(normalize_minmax(&boosted))
}

/// High-frequency residual `img - WLS(img)`.
pub fn details_layer<T: Scalar>(img: &Grid<T>, params: &PreprocessParams) -> Result<Grid<T>> {
    let smooth = wls_smooth(img, params)?;
    img.zip_map(&smooth, |a, b| a - b)
}

/// Normalizes then composes; the usual entry point for raw radiographs.
pub fn preprocess<T: Scalar>(img: &Grid<T>, params: &PreprocessParams) -> Result<Grid<T>> {
    compose_enhanced(&normalize_minmax(img), params)
}

fn check_pipeline_input<T: Scalar>(img: &Grid<T>) -> Result<()> {
    if img.height() < MIN_SIDE || img.width() < MIN_SIDE {
        return Err(Error::Contract(format!(
            "image must be at least {MIN_SIDE}x{MIN_SIDE}, got {}x{}",
            img.height(),
            img.width()
        )));
    }
    if !img.all_finite() {
        return Err(Error::Contract("image contains non-finite values".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        let g = Grid::from_rows(&[vec![2.0, 4.0], vec![6.0, 10.0]]);
        assert_eq!(normalize_minmax(&g), Grid::from_rows(&[vec![0.0, 0.25], vec![0.5, 1.0]]));
        let c = Grid::filled(3, 3, 7.0);
        assert_eq!(normalize_minmax(&c), Grid::zeros(3, 3));
        let unit = Grid::from_rows(&[vec![0.0, 0.3], vec![1.0, 0.5]]);
        assert_eq!(normalize_minmax(&unit), unit);
    }

    #[test]
    fn invert_examples() {
        let g = Grid::from_rows(&[vec![1.0, 3.0]]);
        assert_eq!(invert_about_mean(&g), Grid::from_rows(&[vec![1.0, -1.0]]));
        assert_eq!(invert_about_mean(&Grid::filled(2, 5, 0.4)), Grid::zeros(2, 5));
    }

    #[test]
    fn invert_is_involution_on_centered_input() {
        let g = Grid::from_fn(5, 7, |r, c| ((r * 7 + c) as f64 * 0.9).sin());
        let centered = g.map(|v| v - g.mean());
        let twice = invert_about_mean(&invert_about_mean(&centered));
        for (a, b) in twice.as_slice().iter().zip(centered.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn compose_constant_image_is_zero() {
        let g = Grid::filled(16, 16, 0.37);
        let out = compose_enhanced(&g, &PreprocessParams::default()).unwrap();
        assert_eq!(out, Grid::zeros(16, 16));
    }

    #[test]
    fn compose_rejects_tiny_input() {
        let g = Grid::filled(4, 16, 0.5);
        assert!(matches!(
            compose_enhanced(&g, &PreprocessParams::default()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn details_of_constant_and_unsmoothed() {
        let p = PreprocessParams::default();
        let g = Grid::filled(8, 8, 0.6);
        assert_eq!(details_layer(&g, &p).unwrap(), Grid::zeros(8, 8));
        let ramp = Grid::from_fn(8, 8, |r, c| (r + c) as f64 / 14.0);
        let p0 = PreprocessParams {
            lambda_smooth: 0.0,
            ..p
        };
        assert_eq!(details_layer(&ramp, &p0).unwrap(), Grid::zeros(8, 8));
    }

    #[test]
    fn params_validation() {
        PreprocessParams::default().validate().unwrap();
        let bad = PreprocessParams {
            alpha: 2.5,
            ..PreprocessParams::default()
        };
        assert!(bad.validate().is_err());
    }
}
