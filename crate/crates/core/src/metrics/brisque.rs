//! BRISQUE natural-scene statistics: MSCN coefficients, their GGD fit and the
//! AGGD fits of the four neighbour products, at two scales.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::grid::{reflect_index, Grid};
use crate::ImageGrid;

use super::ggd::{fit_aggd, fit_ggd};
use super::regressor::RegressorModel;

pub const BRISQUE_FEATURES: usize = 36;
const MIN_SIDE: usize = 32;
const WINDOW_RADIUS: usize = 3;
const WINDOW_SIGMA: f64 = 7.0 / 6.0;
const STABILIZER: f64 = 1.0;

/// Normalized 7x7 Gaussian window.
pub(crate) fn gaussian_window() -> &'static [f64; 49] {
    static W: OnceLock<[f64; 49]> = OnceLock::new();
    W.get_or_init(|| {
        let mut w = [0.0; 49];
        let r = WINDOW_RADIUS as isize;
        for (i, v) in w.iter_mut().enumerate() {
            let dy = (i / 7) as isize - r;
            let dx = (i % 7) as isize - r;
            *v = (-((dx * dx + dy * dy) as f64) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
        }
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        w
    })
}

/// Mean-subtracted contrast-normalized coefficients of a `[0, 1]` image,
/// computed on the 0-255 scale with reflect padding.
pub fn mscn(img: &ImageGrid) -> ImageGrid {
    let (h, w) = img.shape();
    let win = gaussian_window();
    let r = WINDOW_RADIUS as isize;
    let px = |row: isize, col: isize| {
        255.0 * img.get(reflect_index(row, h as isize), reflect_index(col, w as isize))
    };
    Grid::from_fn(h, w, |i, j| {
        let (i, j) = (i as isize, j as isize);
        let mut mu = 0.0;
        for k in -r..=r {
            for l in -r..=r {
                mu += win[((k + r) * 7 + l + r) as usize] * px(i + k, j + l);
            }
        }
        let mut var = 0.0;
        for k in -r..=r {
            for l in -r..=r {
                let d = px(i + k, j + l) - mu;
                var += win[((k + r) * 7 + l + r) as usize] * d * d;
            }
        }
        (px(i, j) - mu) / (var.sqrt() + STABILIZER)
    })
}

/// 2x2 box-average decimation; a trailing odd row or column is dropped.
pub fn downsample2(img: &ImageGrid) -> ImageGrid {
    Grid::from_fn(img.height() / 2, img.width() / 2, |r, c| {
        0.25 * (img.get(2 * r, 2 * c)
            + img.get(2 * r, 2 * c + 1)
            + img.get(2 * r + 1, 2 * c)
            + img.get(2 * r + 1, 2 * c + 1))
    })
}

fn products(m: &ImageGrid, dr: usize, dc: isize) -> Vec<f64> {
    let (h, w) = m.shape();
    let mut out = Vec::new();
    for r in 0..h - dr {
        for c in 0..w {
            let c2 = c as isize + dc;
            if c2 < 0 || c2 >= w as isize {
                continue;
            }
            out.push(m.get(r, c) * m.get(r + dr, c2 as usize));
        }
    }
    out
}

fn scale_features(img: &ImageGrid, out: &mut Vec<f64>) -> Result<()> {
    let m = mscn(img);
    let g = fit_ggd(m.as_slice())?;
    out.extend([g.gamma, g.sigma2]);
    // horizontal, vertical, main diagonal, anti-diagonal
    for (dr, dc) in [(0, 1), (1, 0), (1, 1), (1, -1)] {
        let a = fit_aggd(&products(&m, dr, dc))?;
        out.extend([a.shape, a.mean, a.left_var, a.right_var]);
    }
    Ok(())
}

/// The 36-entry feature vector: 18 statistics at full and half resolution.
pub fn brisque_features(img: &ImageGrid) -> Result<Vec<f64>> {
    if img.height() < MIN_SIDE || img.width() < MIN_SIDE {
        return Err(Error::Contract(format!(
            "BRISQUE needs at least {MIN_SIDE}x{MIN_SIDE}, got {}x{}",
            img.height(),
            img.width()
        )));
    }
    let mut out = Vec::with_capacity(BRISQUE_FEATURES);
    scale_features(img, &mut out)?;
    scale_features(&downsample2(img), &mut out)?;
    Ok(out)
}

/// Regressor prediction on the feature vector, clamped to `[0, 100]`.
pub fn brisque_score(img: &ImageGrid, regressor: &RegressorModel) -> Result<f64> {
    Ok(regressor.predict(&brisque_features(img)?)?.clamp(0.0, 100.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_is_normalized_and_symmetric() {
        let w = gaussian_window();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..7 {
            for j in 0..7 {
                assert_eq!(w[i * 7 + j], w[j * 7 + i]);
                assert_eq!(w[i * 7 + j], w[(6 - i) * 7 + j]);
            }
        }
    }

    #[test]
    fn constant_image_has_zero_mscn_and_fails_fit() {
        let g = Grid::filled(40, 40, 0.4);
        assert!(mscn(&g).as_slice().iter().all(|&v| v == 0.0));
        assert!(matches!(brisque_features(&g), Err(Error::Fit(_))));
    }

    #[test]
    fn small_images_are_rejected() {
        assert!(matches!(
            brisque_features(&Grid::filled(20, 40, 0.4)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn product_counts_cover_valid_overlap() {
        let m = Grid::from_fn(4, 5, |r, c| (r * 5 + c) as f64);
        assert_eq!(products(&m, 0, 1).len(), 4 * 4);
        assert_eq!(products(&m, 1, 0).len(), 3 * 5);
        assert_eq!(products(&m, 1, 1).len(), 3 * 4);
        assert_eq!(products(&m, 1, -1).len(), 3 * 4);
        assert_eq!(products(&m, 1, -1)[0], 1.0 * 5.0);
    }
}
