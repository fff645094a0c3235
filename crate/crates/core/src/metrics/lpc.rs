//! Local phase coherence sharpness index.
//!
//! A one-sided log-Gabor bank gives complex responses at dyadic scales. For
//! scales in ratio 1:2:4 an ideal edge satisfies `phi1 - 3 phi2 + 2 phi3 = 0`,
//! so the cosine of that residual measures phase coherence. Orientations are
//! pooled with finest-scale magnitude weights, locations with rank weights that
//! favour the strongest coherence.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::ImageGrid;

const MIN_SIDE: usize = 64;
const FINEST_CENTER: f64 = 0.25;
const RADIAL_SIGMA_RATIO: f64 = 0.55;
const ANGULAR_SPREAD: f64 = 1.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LpcParams {
    pub n_scales: usize,
    pub n_orients: usize,
    /// Magnitude stabilizer in orientation pooling, on the 0-255 scale.
    pub stability_c: f64,
    /// Decay of the rank weights.
    pub rank_decay: f64,
}

impl Default for LpcParams {
    fn default() -> Self {
        Self {
            n_scales: 3,
            n_orients: 8,
            stability_c: 2.0,
            rank_decay: 1e-4,
        }
    }
}

impl LpcParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_scales < 3 {
            return Err(Error::field("n_scales", "must be >= 3 (a scale triple is required)"));
        }
        if self.n_orients < 1 {
            return Err(Error::field("n_orients", "must be >= 1"));
        }
        if !(self.stability_c > 0.0) {
            return Err(Error::field("stability_c", "must be > 0"));
        }
        if !(self.rank_decay > 0.0) {
            return Err(Error::field("rank_decay", "must be > 0"));
        }
        Ok(())
    }
}

fn frequency(k: usize, n: usize) -> f64 {
    let k = k as f64;
    let n_f = n as f64;
    if k < n_f / 2.0 {
        k / n_f
    } else {
        (k - n_f) / n_f
    }
}

fn fft2(data: &mut [Complex<f64>], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    for r in data.chunks_exact_mut(w) {
        row.process(r);
    }
    let mut buf = vec![Complex::new(0.0, 0.0); h];
    for c in 0..w {
        for r in 0..h {
            buf[r] = data[r * w + c];
        }
        col.process(&mut buf);
        for r in 0..h {
            data[r * w + c] = buf[r];
        }
    }
    if inverse {
        let s = 1.0 / (h * w) as f64;
        data.iter_mut().for_each(|v| *v *= s);
    }
}

/// Complex responses indexed `[scale][orientation]`, each `h * w` long.
fn filter_bank(img: &ImageGrid, p: &LpcParams) -> Vec<Vec<Vec<Complex<f64>>>> {
    let (h, w) = img.shape();
    let mut spectrum: Vec<Complex<f64>> = img.as_slice().iter().map(|&v| Complex::new(255.0 * v, 0.0)).collect();
    fft2(&mut spectrum, h, w, false);
    let log_sigma = RADIAL_SIGMA_RATIO.ln();
    let angle_sigma = std::f64::consts::PI / p.n_orients as f64 / ANGULAR_SPREAD;
    let polar: Vec<(f64, f64)> = (0..h * w)
        .map(|i| {
            let (fy, fx) = (frequency(i / w, h), frequency(i % w, w));
            ((fx * fx + fy * fy).sqrt(), fy.atan2(fx))
        })
        .collect();
    (0..p.n_scales)
        .map(|s| {
            let center = FINEST_CENTER / f64::powi(2.0, s as i32);
            (0..p.n_orients)
                .map(|j| {
                    let theta = j as f64 * std::f64::consts::PI / p.n_orients as f64;
                    let mut resp: Vec<Complex<f64>> = spectrum
                        .iter()
                        .zip(&polar)
                        .map(|(&v, &(rho, ang))| {
                            if rho == 0.0 {
                                return Complex::new(0.0, 0.0);
                            }
                            let radial = (-(rho / center).ln().powi(2) / (2.0 * log_sigma * log_sigma)).exp();
                            let d = (ang - theta).sin().atan2((ang - theta).cos());
                            let angular = (-d * d / (2.0 * angle_sigma * angle_sigma)).exp();
                            v * (radial * angular)
                        })
                        .collect();
                    fft2(&mut resp, h, w, true);
                    resp
                })
                .collect()
        })
        .collect()
}

/// Per-pixel orientation-pooled coherence strength, before border cropping.
pub fn lpc_strength_map(img: &ImageGrid, p: &LpcParams) -> Result<ImageGrid> {
    p.validate()?;
    let (h, w) = img.shape();
    if h < MIN_SIDE || w < MIN_SIDE {
        return Err(Error::Contract(format!(
            "LPC-SI needs at least {MIN_SIDE}x{MIN_SIDE}, got {h}x{w}"
        )));
    }
    if !img.all_finite() {
        return Err(Error::Contract("image contains non-finite values".into()));
    }
    let bank = filter_bank(img, p);
    let triples = p.n_scales - 2;
    let mut strength = vec![0.0; h * w];
    for s in 0..triples {
        for (i, out) in strength.iter_mut().enumerate() {
            let (mut num, mut den) = (0.0, 0.0);
            for j in 0..p.n_orients {
                let c1 = bank[s][j][i];
                let c2 = bank[s + 1][j][i];
                let c3 = bank[s + 2][j][i];
                let z = c1 * c2.conj().powu(3) * c3.powu(2);
                let mag = z.norm();
                let coherence = if mag > 0.0 { z.re / mag } else { 0.0 };
                let weight = c1.norm();
                num += weight * coherence;
                den += weight;
            }
            *out += num / (den + p.stability_c) / triples as f64;
        }
    }
    Grid::from_vec(h, w, strength)
}

/// Sharpness index: rank-weighted mean of the coherence strengths inside a
/// border of `round(min(h, w) / 16)` pixels.
pub fn lpc_si(img: &ImageGrid, p: &LpcParams) -> Result<f64> {
    let map = lpc_strength_map(img, p)?;
    let (h, w) = map.shape();
    let border = ((h.min(w) as f64) / 16.0).round() as usize;
    let inner = map.crop(border, border, h - 2 * border, w - 2 * border)?;
    let mut values = inner.into_vec();
    values.sort_by(|a, b| b.total_cmp(a));
    let k = values.len();
    let (mut num, mut den) = (0.0, 0.0);
    for (idx, v) in values.iter().enumerate() {
        let position = if k > 1 { idx as f64 / (k - 1) as f64 } else { 0.0 };
        let weight = (-position / p.rank_decay).exp();
        if weight == 0.0 {
            break;
        }
        num += weight * v;
        den += weight;
    }
    Ok(num / den)
}
