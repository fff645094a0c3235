//! Moment-matching fits of the generalized Gaussian and its asymmetric variant.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const SHAPE_MIN: f64 = 0.2;
const SHAPE_MAX: f64 = 10.0;
const SHAPE_STEP: f64 = 0.001;
const MIN_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GgdFit {
    /// Shape parameter.
    pub gamma: f64,
    /// Variance (second moment about zero).
    pub sigma2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggdFit {
    pub shape: f64,
    pub mean: f64,
    pub left_var: f64,
    pub right_var: f64,
}

/// `Gamma(2/g)^2 / (Gamma(1/g) Gamma(3/g))`, increasing in `g`.
pub(crate) fn moment_ratio(g: f64) -> f64 {
    (2.0 * ln_gamma(2.0 / g) - ln_gamma(1.0 / g) - ln_gamma(3.0 / g)).exp()
}

fn table() -> &'static [(f64, f64)] {
    static TABLE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = ((SHAPE_MAX - SHAPE_MIN) / SHAPE_STEP).round() as usize;
        (0..=n)
            .map(|i| {
                let g = SHAPE_MIN + i as f64 * SHAPE_STEP;
                (g, moment_ratio(g))
            })
            .collect()
    })
}

/// Shape whose tabulated moment ratio is nearest `ratio`.
fn invert_ratio(ratio: f64) -> f64 {
    let t = table();
    let idx = t.partition_point(|&(_, r)| r < ratio);
    let candidates = [idx.saturating_sub(1), idx.min(t.len() - 1)];
    let best = candidates
        .into_iter()
        .min_by(|&a, &b| (t[a].1 - ratio).abs().total_cmp(&(t[b].1 - ratio).abs()))
        .unwrap();
    t[best].0
}

fn check_samples(samples: &[f64]) -> Result<()> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::Fit(format!(
            "need at least {MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("samples contain non-finite values".into()));
    }
    Ok(())
}

/// Zero-mean generalized Gaussian fit by the `(E|x|)^2 / E[x^2]` moment ratio.
pub fn fit_ggd(samples: &[f64]) -> Result<GgdFit> {
    check_samples(samples)?;
    let n = samples.len() as f64;
    let abs_mean = samples.iter().map(|v| v.abs()).sum::<f64>() / n;
    let sigma2 = samples.iter().map(|v| v * v).sum::<f64>() / n;
    if !(sigma2 > 0.0) {
        return Err(Error::Fit("samples are constant zero".into()));
    }
    Ok(GgdFit {
        gamma: invert_ratio(abs_mean * abs_mean / sigma2),
        sigma2,
    })
}

/// Asymmetric generalized Gaussian fit with separate left and right scales.
pub fn fit_aggd(samples: &[f64]) -> Result<AggdFit> {
    check_samples(samples)?;
    let (mut ls, mut ln, mut rs, mut rn) = (0.0, 0usize, 0.0, 0usize);
    for &v in samples {
        if v < 0.0 {
            ls += v * v;
            ln += 1;
        } else if v > 0.0 {
            rs += v * v;
            rn += 1;
        }
    }
    if ln == 0 || rn == 0 {
        return Err(Error::Fit("samples lie on one side of zero".into()));
    }
    let left_var = ls / ln as f64;
    let right_var = rs / rn as f64;
    let (sl, sr) = (left_var.sqrt(), right_var.sqrt());
    let g = sl / sr;
    let n = samples.len() as f64;
    let abs_mean = samples.iter().map(|v| v.abs()).sum::<f64>() / n;
    let second = samples.iter().map(|v| v * v).sum::<f64>() / n;
    let r = abs_mean * abs_mean / second;
    let adjusted = r * (g.powi(3) + 1.0) * (g + 1.0) / (g * g + 1.0).powi(2);
    let shape = invert_ratio(adjusted);
    let scale = (ln_gamma(1.0 / shape) - ln_gamma(3.0 / shape)).exp().sqrt();
    let mean = (sr - sl) * scale * (ln_gamma(2.0 / shape) - ln_gamma(1.0 / shape)).exp();
    Ok(AggdFit {
        shape,
        mean,
        left_var,
        right_var,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_matches_known_members() {
        // Gaussian: 2/pi; Laplacian: 1/2
        assert!((moment_ratio(2.0) - 2.0 / std::f64::consts::PI).abs() < 1e-12);
        assert!((moment_ratio(1.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn table_is_monotone() {
        assert!(table().windows(2).all(|w| w[1].1 > w[0].1));
        assert_eq!(table().len(), 9801);
    }

    #[test]
    fn inversion_hits_grid_points() {
        for g in [0.5, 1.0, 2.0, 3.7] {
            assert!((invert_ratio(moment_ratio(g)) - g).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_samples_fail() {
        assert!(fit_ggd(&[0.0; 200]).is_err());
        assert!(fit_ggd(&[1.0; 20]).is_err());
        assert!(fit_aggd(&[1.0; 200]).is_err());
    }

    #[test]
    fn symmetric_aggd_has_zero_mean() {
        let s: Vec<f64> = (0..400).map(|i| ((i as f64) * 0.37).sin()).flat_map(|v| [v, -v]).collect();
        let f = fit_aggd(&s).unwrap();
        assert!(f.mean.abs() < 1e-12);
        assert!((f.left_var - f.right_var).abs() < 1e-12);
    }
}
