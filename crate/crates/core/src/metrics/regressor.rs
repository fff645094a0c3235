//! Kernel regressor mapping BRISQUE features to a 0-100 quality score.
//!
//! Stored as TOML: kernel, per-feature scaling range (features are mapped to
//! `[-1, 1]`), support vectors in scaled space, their coefficients and an
//! intercept.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::brisque_features;
use crate::error::{Error, Result};
use crate::ImageGrid;

pub const REGRESSOR_FORMAT: &str = "spine-enhance-brisque-regressor";
const REGRESSOR_VERSION: u32 = 1;
/// Kernel and ridge of the bundled model.
pub const DEFAULT_KERNEL: Kernel = Kernel::Rbf { gamma: 0.2 };
pub const DEFAULT_RIDGE: f64 = 0.003;
const BUNDLED: &str = include_str!("../../assets/brisque_regressor.toml");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorModel {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub description: String,
    pub kernel: Kernel,
    pub intercept: f64,
    pub feature_min: Vec<f64>,
    pub feature_max: Vec<f64>,
    pub coefficients: Vec<f64>,
    pub support_vectors: Vec<Vec<f64>>,
}

impl RegressorModel {
    /// The model compiled into the library.
    pub fn bundled() -> Self {
        Self::from_toml(BUNDLED, "<bundled>").expect("bundled regressor is valid")
    }

    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let model: Self = toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))?;
        model.validate().map_err(|e| Error::Config(format!("{origin}: {e}")))?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("regressor serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_toml().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != REGRESSOR_FORMAT {
            return Err(Error::Config(format!("unknown regressor format {:?}", self.format)));
        }
        if self.version != REGRESSOR_VERSION {
            return Err(Error::Config(format!("unsupported regressor version {}", self.version)));
        }
        let d = self.feature_min.len();
        if d == 0 || self.feature_max.len() != d {
            return Err(Error::Config("feature scaling ranges are inconsistent".into()));
        }
        if self.coefficients.len() != self.support_vectors.len() {
            return Err(Error::Config("coefficient and support-vector counts differ".into()));
        }
        if self.support_vectors.iter().any(|s| s.len() != d) {
            return Err(Error::Config("support vector has wrong dimension".into()));
        }
        let finite = std::iter::once(self.intercept)
            .chain(self.feature_min.iter().copied())
            .chain(self.feature_max.iter().copied())
            .chain(self.coefficients.iter().copied())
            .chain(self.support_vectors.iter().flatten().copied())
            .all(f64::is_finite);
        if !finite {
            return Err(Error::Config("regressor contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.feature_min.len()
    }

    fn scale(&self, features: &[f64]) -> Vec<f64> {
        features
            .iter()
            .zip(self.feature_min.iter().zip(&self.feature_max))
            .map(|(&f, (&lo, &hi))| if hi > lo { -1.0 + 2.0 * (f - lo) / (hi - lo) } else { 0.0 })
            .collect()
    }

    /// Raw (unclamped) prediction.
    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.dimension() {
            return Err(Error::Contract(format!(
                "regressor expects {} features, got {}",
                self.dimension(),
                features.len()
            )));
        }
        let z = self.scale(features);
        Ok(self.intercept
            + self
                .support_vectors
                .iter()
                .zip(&self.coefficients)
                .map(|(s, c)| c * self.kernel.eval(s, &z))
                .sum::<f64>())
    }

    /// Extracts BRISQUE features from labelled images (in parallel) and fits.
    pub fn fit_images(items: &[(ImageGrid, f64)], kernel: Kernel, ridge: f64) -> Result<Self> {
        let features = items
            .par_iter()
            .map(|(img, _)| brisque_features(img))
            .collect::<Result<Vec<_>>>()?;
        let targets: Vec<f64> = items.iter().map(|(_, y)| *y).collect();
        Self::fit(&features, &targets, kernel, ridge)
    }

    /// Kernel ridge regression on every training sample.
    pub fn fit(features: &[Vec<f64>], targets: &[f64], kernel: Kernel, ridge: f64) -> Result<Self> {
        let n = features.len();
        if n == 0 || targets.len() != n {
            return Err(Error::Fit("need matching, nonempty features and targets".into()));
        }
        let d = features[0].len();
        if features.iter().any(|f| f.len() != d) {
            return Err(Error::Fit("ragged feature rows".into()));
        }
        let mut feature_min = vec![f64::INFINITY; d];
        let mut feature_max = vec![f64::NEG_INFINITY; d];
        for f in features {
            for k in 0..d {
                feature_min[k] = feature_min[k].min(f[k]);
                feature_max[k] = feature_max[k].max(f[k]);
            }
        }
        let mut model = Self {
            format: REGRESSOR_FORMAT.into(),
            version: REGRESSOR_VERSION,
            description: String::new(),
            kernel,
            intercept: targets.iter().sum::<f64>() / n as f64,
            feature_min,
            feature_max,
            coefficients: Vec::new(),
            support_vectors: Vec::new(),
        };
        let scaled: Vec<Vec<f64>> = features.iter().map(|f| model.scale(f)).collect();
        let gram = DMatrix::from_fn(n, n, |i, j| {
            kernel.eval(&scaled[i], &scaled[j]) + if i == j { ridge } else { 0.0 }
        });
        let rhs = DVector::from_iterator(n, targets.iter().map(|t| t - model.intercept));
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::Fit("kernel matrix is not positive definite".into()))?;
        model.coefficients = chol.solve(&rhs).iter().copied().collect();
        model.support_vectors = scaled;
        Ok(model)
    }
}
