//! Patch extraction, the per-iteration optimisation loop, the iterative
//! enhancement chain and the ablation driver.

mod ablation;
mod optim;
mod train;

use serde::{Deserialize, Serialize};

pub use ablation::{run_ablation, AblationCell, AblationData, Study};
pub use optim::Adam;
pub use train::{
    initial_input, iteration_seed, iterative_enhance, train_iteration, train_run, IterationResult,
    IterationStatus, Stage, TraceRow, TrainingSet,
};

use crate::error::{Error, Result};
use crate::grid::{reflect_index, Grid};
use crate::losses::LossWeights;
use crate::scalar::Scalar;

pub const MAX_ITERATIONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DelVariant {
    /// Detail-enhancement loss against the selected feature map.
    #[serde(rename = "DEL")]
    Del,
    /// Mean squared error against the network input.
    #[serde(rename = "L2-to-original")]
    L2ToOriginal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GclVariant {
    /// Gradient-correlation loss against the details layer.
    #[serde(rename = "GCL")]
    Gcl,
    /// Mean squared error against the details layer.
    #[serde(rename = "L2-to-detail")]
    L2ToDetail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    pub guidance: bool,
    pub del_variant: DelVariant,
    pub gcl_variant: GclVariant,
    pub preprocessing: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self {
            guidance: true,
            del_variant: DelVariant::Del,
            gcl_variant: GclVariant::Gcl,
            preprocessing: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learn_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Number of enhancement iterations, each with its own network.
    pub iterations: usize,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub ablation: AblationFlags,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learn_rate: 0.001,
            adam_beta1: 0.9,
            adam_beta2: 0.99,
            adam_epsilon: 1e-8,
            batch_size: 8,
            epochs: 400,
            iterations: 2,
            seed: 0,
            loss_weights: LossWeights::default(),
            ablation: AblationFlags::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learn_rate > 0.0 && self.learn_rate.is_finite()) {
            return Err(Error::field("learn_rate", "must be finite and > 0"));
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::field(name, "must lie in [0, 1)"));
            }
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::field("adam_epsilon", "must be > 0"));
        }
        if self.batch_size < 1 {
            return Err(Error::field("batch_size", "must be >= 1"));
        }
        if self.epochs < 1 {
            return Err(Error::field("epochs", "must be >= 1"));
        }
        if !(1..=MAX_ITERATIONS).contains(&self.iterations) {
            return Err(Error::field("iterations", "iterations ∈ {1,2,3}"));
        }
        self.loss_weights.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropMode {
    Train,
    Eval,
}

/// Patch geometry as `(width, height)` pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchSpec {
    pub train_size: (usize, usize),
    pub eval_size: (usize, usize),
}

impl Default for PatchSpec {
    fn default() -> Self {
        Self {
            train_size: (512, 512),
            eval_size: (290, 512),
        }
    }
}

impl PatchSpec {
    /// Small geometry used for quick experiments: 128x128 training patches
    /// and a 72x128 evaluation window with the same aspect as the default.
    pub fn desk() -> Self {
        Self {
            train_size: (128, 128),
            eval_size: (72, 128),
        }
    }

    pub fn size(&self, mode: CropMode) -> (usize, usize) {
        match mode {
            CropMode::Train => self.train_size,
            CropMode::Eval => self.eval_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (w, h)) in [("train_size", self.train_size), ("eval_size", self.eval_size)] {
            if w < 8 || h < 8 {
                return Err(Error::field(name, "both sides must be >= 8"));
            }
        }
        Ok(())
    }
}

/// Patch centred on the spine column (the image centre unless `center_col`
/// is given) and the vertical middle. Regions outside the source are filled
/// by reflection.
pub fn crop_spine_patch<T: Scalar>(
    img: &Grid<T>,
    spec: &PatchSpec,
    mode: CropMode,
    center_col: Option<usize>,
) -> Result<Grid<T>> {
    let (h, w) = img.shape();
    if h <= 64 || w <= 64 {
        return Err(Error::Contract(format!("source must exceed 64x64, got {h}x{w}")));
    }
    let (pw, ph) = spec.size(mode);
    let cx = center_col.unwrap_or(w / 2);
    if cx >= w {
        return Err(Error::Contract(format!("center column {cx} outside width {w}")));
    }
    let top = (h / 2) as isize - (ph / 2) as isize;
    let left = cx as isize - (pw / 2) as isize;
    Ok(Grid::from_fn(ph, pw, |r, c| {
        img.get(
            reflect_index(top + r as isize, h as isize),
            reflect_index(left + c as isize, w as isize),
        )
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_validation() {
        let c = TrainConfig::default();
        assert_eq!((c.learn_rate, c.adam_beta1, c.adam_beta2, c.batch_size, c.epochs), (0.001, 0.9, 0.99, 8, 400));
        c.validate().unwrap();
        let bad = TrainConfig {
            iterations: 4,
            ..c.clone()
        };
        match bad.validate() {
            Err(Error::Field { field, message }) => {
                assert_eq!(field, "iterations");
                assert!(message.contains("{1,2,3}"));
            }
            other => panic!("{other:?}"),
        }
        assert!(TrainConfig { batch_size: 0, ..c }.validate().is_err());
    }

    #[test]
    fn crop_geometry() {
        let img = Grid::from_fn(1024, 1024, |r, c| (r * 1024 + c) as f64);
        let spec = PatchSpec::default();
        let p = crop_spine_patch(&img, &spec, CropMode::Train, None).unwrap();
        assert_eq!(p.shape(), (512, 512));
        assert_eq!(p.get(0, 0), img.get(256, 256));
        let e = crop_spine_patch(&img, &spec, CropMode::Eval, None).unwrap();
        assert_eq!(e.shape(), (512, 290));
        assert_eq!(e.get(0, 0), img.get(256, 512 - 145));
        let o = crop_spine_patch(&img, &spec, CropMode::Eval, Some(600)).unwrap();
        assert_eq!(o.get(10, 145), img.get(266, 600));
    }

    #[test]
    fn crop_pads_small_sources() {
        let img = Grid::from_fn(300, 300, |r, c| (r * 300 + c) as f64);
        let p = crop_spine_patch(&img, &PatchSpec::default(), CropMode::Train, None).unwrap();
        assert_eq!(p.shape(), (512, 512));
        let off = 256 - 150;
        for r in 0..300 {
            for c in 0..300 {
                assert_eq!(p.get(r + off, c + off), img.get(r, c));
            }
        }
        assert!(crop_spine_patch(&Grid::<f64>::zeros(64, 300), &PatchSpec::default(), CropMode::Train, None).is_err());
    }
}
