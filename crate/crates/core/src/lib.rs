pub mod error;
pub mod grid;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod preprocess;
pub mod scalar;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
pub use grid::{Features, Grid};
pub use scalar::Scalar;

/// Raster used at I/O and metric boundaries.
pub type ImageGrid = Grid<f64>;
/// Single-precision raster, the training default.
pub type ImageGrid32 = Grid<f32>;
