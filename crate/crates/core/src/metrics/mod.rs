//! No-reference quality measures (entropy, BRISQUE, LPC-SI), the paired
//! Wilcoxon signed-rank test, and tabulated reports.

mod brisque;
mod ggd;
mod lpc;
mod regressor;
mod report;
mod wilcoxon;

pub use brisque::{brisque_features, brisque_score, downsample2, mscn, BRISQUE_FEATURES};
pub use ggd::{fit_aggd, fit_ggd, AggdFit, GgdFit};
pub use lpc::{lpc_si, lpc_strength_map, LpcParams};
pub use regressor::{Kernel, RegressorModel, DEFAULT_KERNEL, DEFAULT_RIDGE, REGRESSOR_FORMAT};
pub use report::{Aggregate, Aggregates, Comparison, ImageMetrics, Metric, MetricReport, MetricSuite};
pub use wilcoxon::{signed_rank_exact_p, wilcoxon_signed_rank, Wilcoxon, EXACT_MAX_N};

use crate::grid::Grid;
use crate::scalar::Scalar;

pub const GRAY_LEVELS: usize = 256;

/// Gray level of a `[0, 1]` intensity; out-of-range values are clamped.
#[inline]
pub fn gray_level<T: Scalar>(v: T) -> usize {
    let v = v.to_f64_lossy().clamp(0.0, 1.0);
    (v * 255.0).round() as usize
}

pub fn histogram256<T: Scalar>(img: &Grid<T>) -> [u64; GRAY_LEVELS] {
    let mut h = [0u64; GRAY_LEVELS];
    for &v in img.as_slice() {
        h[gray_level(v)] += 1;
    }
    h
}

/// Shannon entropy in bits of the 256-level histogram.
pub fn entropy<T: Scalar>(img: &Grid<T>) -> f64 {
    let n = img.len() as f64;
    if n == 0.0 {
        return 0.0;
    }
    let h = -histogram256(img)
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let q = c as f64 / n;
            q * q.log2()
        })
        .sum::<f64>();
    h.max(0.0)
}
