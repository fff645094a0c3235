//! Encoder-decoder enhancement network with an internal guidance branch.
//!
//! Topology for `depth = D`, `base_channels = C`:
//!
//! * encoder level `l` (1..=D) at resolution `H / 2^(l-1)` with `C * 2^(l-1)`
//!   channels: two `conv3x3 -> instance norm -> leaky` units, then 2x2 max-pool;
//! * bottleneck at `H / 2^D` with `C * 2^D` channels;
//! * decoder level `l`: transposed 2x2 convolution up to level `l`, convex
//!   fusion with that level's guidance features, concatenation with the
//!   encoder skip, two conv units;
//! * head: 1x1 convolution `z` gating a bounded residual,
//!   `y = x + (2 sigmoid(z) - 1) * (z >= 0 ? 1 - x : x)` with `x` clamped to
//!   `[0, 1]`; the output stays in `[0, 1]` and a zero head reproduces the input
//!   exactly.
//!
//! Guidance for level `l` is `max_pool(conv3x3(leaky(x)), 2^(l-1))` with its
//! own parameters, computed from the network input. All convolutions use
//! reflect padding.

mod checkpoint;
pub(crate) mod layers;
mod params;
mod unet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC};
pub use params::{NetParams, Tensor, PARAMS_VERSION};
pub use unet::{first_layer_features, forward, guidance_features, ForwardCache, UNet};

use crate::error::{Error, Result};
use crate::grid::Features;
use crate::scalar::Scalar;

/// Network topology and fusion settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetSpec {
    /// Number of encoder/decoder levels.
    pub depth: usize,
    /// Feature width at level 1; doubles per level.
    pub base_channels: usize,
    /// Weight of the guidance features at each fusion point.
    pub fusion_beta: f64,
    /// Negative-side slope of the guidance branch's leaky rectifier.
    pub activation_slope: f64,
    /// Whether the guidance branch exists at all.
    pub guidance: bool,
}

impl Default for NetSpec {
    fn default() -> Self {
        Self {
            depth: 4,
            base_channels: 32,
            fusion_beta: 0.6,
            activation_slope: 0.01,
            guidance: true,
        }
    }
}

impl NetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::field("depth", "must be >= 2"));
        }
        if self.base_channels < 8 {
            return Err(Error::field("base_channels", "must be >= 8"));
        }
        if !(0.0..=1.0).contains(&self.fusion_beta) {
            return Err(Error::field("fusion_beta", "must lie in [0, 1]"));
        }
        if !(self.activation_slope > 0.0) {
            return Err(Error::field("activation_slope", "must be > 0"));
        }
        Ok(())
    }

    /// Channels of encoder/decoder level `level` (1-based).
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << (level - 1)
    }

    /// Canonical text form; the hash is taken over this.
    pub fn canonical_text(&self) -> String {
        toml::to_string(self).expect("NetSpec serializes")
    }

    /// Short SHA-256 digest identifying the topology.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Convex combination `beta * guidance + (1 - beta) * decoder`.
pub fn fuse_guidance<T: Scalar>(
    guidance: &Features<T>,
    decoder: &Features<T>,
    beta: T,
) -> Result<Features<T>> {
    if guidance.shape() != decoder.shape() {
        return Err(Error::Contract(format!(
            "guidance {:?} and decoder {:?} features differ in shape",
            guidance.shape(),
            decoder.shape()
        )));
    }
    let mut out = decoder.clone();
    fuse_into(&mut out, guidance, beta);
    Ok(out)
}

pub(crate) fn fuse_into<T: Scalar>(decoder: &mut Features<T>, guidance: &Features<T>, beta: T) {
    let keep = T::one() - beta;
    for (d, &g) in decoder.data.iter_mut().zip(&guidance.data) {
        *d = beta * g + keep * *d;
    }
}
