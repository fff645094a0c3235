//! Versioned checkpoint container.
//!
//! Layout: 8-byte magic, little-endian `u32` header length, TOML header
//! (spec, spec hash, training metadata, tensor table), then every tensor as
//! packed little-endian `f32` in table order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{NetParams, Tensor, PARAMS_VERSION};
use super::{NetSpec, UNet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SPXCKPT\x01";

/// Training provenance stored alongside the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Enhancement iteration `t` this network produces.
    pub iteration: usize,
    /// Epochs completed.
    pub epoch: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: NetSpec,
    pub params: NetParams<f32>,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    spec_hash: String,
    spec: NetSpec,
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

impl Checkpoint {
    pub fn new<T: Scalar>(spec: NetSpec, params: &NetParams<T>, meta: CheckpointMeta) -> Self {
        Self {
            spec,
            params: params.cast(),
            meta,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            format_version: PARAMS_VERSION,
            spec_hash: self.params.spec_hash.clone(),
            spec: self.spec.clone(),
            meta: self.meta.clone(),
            tensors: self
                .params
                .tensors()
                .iter()
                .map(|t| TensorEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
        };
        let text = toml::to_string(&header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + text.len() + self.params.count() * 4);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        for t in self.params.tensors() {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let bad = |message: &str| Error::Format {
            path: origin.to_string(),
            message: message.to_string(),
        };
        if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let text = bytes
            .get(12..12 + hlen)
            .ok_or_else(|| bad("truncated header"))
            .and_then(|b| std::str::from_utf8(b).map_err(|_| bad("header is not UTF-8")))?;
        let header: Header = toml::from_str(text).map_err(|e| bad(&e.to_string()))?;
        if header.format_version != PARAMS_VERSION {
            return Err(bad(&format!("unsupported format version {}", header.format_version)));
        }
        let expected = header.spec.hash();
        if header.spec_hash != expected {
            return Err(Error::SpecMismatch {
                expected,
                found: header.spec_hash,
            });
        }
        let mut payload = &bytes[12 + hlen..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            if payload.len() < n * 4 {
                return Err(bad("truncated tensor payload"));
            }
            let data = payload[..n * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            payload = &payload[n * 4..];
            tensors.push(Tensor {
                name: entry.name,
                shape: entry.shape,
                data,
            });
        }
        if !payload.is_empty() {
            return Err(bad("trailing bytes after tensor payload"));
        }
        let params = NetParams::from_tensors(header.spec_hash, tensors);
        UNet::new(header.spec.clone()).check_params(&params)?;
        if !params.all_finite() {
            return Err(bad("non-finite parameter values"));
        }
        Ok(Self {
            spec: header.spec,
            params,
            meta: header.meta,
        })
    }

    /// Writes via a temporary file and rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }

    pub fn params_as<T: Scalar>(&self) -> NetParams<T> {
        self.params.cast()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (NetSpec, UNet) {
        let spec = NetSpec {
            depth: 2,
            base_channels: 8,
            ..NetSpec::default()
        };
        (spec.clone(), UNet::new(spec))
    }

    #[test]
    fn round_trip_is_bitwise() {
        let (spec, net) = small();
        let params: NetParams<f32> = net.init_params(11);
        let ck = Checkpoint::new(spec, &params, CheckpointMeta { iteration: 2, epoch: 40, seed: 11 });
        let back = Checkpoint::from_bytes(&ck.to_bytes(), "mem").unwrap();
        assert_eq!(back, ck);
        for (a, b) in back.params.tensors().iter().zip(params.tensors()) {
            let ab: Vec<u32> = a.data.iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn rejects_corruption() {
        let (spec, net) = small();
        let params: NetParams<f32> = net.init_params(1);
        let bytes = Checkpoint::new(spec, &params, CheckpointMeta::default()).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1], "t").is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad, "t").is_err());
    }

    #[test]
    fn rejects_tampered_spec() {
        let (spec, net) = small();
        let params: NetParams<f32> = net.init_params(1);
        let bytes = Checkpoint::new(spec, &params, CheckpointMeta::default()).to_bytes();
        let text = String::from_utf8_lossy(&bytes).replace("fusion_beta = 0.6", "fusion_beta = 0.5");
        let err = Checkpoint::from_bytes(text.as_bytes(), "t");
        assert!(matches!(err, Err(Error::SpecMismatch { .. }) | Err(Error::Format { .. })));
    }
}
