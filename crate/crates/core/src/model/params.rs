use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Version tag written into every parameter set and checkpoint.
pub const PARAMS_VERSION: u32 = 1;

/// One named, shaped parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            data: vec![T::zero(); n],
        }
    }
}

/// How a tensor is initialized; recorded by the layout builder.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub(crate) enum Init {
    Zero,
    /// Zero-mean normal with the given standard deviation.
    Normal(f64),
}

/// Learned tensors of one network, keyed by layer name.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams<T> {
    pub version: u32,
    pub spec_hash: String,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> NetParams<T> {
    pub(crate) fn from_tensors(spec_hash: String, tensors: Vec<Tensor<T>>) -> Self {
        Self {
            version: PARAMS_VERSION,
            spec_hash,
            tensors,
        }
    }

    /// Draws every tensor from its initializer with a seeded ChaCha stream,
    /// in declaration order.
    pub(crate) fn initialize(
        spec_hash: String,
        decls: &[(String, Vec<usize>, Init)],
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = decls
            .iter()
            .map(|(name, shape, init)| {
                let mut t = Tensor::zeros(name.clone(), shape.clone());
                if let Init::Normal(std) = *init {
                    let dist = Normal::new(0.0, std).expect("finite std");
                    for v in t.data.iter_mut() {
                        *v = T::from_f64_lossy(dist.sample(&mut rng));
                    }
                }
                t
            })
            .collect();
        Self::from_tensors(spec_hash, tensors)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            version: self.version,
            spec_hash: self.spec_hash.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.name.clone(), t.shape.clone()))
                .collect(),
        }
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    #[inline]
    pub(crate) fn data(&self, idx: usize) -> &[T] {
        &self.tensors[idx].data
    }

    #[inline]
    pub(crate) fn data_mut(&mut self, idx: usize) -> &mut [T] {
        &mut self.tensors[idx].data
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.data.fill(T::zero());
        }
    }

    pub fn scale(&mut self, factor: T) {
        for t in &mut self.tensors {
            for v in t.data.iter_mut() {
                *v *= factor;
            }
        }
    }

    /// Zeroes every tensor whose name starts with `prefix`.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for t in self.tensors.iter_mut().filter(|t| t.name.starts_with(prefix)) {
            t.data.fill(T::zero());
        }
    }

    pub fn cast<U: Scalar>(&self) -> NetParams<U> {
        NetParams {
            version: self.version,
            spec_hash: self.spec_hash.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|&v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
                })
                .collect(),
        }
    }

    /// Checks names and shapes against a declaration list.
    pub(crate) fn check_layout(&self, decls: &[(String, Vec<usize>, Init)]) -> Result<()> {
        if self.tensors.len() != decls.len() {
            return Err(Error::Config(format!(
                "expected {} tensors, found {}",
                decls.len(),
                self.tensors.len()
            )));
        }
        for (t, (name, shape, _)) in self.tensors.iter().zip(decls) {
            if &t.name != name || &t.shape != shape {
                return Err(Error::Config(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    t.name, t.shape, name, shape
                )));
            }
            if t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::Config(format!("tensor {} has wrong length", t.name)));
            }
        }
        Ok(())
    }
}
