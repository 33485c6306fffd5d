//! Named parameter collections.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Named map from parameter id to tensor plus a version counter that is
/// bumped exactly once per optimizer step. Snapshots are plain clones.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<S> {
    params: BTreeMap<String, Tensor<S>>,
    version: u64,
}

impl<S: Scalar> Default for ParameterSet<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParameterSet<S> {
    pub fn new() -> Self {
        ParameterSet {
            params: BTreeMap::new(),
            version: 0,
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, value: Tensor<S>) -> Result<()> {
        let id = id.into();
        if self.params.contains_key(&id) {
            return Err(Error::contract(format!("duplicate parameter id {id:?}")));
        }
        self.params.insert(id, value);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Tensor<S>> {
        self.params.get(id)
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut Tensor<S>> {
        self.params.get_mut(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.params.contains_key(id)
    }

    /// Ids in sorted order (BTreeMap iteration order is deterministic).
    pub fn ids(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<S>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<S>)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn bump_version(&mut self) {
        self.version += 1;
    }

    pub(crate) fn set_version(&mut self, v: u64) {
        self.version = v;
    }
}

/// Uniform init in +-1/sqrt(fan_in).
pub fn uniform_init<S: Scalar, R: Rng>(shape: Vec<usize>, fan_in: usize, rng: &mut R) -> Tensor<S> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| S::from_f64(rng.random_range(-bound..bound)))
        .collect();
    Tensor::new(shape, data).expect("shape/data constructed consistently")
}
