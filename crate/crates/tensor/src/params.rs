use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    Format(#[from] serde_json::Error),
    #[error("parameter {name}: expected shape {expected:?}, found {found:?}")]
    Shape { name: String, expected: [usize; 2], found: [usize; 2] },
    #[error("parameter {0} missing from checkpoint")]
    Missing(String),
}

/// Named trainable tensors.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a tensor. Panics on duplicate names.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.values.len());
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Normal(0, std) initialization.
    pub fn add_normal(&mut self, name: impl Into<String>, rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> ParamId {
        let dist = Normal::new(0.0, std).expect("positive std");
        let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
        self.add(name, Tensor { rows, cols, data })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Structured-text checkpoint: names, shapes and values as JSON.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    /// Overwrite every parameter of `self` from a checkpoint, checking shapes.
    pub fn load_into(&mut self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let other: ParamStore = serde_json::from_str(&fs::read_to_string(path)?)?;
        self.copy_from(&other)
    }

    pub fn copy_from(&mut self, other: &ParamStore) -> Result<(), CheckpointError> {
        let lookup: HashMap<&str, &Tensor> = other.names.iter().map(String::as_str).zip(&other.values).collect();
        for (name, value) in self.names.iter().zip(self.values.iter_mut()) {
            let src = lookup.get(name.as_str()).ok_or_else(|| CheckpointError::Missing(name.clone()))?;
            if src.shape() != value.shape() {
                return Err(CheckpointError::Shape { name: name.clone(), expected: value.shape(), found: src.shape() });
            }
            value.data.clone_from(&src.data);
        }
        Ok(())
    }
}

/// Accumulated parameter gradients, dense per parameter.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn new(num_params: usize) -> Self {
        Self { grads: vec![None; num_params] }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    /// Gradient buffer for `id`, created as zeros shaped like `like`.
    pub fn slot(&mut self, id: ParamId, like: &Tensor) -> &mut Tensor {
        self.grads[id.0].get_or_insert_with(|| Tensor::zeros(like.rows, like.cols))
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Tensor) {
        match &mut self.grads[id.0] {
            Some(t) => t.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }

    pub fn merge(&mut self, other: &Gradients) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.grads.iter_mut().flatten().for_each(|g| g.scale_assign(s));
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().flatten().map(Tensor::norm_sq).sum::<f64>().sqrt()
    }

    /// Rescale so the global norm is at most `max_norm`; returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(Tensor::is_finite)
    }
}
