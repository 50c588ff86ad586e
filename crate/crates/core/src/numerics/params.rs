use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use super::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable parameters in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor under `name`. Names must be unique.
    pub fn add(&mut self, name: &str, tensor: Tensor) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        let id = ParamId(self.tensors.len());
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        self.index.insert(name.to_string(), id);
        id
    }

    /// Uniform Glorot initialisation for a `fan_in × fan_out` weight.
    pub fn add_glorot<R: Rng>(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> ParamId {
        let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
        self.add_uniform(name, fan_in, fan_out, bound, rng)
    }

    pub fn add_uniform<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, bound: f64, rng: &mut R) -> ParamId {
        let mut t = Tensor::zeros(rows, cols);
        for v in t.data_mut() {
            *v = rng.random_range(-bound..bound);
        }
        self.add(name, t)
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.add(name, Tensor::zeros(rows, cols))
    }

    pub fn add_filled(&mut self, name: &str, rows: usize, cols: usize, value: f64) -> ParamId {
        self.add(name, Tensor::filled(rows, cols, value))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Overwrites values from `other`, matching by name. Every parameter in
    /// `self` must be present in `other` with the same shape.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            let src = other
                .id(name)
                .map(|id| other.get(id))
                .ok_or_else(|| Error::UnknownParameter(name.clone()))?;
            if !src.same_shape(&self.tensors[i]) {
                return Err(Error::ShapeMismatch(alloc::format!(
                    "parameter {name}: {:?} vs {:?}",
                    self.tensors[i].shape(),
                    src.shape()
                )));
            }
            self.tensors[i] = src.clone();
        }
        Ok(())
    }
}

/// Per-parameter gradients, indexed like the owning [`ParamStore`].
///
/// `None` means the parameter took no part in the recorded computation.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn empty(n_params: usize) -> Self {
        Self { grads: (0..n_params).map(|_| None).collect() }
    }

    pub(crate) fn from_vec(grads: Vec<Option<Tensor>>) -> Self {
        Self { grads }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn set(&mut self, id: ParamId, grad: Tensor) {
        self.grads[id.0] = Some(grad);
    }

    /// Parameters that received no gradient (reported as zero).
    pub fn missing(&self) -> Vec<ParamId> {
        self.grads.iter().enumerate().filter(|(_, g)| g.is_none()).map(|(i, _)| ParamId(i)).collect()
    }

    /// Gradient for `id`, or zeros shaped like the parameter when the
    /// parameter was not part of the graph.
    pub fn get_or_zero(&self, store: &ParamStore, id: ParamId) -> Tensor {
        match self.get(id) {
            Some(g) => g.clone(),
            None => {
                let p = store.get(id);
                Tensor::zeros(p.rows(), p.cols())
            }
        }
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        assert_eq!(self.grads.len(), other.grads.len());
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            let Some(theirs) = theirs else { continue };
            match mine {
                Some(m) => {
                    for (a, b) in m.data_mut().iter_mut().zip(theirs.data()) {
                        *a += b;
                    }
                }
                None => *mine = Some(theirs.clone()),
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        let sq: f64 = self.grads.iter().flatten().flat_map(|g| g.data().iter()).map(|v| v * v).sum();
        libm::sqrt(sq)
    }

    /// Rescales so that the global norm is at most `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(Tensor::is_finite)
    }
}
