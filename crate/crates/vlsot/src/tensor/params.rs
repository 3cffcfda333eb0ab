use std::collections::HashMap;

use crate::error::{Error, Result};

use super::Tensor;

/// Index of a parameter within its [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub(crate) fn index(self) -> usize {
        self.0
    }

    pub(crate) fn from_index(index: usize) -> Self {
        ParamId(index)
    }
}

/// A named trainable tensor with its gradient accumulator.
pub struct Param {
    name: String,
    value: Tensor,
    grad: Vec<f64>,
    /// Whether decoupled weight decay applies (matrices yes, biases and
    /// normalization parameters no).
    decay: bool,
}

impl Param {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn decay(&self) -> bool {
        self.decay
    }

    /// Split borrow for optimizer updates: mutable value, read-only grad.
    pub(crate) fn value_and_grad(&mut self) -> (&mut Tensor, &[f64]) {
        (&mut self.value, &self.grad)
    }
}

/// Ordered, name-indexed storage for every trainable tensor of a model.
#[derive(Default)]
pub struct ParamSet {
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Register a weight-decayed parameter. Names must be unique.
    pub fn register(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.insert(name.into(), value, true)
    }

    /// Register a parameter excluded from weight decay.
    pub fn register_no_decay(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.insert(name.into(), value, false)
    }

    fn insert(&mut self, name: String, value: Tensor, decay: bool) -> ParamId {
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id.0);
        let grad = vec![0.0; value.numel()];
        self.params.push(Param {
            name,
            value,
            grad,
            decay,
        });
        id
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.by_name.get(name).map(|&i| &self.params[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Add per-parameter gradient contributions (micro-batch accumulation).
    pub fn accumulate_grads(&mut self, grads: &[(ParamId, Vec<f64>)]) -> Result<()> {
        for (id, g) in grads {
            let p = &mut self.params[id.0];
            if g.len() != p.grad.len() {
                return Err(Error::invalid(format!(
                    "gradient length {} does not match parameter {} ({})",
                    g.len(),
                    p.name,
                    p.grad.len()
                )));
            }
            for (acc, v) in p.grad.iter_mut().zip(g) {
                *acc += v;
            }
        }
        Ok(())
    }

    /// Scale all accumulated gradients (e.g. by 1/batch).
    pub fn scale_grads(&mut self, c: f64) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g *= c);
        }
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Overwrite values from `(name, tensor)` entries; every parameter must
    /// be covered exactly and shapes must match.
    pub fn load_values(&mut self, entries: &[(String, Tensor)]) -> Result<()> {
        let mut seen = vec![false; self.params.len()];
        for (name, tensor) in entries {
            let Some(&i) = self.by_name.get(name) else {
                return Err(Error::invalid(format!("unknown parameter {name} in checkpoint")));
            };
            if self.params[i].value.shape() != tensor.shape() {
                return Err(Error::invalid(format!(
                    "parameter {name}: checkpoint shape {:?} does not match model shape {:?}",
                    tensor.shape(),
                    self.params[i].value.shape()
                )));
            }
            self.params[i].value = tensor.clone();
            seen[i] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!(
                "checkpoint is missing parameter {}",
                self.params[missing].name
            )));
        }
        Ok(())
    }
}
