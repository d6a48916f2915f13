//! Named, ordered parameter collections.

use crate::error::{Error, Result};
use crate::neuralcore::tensor::Tensor;

/// An insertion-ordered set of named tensors. Order is part of the
/// contract: optimizer updates, gradient checks, and checkpoints all walk
/// parameters in this order, which keeps every consumer deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add a named tensor. Names must be unique within the set.
    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if self.names.iter().any(|n| n == name) {
            return Err(Error::Validation(format!(
                "duplicate parameter name {name:?}"
            )));
        }
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let i = self.index_of(name)?;
        Ok(&mut self.tensors[i])
    }

    pub fn set(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let i = self.index_of(name)?;
        if self.tensors[i].shape() != tensor.shape() {
            return Err(Error::Validation(format!(
                "parameter {name:?} has shape {:?}, replacement has {:?}",
                self.tensors[i].shape(),
                tensor.shape()
            )));
        }
        self.tensors[i] = tensor;
        Ok(())
    }

    fn index_of(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Lookup(format!("no parameter named {name:?}")))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter_mut())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}
