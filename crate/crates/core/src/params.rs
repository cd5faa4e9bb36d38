//! Named parameter blocks shared by the generator, discriminator and optimizer.

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    /// Appends a block and returns its index.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(value);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Puts every block on `g`, as differentiable leaves or as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                if trainable {
                    g.leaf(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect()
    }

    /// Replaces the block called `name`, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let i = self
            .find(name)
            .ok_or_else(|| Error::invalid(format!("no parameter named {name}")))?;
        if self.tensors[i].shape() != value.shape() {
            return Err(Error::shape(format!(
                "parameter {name}: shape {:?} expected, got {:?}",
                self.tensors[i].shape(),
                value.shape()
            )));
        }
        self.tensors[i] = value;
        Ok(())
    }
}
