//! Named trainable-parameter registry.
//!
//! Parameters live outside any tape; each forward pass binds them onto a
//! fresh tape as shared leaves. Insertion order is fixed at construction,
//! which makes initialization, optimizer sweeps, and checkpoints
//! deterministic.

use std::collections::HashMap;
use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Stable handle to one parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

pub struct Params {
    names: Vec<String>,
    tensors: Vec<Rc<Tensor>>,
    index: HashMap<String, usize>,
}

impl Params {
    pub fn new() -> Self {
        Params {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name:?}"
        );
        self.names.push(name.clone());
        self.tensors.push(Rc::new(tensor));
        self.index.insert(name, self.tensors.len() - 1);
        ParamId(self.tensors.len() - 1)
    }

    /// Uniform(-bound, bound) initialization.
    pub fn insert_uniform(
        &mut self,
        rng: &mut impl Rng,
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
    ) -> ParamId {
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = rng.gen_range(-bound..=bound);
        }
        self.insert(name, t)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn total_elems(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    /// Mutable access for optimizer updates. Must not be called while a
    /// tape still shares the tensor; that would force a copy.
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        Rc::make_mut(&mut self.tensors[id.0])
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn set(&mut self, id: ParamId, tensor: Tensor) -> Result<()> {
        if tensor.shape() != self.tensors[id.0].shape() {
            return Err(Error::dim(format!(
                "parameter {:?} has shape {:?}, got {:?}",
                self.names[id.0],
                self.tensors[id.0].shape(),
                tensor.shape()
            )));
        }
        self.tensors[id.0] = Rc::new(tensor);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t.as_ref()))
    }

    /// Bind every parameter onto a tape. `frozen` names are registered
    /// without gradient tracking, so their gradients stay identically
    /// absent (reported as zero).
    pub fn bind(&self, tape: &mut Tape, frozen: impl Fn(&str) -> bool) -> BoundParams {
        let vars = self
            .names
            .iter()
            .zip(&self.tensors)
            .map(|(name, t)| tape.leaf_shared(Rc::clone(t), !frozen(name)))
            .collect();
        BoundParams { vars }
    }
}

impl Default for Params {
    fn default() -> Self {
        Params::new()
    }
}

/// Tape bindings for one forward pass, parallel to the registry.
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    /// Adapter for gradient checks: treat an arbitrary var list as bound
    /// parameters, in registry order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        BoundParams { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradient of a parameter after backward; zeros when the parameter
    /// was frozen or unreached.
    pub fn grad_or_zero(&self, tape: &Tape, params: &Params, id: ParamId) -> Tensor {
        tape.grad(self.vars[id.0])
            .unwrap_or_else(|| Tensor::zeros(params.get(id).shape()))
    }
}
