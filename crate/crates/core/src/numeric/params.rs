use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numeric::{Graph, Real, Tensor, Var};

/// Named trainable tensors in a fixed insertion order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<F> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
    index: HashMap<String, usize>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<F>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::State(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor.with_requires_grad(true));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<F>> {
        self.index
            .get(name)
            .map(|&i| &self.tensors[i])
            .ok_or_else(|| Error::State(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<F>> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.tensors[i]),
            None => Err(Error::State(format!("missing parameter {name}"))),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<F>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Places every parameter on `graph` as a constant, for inference.
    pub fn bind_frozen<'g, 's>(&'s self, graph: &'g Graph<F>) -> BoundParams<'g, 's, F> {
        BoundParams {
            vars: self
                .tensors
                .iter()
                .map(|t| graph.constant(t.clone()))
                .collect(),
            store: self,
        }
    }

    /// Places every parameter on `graph` as a gradient-tracking leaf.
    pub fn bind<'g, 's>(&'s self, graph: &'g Graph<F>) -> BoundParams<'g, 's, F> {
        BoundParams {
            vars: self
                .tensors
                .iter()
                .map(|t| graph.param(t.clone()))
                .collect(),
            store: self,
        }
    }
}

/// Graph leaves for every parameter of a [`ParamStore`].
pub struct BoundParams<'g, 's, F: Real> {
    vars: Vec<Var<'g, F>>,
    store: &'s ParamStore<F>,
}

impl<'g, F: Real> BoundParams<'g, '_, F> {
    pub fn var(&self, name: &str) -> Result<Var<'g, F>> {
        self.store
            .index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::State(format!("missing parameter {name}")))
    }

    pub fn vars(&self) -> &[Var<'g, F>] {
        &self.vars
    }
}
