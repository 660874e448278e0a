use std::collections::BTreeMap;

use super::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Named, ordered parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Scalar = f32> {
    entries: Vec<(String, Tensor<T>)>,
    index: BTreeMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new(), index: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        let name = name.into();
        match self.index.get(&name) {
            Some(&i) => self.entries[i].1 = value,
            None => {
                self.index.insert(name.clone(), self.entries.len());
                self.entries.push((name, value));
            }
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].1)
            .ok_or_else(|| Error::invalid(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (n, t) in self.iter() {
            out.insert(n, t.cast());
        }
        out
    }

    /// Loads every parameter onto `tape` as a gradient-carrying leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> BoundParams {
        BoundParams {
            vars: self.entries.iter().map(|(n, t)| (n.clone(), tape.param(t.clone()))).collect(),
        }
    }

    /// Loads every parameter as a constant (inference).
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> BoundParams {
        BoundParams {
            vars: self.entries.iter().map(|(n, t)| (n.clone(), tape.constant(t.clone()))).collect(),
        }
    }
}

/// Tape handles of a [`ParamStore`] bound for one forward pass.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("parameter `{name}` not bound")))
    }

    /// Collects gradients by parameter name; missing gradients are zero.
    pub fn grads<T: Scalar>(&self, tape: &Tape<T>, store: &ParamStore<T>) -> Vec<(String, Tensor<T>)> {
        store
            .iter()
            .map(|(name, t)| {
                let g = self
                    .vars
                    .get(name)
                    .and_then(|v| tape.grad(*v))
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(t.shape()));
                (name.to_string(), g)
            })
            .collect()
    }
}
