//! Named parameter storage and its binding onto a tape.

use std::collections::HashMap;

use crate::autograd::{Tape, Var};
use crate::error::{config_err, Result};
use crate::rng::CounterRng;
use crate::tensor::{numel, Tensor};

/// Learning-rate group a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Base,
    Prompt,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    pub group: ParamGroup,
}

/// Insertion-ordered set of named, trainable tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor, group: ParamGroup) {
        let tensor = tensor.with_grad();
        match self.index.get(name) {
            Some(&i) => self.params[i] = Param { name: name.to_string(), tensor, group },
            None => {
                self.index.insert(name.to_string(), self.params.len());
                self.params.push(Param { name: name.to_string(), tensor, group });
            }
        }
    }

    pub fn insert_normal(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut CounterRng) {
        let t = Tensor::from_parts(shape.to_vec(), rng.normal_vec(numel(shape), std));
        self.insert(name, t, ParamGroup::Base);
    }

    pub fn insert_const(&mut self, name: &str, shape: &[usize], value: f64) {
        self.insert(name, Tensor::full(shape, value), ParamGroup::Base);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.params[i].tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.params[i].tensor)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count, optionally restricted to a name prefix.
    pub fn count(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.tensor.len())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.clear_grad());
    }

    /// Places every parameter on `tape` as a gradient-tracking leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let vars = self.params.iter().map(|p| tape.leaf(&p.tensor)).collect();
        Bound::new(self.params.iter().map(|p| p.name.clone()).collect(), vars)
    }

    /// Places every parameter on `tape` as a constant (no gradient tracking).
    pub fn bind_constants(&self, tape: &mut Tape) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| tape.constant(p.tensor.shape().to_vec(), p.tensor.data().to_vec()))
            .collect();
        Bound::new(self.params.iter().map(|p| p.name.clone()).collect(), vars)
    }

    /// Adds the gradients a backward pass left on `tape` into the stored tensors.
    pub fn accumulate(&mut self, bound: &Bound, tape: &Tape) {
        for p in &mut self.params {
            if let Some(v) = bound.try_get(&p.name) {
                if let Some(g) = tape.grad(v) {
                    p.tensor.accumulate_grad(g);
                }
            }
        }
    }
}

/// Parameter name to tape variable.
#[derive(Debug, Clone, Default)]
pub struct Bound {
    vars: HashMap<String, Var>,
}

impl Bound {
    pub fn new(names: Vec<String>, vars: Vec<Var>) -> Self {
        Self {
            vars: names.into_iter().zip(vars).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.try_get(name)
            .ok_or_else(|| config_err(format!("parameter '{}' is not part of this model", name)))
    }

    pub fn try_get(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }
}
