use std::collections::BTreeMap;

use crate::error::{Result, TensorError};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// Named trainable tensors. Iteration order is the lexical order of names,
/// which keeps checkpoints and optimizer state stable across runs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T = f32> {
    params: BTreeMap<String, Tensor<T>>,
}

/// Name → tape node mapping for one forward pass.
#[derive(Clone, Debug, Default)]
pub struct Bindings {
    vars: BTreeMap<String, Var>,
}

impl Bindings {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| TensorError::argument("bindings", format!("no parameter named {name:?}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self { params: BTreeMap::new() }
    }

    /// Inserts a trainable tensor (its `requires_grad` flag is set).
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        self.params.insert(name.into(), tensor.with_requires_grad());
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bindings {
        let vars = self.params.iter().map(|(k, t)| (k.clone(), tape.leaf(t))).collect();
        Bindings { vars }
    }

    /// Records every parameter as a constant, for forward-only passes.
    pub fn bind_constants(&self, tape: &mut Tape<T>) -> Bindings {
        let vars = self.params.iter().map(|(k, t)| (k.clone(), tape.constant(t.clone()))).collect();
        Bindings { vars }
    }

    pub fn zero_grad(&mut self) {
        self.params.values_mut().for_each(Tensor::zero_grad);
    }

    /// Adds the gradients of one backward sweep into each parameter's accumulator.
    pub fn accumulate(&mut self, bindings: &Bindings, grads: &Gradients<T>) -> Result<()> {
        for (name, var) in bindings.iter() {
            let Some(param) = self.params.get_mut(name) else { continue };
            if !param.requires_grad() {
                continue;
            }
            match grads.get(var) {
                Some(g) => param.accumulate_grad(g)?,
                // unreachable from the loss: contributes zero
                None => param.accumulate_grad(&vec![T::zero(); param.len()])?,
            }
        }
        Ok(())
    }

    /// Runs the reverse sweep from `loss` and accumulates into the parameters.
    pub fn backward(&mut self, tape: &Tape<T>, loss: Var, bindings: &Bindings) -> Result<()> {
        let grads = tape.backward(loss)?;
        self.accumulate(bindings, &grads)
    }

    /// Multiplies every accumulated gradient by `factor`.
    pub fn scale_grads(&mut self, factor: T) {
        for p in self.params.values_mut() {
            if let Some(g) = p.grad_mut() {
                g.iter_mut().for_each(|x| *x *= factor);
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet { params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    /// Restricts to parameters whose name starts with `prefix`.
    pub fn filter_prefix(&self, prefix: &str) -> ParamSet<T> {
        ParamSet {
            params: self
                .params
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }
}
