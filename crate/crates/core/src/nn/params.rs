//! Named model parameters and their gradient buffers.

use std::collections::HashMap;

use super::tape::{NodeId, Tape};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a parameter inside a [`ParamSet`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ParamId(pub(crate) usize);

/// A named tensor with a same-shaped gradient buffer.
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Ordered collection of uniquely named parameters. Registration order is
/// fixed, which keeps initialization and checkpointing deterministic.
pub struct ParamSet<T: Scalar> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), index: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        let grad = Tensor::zeros(value.shape().to_vec());
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id.0);
        self.params.push(Parameter { name, value, grad });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].grad
    }

    /// Mutable value and gradient of one parameter, borrowed together.
    pub fn value_and_grad_mut(&mut self, id: ParamId) -> (&mut Tensor<T>, &mut Tensor<T>) {
        let p = &mut self.params[id.0];
        (&mut p.value, &mut p.grad)
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::ZERO);
        }
    }

    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, grad: &Tensor<T>) {
        let dst = self.params[id.0].grad.data_mut();
        for (g, &u) in dst.iter_mut().zip(grad.data()) {
            *g += u;
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        let mut out = ParamSet::new();
        for p in &self.params {
            out.add(p.name.clone(), p.value.cast::<U>()).expect("names already unique");
        }
        out
    }
}

/// Maps parameters to tape leaves for one forward/backward pass. Binding the
/// same parameter twice reuses its leaf so the graph sees a single node.
pub struct TapeBinding {
    bound: Vec<(ParamId, NodeId)>,
}

impl Default for TapeBinding {
    fn default() -> Self {
        Self::new()
    }
}

impl TapeBinding {
    pub fn new() -> Self {
        Self { bound: Vec::new() }
    }

    pub fn bind<T: Scalar>(
        &mut self,
        tape: &mut Tape<T>,
        params: &ParamSet<T>,
        id: ParamId,
    ) -> Result<NodeId> {
        if let Some(&(_, node)) = self.bound.iter().find(|(p, _)| *p == id) {
            return Ok(node);
        }
        let node = tape.leaf(params.value(id).clone())?;
        self.bound.push((id, node));
        Ok(node)
    }

    /// Accumulate tape gradients back into the parameter set after `backward`.
    pub fn collect_grads<T: Scalar>(&self, tape: &Tape<T>, params: &mut ParamSet<T>) {
        for &(pid, node) in &self.bound {
            if let Some(g) = tape.grad(node) {
                params.accumulate_grad(pid, g);
            }
        }
    }

    pub fn bound(&self) -> &[(ParamId, NodeId)] {
        &self.bound
    }
}
