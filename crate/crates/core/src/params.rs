//! Named parameter registry shared by the models and the optimizer.

use crate::autodiff::{Graph, TapeError, Tensor, Var};
use crate::scalar::Scalar;

/// Index of a tensor inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// An ordered, named collection of parameter tensors. Order is stable, so
/// checkpoints, optimizer state, and gradient vectors all align by index.
#[derive(Debug, Clone)]
pub struct ParamSet<S> {
    names: Vec<String>,
    tensors: Vec<Tensor<S>>,
}

impl<S: Scalar> Default for ParamSet<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<S>) -> ParamId {
        let id = ParamId(self.tensors.len());
        self.names.push(name.into());
        self.tensors.push(tensor);
        id
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter())
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.tensors
    }

    pub fn tensors(&self) -> &[Tensor<S>] {
        &self.tensors
    }

    /// Total number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Register every parameter as a graph leaf. `trainable` controls
    /// whether gradients are tracked (scoring paths bind frozen).
    pub fn bind(&self, g: &mut Graph<S>, trainable: bool) -> Result<Bound, TapeError> {
        let mut vars = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            vars.push(g.leaf(t.clone(), trainable)?);
        }
        Ok(Bound { vars })
    }
}

/// Graph handles for every parameter of a [`ParamSet`], aligned by index.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Dense per-parameter gradients, aligned with a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct GradSet<S> {
    pub grads: Vec<Vec<S>>,
}

impl<S: Scalar> GradSet<S> {
    pub fn zeros_like(params: &ParamSet<S>) -> Self {
        GradSet {
            grads: params.tensors.iter().map(|t| vec![S::zero(); t.len()]).collect(),
        }
    }

    /// Collect gradients for every bound parameter after a backward pass.
    pub fn from_graph(g: &Graph<S>, bound: &Bound) -> Self {
        GradSet {
            grads: bound.vars.iter().map(|&v| g.grad_or_zeros(v)).collect(),
        }
    }

    /// Elementwise `self += other`, in index order.
    pub fn add_assign(&mut self, other: &GradSet<S>) {
        for (dst, src) in self.grads.iter_mut().zip(&other.grads) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = *d + s;
            }
        }
    }

    pub fn scale(&mut self, c: S) {
        for g in &mut self.grads {
            for v in g.iter_mut() {
                *v = *v * c;
            }
        }
    }
}
