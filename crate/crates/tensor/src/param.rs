use crate::scalar::Scalar;
use crate::tape::{Gradients, Tape};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable tensors together with their accumulated gradients.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<F> {
    names: Vec<String>,
    values: Vec<Tensor<F>>,
    grads: Vec<Tensor<F>>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        let id = ParamId(self.values.len());
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        self.names.push(name.into());
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<F> {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.grads[id.0]
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(|v| v.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|x| *x = F::zero());
        }
    }

    /// Adds `scale * dL/dparam` for every parameter bound on `tape`.
    pub fn accumulate(&mut self, tape: &Tape<F>, grads: &Gradients<F>, scale: F) {
        for (id, var) in tape.bound_params() {
            if let Some(g) = grads.get(var) {
                for (acc, &x) in self.grads[id.0].data_mut().iter_mut().zip(g) {
                    *acc += scale * x;
                }
            }
        }
    }

    pub(crate) fn values_and_grads_mut(&mut self) -> (&mut [Tensor<F>], &[Tensor<F>]) {
        (&mut self.values, &self.grads)
    }

    /// Copies parameter values from `other`, which must have the same layout.
    pub fn copy_values_from(&mut self, other: &ParamStore<F>) {
        debug_assert_eq!(self.names, other.names);
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            dst.data_mut().copy_from_slice(src.data());
        }
    }
}
