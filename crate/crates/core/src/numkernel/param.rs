use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A named learnable tensor together with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    id: String,
    value: Tensor,
    grad: Tensor,
}

impl Param {
    pub fn new(id: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param {
            id: id.into(),
            value,
            grad,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn grad(&self) -> &Tensor {
        &self.grad
    }

    pub fn set_value(&mut self, value: Tensor) -> Result<()> {
        if value.shape() != self.value.shape() {
            return Err(Error::shape("set_value", self.value.shape(), value.shape()));
        }
        self.value = value;
        Ok(())
    }

    pub(crate) fn value_mut(&mut self) -> &mut [f64] {
        self.value.data_mut()
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [f64], &[f64]) {
        (self.value.data_mut(), self.grad.data())
    }
}

/// Ordered collection of parameters. Order is part of the checkpoint contract.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    /// Appends a parameter and returns its index.
    pub fn push(&mut self, param: Param) -> Result<usize> {
        if self.index_of(param.id()).is_some() {
            return Err(Error::invalid(format!("duplicate parameter id {}", param.id())));
        }
        self.params.push(param);
        Ok(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn get(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Param {
        &mut self.params[idx]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.params.iter().position(|p| p.id == id)
    }

    pub fn by_id(&self, id: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.id == id)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Records every parameter value as a leaf; the returned vars follow set order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.value.clone())).collect()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Adds the gradients of `bound` vars into the parameter grads.
    pub fn accumulate(&mut self, grads: &mut Gradients, bound: &[Var]) {
        for (p, &v) in self.params.iter_mut().zip(bound) {
            if let Some(g) = grads.take(v) {
                p.grad.add_assign(&g);
            }
        }
    }

    /// Adds a detached per-parameter gradient list (same order as the set).
    pub fn accumulate_tensors(&mut self, grads: &[Tensor], weight: f64) {
        for (p, g) in self.params.iter_mut().zip(grads) {
            for (a, b) in p.grad.data_mut().iter_mut().zip(g.data()) {
                *a += weight * b;
            }
        }
    }

    /// Runs the reverse pass and returns one gradient tensor per parameter.
    pub fn collect_grads(&self, tape: &Tape, loss: Var, bound: &[Var]) -> Result<Vec<Tensor>> {
        let mut grads = tape.backward(loss)?;
        Ok(self
            .params
            .iter()
            .zip(bound)
            .map(|(p, &v)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.value.shape())))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grad_shape_tracks_value_and_zeroes() {
        let mut set = ParamSet::new();
        set.push(Param::new("w", Tensor::full(&[2, 3], 1.0))).unwrap();
        assert!(set.push(Param::new("w", Tensor::zeros(&[1, 1]))).is_err());
        let mut tape = Tape::new();
        let bound = set.bind(&mut tape);
        let s = tape.sum(bound[0]).unwrap();
        let mut g = tape.backward(s).unwrap();
        set.accumulate(&mut g, &bound);
        assert_eq!(set.get(0).grad().shape(), set.get(0).value().shape());
        assert!(set.get(0).grad().data().iter().all(|&v| v == 1.0));
        set.zero_grad();
        assert!(set.get(0).grad().data().iter().all(|&v| v == 0.0));
        assert!(set.get_mut(0).set_value(Tensor::zeros(&[3, 2])).is_err());
    }
}
