use alloc::string::String;
use alloc::vec::Vec;

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
struct Param {
    name: String,
    value: Tensor,
    velocity: Vec<f64>,
    grad: Option<Vec<f64>>,
}

/// Named trainable tensors with SGD-with-momentum state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamGroup {
    params: Vec<Param>,
}

impl ParamGroup {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<usize> {
        if self.index_of(name).is_some() {
            return Err(Error::DuplicateParam(name.into()));
        }
        self.params.push(Param {
            name: name.into(),
            velocity: alloc::vec![0.0; value.len()],
            value,
            grad: None,
        });
        Ok(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn name(&self, i: usize) -> &str {
        &self.params[i].name
    }

    pub fn value(&self, i: usize) -> &Tensor {
        &self.params[i].value
    }

    pub fn value_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.params[i].value
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.params[i].value)
    }

    pub fn grad(&self, i: usize) -> Option<&[f64]> {
        self.params[i].grad.as_deref()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|p| (p.name.as_str(), &p.value))
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    /// Records every parameter on the tape, in insertion order.
    pub fn attach(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p.value.clone())).collect()
    }

    /// Copies gradients for the attached variables. Parameters the loss does
    /// not reach get zero gradients.
    pub fn set_grads(&mut self, vars: &[Var], grads: &Gradients) -> Result<()> {
        if vars.len() != self.params.len() {
            return Err(Error::LengthMismatch {
                expected: self.params.len(),
                found: vars.len(),
            });
        }
        for (p, &v) in self.params.iter_mut().zip(vars) {
            p.grad = Some(match grads.get(v) {
                Some(g) => g.to_vec(),
                None => alloc::vec![0.0; p.value.len()],
            });
        }
        Ok(())
    }

    /// Overwrites the gradient of one parameter.
    pub fn set_grad(&mut self, i: usize, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.params[i].value.len() {
            return Err(Error::LengthMismatch {
                expected: self.params[i].value.len(),
                found: grad.len(),
            });
        }
        self.params[i].grad = Some(grad);
        Ok(())
    }

    /// Global gradient L2 norm.
    pub fn grad_norm(&self) -> f64 {
        let s: f64 = self
            .params
            .iter()
            .filter_map(|p| p.grad.as_ref())
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum();
        libm::sqrt(s)
    }

    /// `v ← m·v + g; p ← p − lr·v`, then clears the gradients.
    pub fn sgd_step(&mut self, lr: f64, momentum: f64) -> Result<()> {
        if let Some(p) = self.params.iter().find(|p| p.grad.is_none()) {
            return Err(Error::MissingGrad { name: p.name.clone() });
        }
        for p in &mut self.params {
            let g = p.grad.take().expect("checked above");
            for ((w, v), g) in p.value.data_mut().iter_mut().zip(&mut p.velocity).zip(&g) {
                *v = momentum * *v + g;
                *w -= lr * *v;
            }
        }
        Ok(())
    }

    /// Zeroes the momentum buffers.
    pub fn reset_velocity(&mut self) {
        for p in &mut self.params {
            p.velocity.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}
