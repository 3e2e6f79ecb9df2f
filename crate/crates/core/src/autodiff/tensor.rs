use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Dense `f32` array with an optional gradient buffer of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f32>,
    grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::contract(format!("invalid tensor shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::contract(format!(
                "shape {shape:?} needs {n} values, got {}",
                values.len()
            )));
        }
        Ok(Self {
            shape,
            values,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f32>) -> Result<()> {
        if grad.len() != self.values.len() {
            return Err(Error::contract("gradient shape differs from tensor"));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Rows and columns when viewed as a matrix; vectors are one row.
    pub fn matrix_dims(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            other => {
                let c = *other.last().unwrap();
                (self.values.len() / c, c)
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
            && self
                .grad
                .as_ref()
                .is_none_or(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// Named parameters, iterated in sorted id order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, tensor: Tensor) -> Result<()> {
        let id = id.into();
        if self.tensors.contains_key(&id) {
            return Err(Error::contract(format!("duplicate parameter id `{id}`")));
        }
        self.tensors.insert(id, tensor);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Tensor> {
        self.tensors.get(id)
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(id)
    }

    pub fn require(&self, id: &str) -> Result<&Tensor> {
        self.tensors
            .get(id)
            .ok_or_else(|| Error::contract(format!("unknown parameter `{id}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        for t in self.tensors.values_mut() {
            let n = t.len();
            t.grad = Some(vec![0.0; n]);
        }
    }

    pub fn clear_grads(&mut self) {
        for t in self.tensors.values_mut() {
            t.clear_grad();
        }
    }

    /// Global L2 norm over all present gradients.
    pub fn grad_norm(&self) -> f64 {
        self.tensors
            .values()
            .filter_map(|t| t.grad.as_ref())
            .flat_map(|g| g.iter())
            .map(|&g| (g as f64) * (g as f64))
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales gradients so their global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let scale = (max_norm / norm) as f32;
            for g in self.tensors.values_mut().filter_map(|t| t.grad.as_mut()) {
                g.iter_mut().for_each(|v| *v *= scale);
            }
        }
        norm
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::all_finite)
    }
}
