use super::tensor::{Scalar, Tensor};
use crate::error::{structural, Result};

/// Ordered collection of named parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<F> {
    entries: Vec<(String, Tensor<F>)>,
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        ParamStore { entries: Vec::new() }
    }
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<F>) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some((_, t)) => *t = value,
            None => self.entries.push((name, value)),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<F>> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| structural!("missing parameter `{}`", name))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<F>> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| structural!("missing parameter `{}`", name))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<F>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|(n, _)| n.clone()).collect()
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

    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore { entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect() }
    }

    /// Zero-filled store with the same names and shapes.
    pub fn zeros_like(&self) -> Self {
        ParamStore {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), Tensor::zeros(t.shape().to_vec()))).collect(),
        }
    }

    /// Elementwise `self += scale * other`; names and shapes must match.
    pub fn add_scaled(&mut self, other: &ParamStore<F>, scale: F) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(structural!("parameter sets differ in size"));
        }
        for ((n, t), (m, o)) in self.entries.iter_mut().zip(&other.entries) {
            if n != m || t.shape() != o.shape() {
                return Err(structural!("parameter `{}` does not line up with `{}`", n, m));
            }
            t.data_mut().iter_mut().zip(o.data()).for_each(|(x, &y)| *x += scale * y);
        }
        Ok(())
    }
}
