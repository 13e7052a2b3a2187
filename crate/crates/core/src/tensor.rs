//! Dense row-major `f64` tensors of rank 1 or 2, and ordered named collections of them.

use serde::{Deserialize, Serialize};

use crate::error::{shape, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err(shape, data.len()));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)` for a matrix.
    pub fn dims2(&self) -> Option<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Some((*r, *c)),
            _ => None,
        }
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|x| *x *= a);
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }
}

fn shape_err(dims: &[usize], len: usize) -> crate::Error {
    shape(format!("shape {dims:?} does not match {len} values"))
}

/// Ordered collection of named tensors. Order is significant: it defines the
/// flattening order used for dot products and serialization.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NamedTensors {
    entries: Vec<(String, Tensor)>,
}

impl NamedTensors {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.entries.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    /// Tensor at position `i` in collection order.
    pub fn at(&self, i: usize) -> &Tensor {
        &self.entries[i].1
    }

    pub fn at_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.entries[i].1
    }

    pub fn name_at(&self, i: usize) -> &str {
        &self.entries[i].0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Concatenation of all tensors in collection order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_values());
        for (_, t) in &self.entries {
            out.extend_from_slice(&t.data);
        }
        out
    }

    /// Flattened dot product; both collections must share names and shapes in order.
    pub fn dot(&self, other: &NamedTensors) -> Result<f64> {
        self.check_conformal(other)?;
        Ok(self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|((_, a), (_, b))| a.dot(b))
            .sum())
    }

    pub fn norm_sq(&self) -> f64 {
        self.entries.iter().map(|(_, t)| t.norm_sq()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(&t.shape)))
                .collect(),
        }
    }

    pub fn axpy(&mut self, a: f64, other: &NamedTensors) -> Result<()> {
        self.check_conformal(other)?;
        for ((_, x), (_, y)) in self.entries.iter_mut().zip(&other.entries) {
            x.axpy(a, y);
        }
        Ok(())
    }

    pub fn check_conformal(&self, other: &NamedTensors) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(shape(format!(
                "{} tensors vs {} tensors",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for ((na, a), (nb, b)) in self.entries.iter().zip(&other.entries) {
            if na != nb || a.shape != b.shape {
                return Err(shape(format!(
                    "{na}{:?} vs {nb}{:?}",
                    a.shape, b.shape
                )));
            }
        }
        Ok(())
    }
}

impl FromIterator<(String, Tensor)> for NamedTensors {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        Self {
            entries: iter.into_iter().collect(),
        }
    }
}
