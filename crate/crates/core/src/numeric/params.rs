use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

/// Ordered collection of named trainable tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn add_glorot<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| T::lit(rng.gen_range(-bound..bound)))
            .collect();
        self.add(name, Tensor::matrix(rows, cols, data).expect("sized"))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(|s| s.as_str()).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    /// Record every parameter as a trainable leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        Bound(self.tensors.iter().map(|t| tape.param(t.clone())).collect())
    }

    /// Copy values from `other` for every name they share. Shapes must agree.
    pub fn copy_shared_from(&mut self, other: &ParamStore<T>) -> Result<usize> {
        let mut copied = 0;
        for (name, src) in other.iter() {
            if let Some(id) = self.id(name) {
                let dst = &mut self.tensors[id.0];
                if dst.shape() != src.shape() {
                    return Err(Error::Mismatch(format!(
                        "parameter `{}` has shape {:?} in the checkpoint but {:?} in the model",
                        name,
                        src.shape(),
                        dst.shape()
                    )));
                }
                *dst = src.clone();
                copied += 1;
            }
        }
        Ok(copied)
    }

    /// Name -> shape map; handy for architecture comparisons.
    pub fn shapes(&self) -> BTreeMap<String, Vec<usize>> {
        self.iter()
            .map(|(n, t)| (n.to_string(), t.shape().to_vec()))
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
        }
    }
}

/// Tape handles for every parameter of a store, in store order.
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn glorot_bounds_and_seeding() {
        let mut a = ParamStore::<f64>::new();
        let mut b = ParamStore::<f64>::new();
        let id = a.add_glorot("w", 10, 20, 10, 20, &mut ChaCha8Rng::seed_from_u64(3));
        b.add_glorot("w", 10, 20, 10, 20, &mut ChaCha8Rng::seed_from_u64(3));
        let bound = (6.0f64 / 30.0).sqrt();
        assert!(a.get(id).data().iter().all(|v| v.abs() <= bound));
        assert_eq!(a, b);
    }

    #[test]
    fn copy_shared_rejects_shape_change() {
        let mut a = ParamStore::<f32>::new();
        a.add("w", Tensor::zeros(&[2, 3]));
        let mut b = ParamStore::<f32>::new();
        b.add("w", Tensor::zeros(&[3, 3]));
        let msg = a.copy_shared_from(&b).unwrap_err().to_string();
        assert!(msg.contains("[3, 3]") && msg.contains("[2, 3]"), "{msg}");
    }
}
