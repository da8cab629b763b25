use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Named parameter tensors in declaration order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.push((name.into(), t));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().map(Tensor::numel).sum()
    }

    /// Registers every tensor in `g`, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.tensors()
            .map(|t| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.input(t.clone())
                }
            })
            .collect()
    }

    /// Sum of squares of all entries.
    pub fn squared_norm(&self) -> f64 {
        self.tensors()
            .flat_map(|t| t.data().iter())
            .map(|v| v * v)
            .sum()
    }
}

/// Deterministic parameter initialiser: weights `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`,
/// biases zero.
pub(crate) struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub(crate) fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub(crate) fn uniform(&mut self, shape: Vec<usize>, fan_in: usize) -> Result<Tensor> {
        if fan_in == 0 || shape.contains(&0) {
            return Err(Error::invalid(format!("zero-width layer {shape:?}")));
        }
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| self.rng.random_range(-bound..=bound))
            .collect();
        Tensor::new(shape, data)
    }

    pub(crate) fn zeros(&self, shape: Vec<usize>) -> Result<Tensor> {
        if shape.contains(&0) {
            return Err(Error::invalid(format!("zero-width layer {shape:?}")));
        }
        Ok(Tensor::zeros(shape))
    }
}
