//! Named learnable tensors and their binding onto a tape.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Weight initialized uniformly in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn add_weight(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> ParamId {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Mat::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..=bound));
        self.add(name, w)
    }

    pub fn add_bias(&mut self, name: impl Into<String>, width: usize) -> ParamId {
        self.add(name, Mat::zeros(1, width))
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

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn values(&self) -> &[Mat] {
        &self.values
    }

    pub fn total_len(&self) -> usize {
        self.values.iter().map(|v| v.data().len()).sum()
    }

    /// Replaces all values, checking names and shapes match one to one.
    pub fn assign_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.names.len() != self.names.len() {
            return Err(Error::param(format!(
                "parameter count mismatch: expected {}, found {}",
                self.names.len(),
                other.names.len()
            )));
        }
        for (i, name) in self.names.iter().enumerate() {
            if &other.names[i] != name {
                return Err(Error::param(format!(
                    "parameter {i}: expected tensor '{name}', found '{}'",
                    other.names[i]
                )));
            }
            if other.values[i].shape() != self.values[i].shape() {
                let (r, c) = self.values[i].shape();
                let (r2, c2) = other.values[i].shape();
                return Err(Error::param(format!(
                    "tensor '{name}': expected shape {r}x{c}, found {r2}x{c2}"
                )));
            }
        }
        self.values.clone_from(&other.values);
        Ok(())
    }

    /// Puts every parameter on the tape as a leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.values.iter().map(|v| tape.leaf(v.clone())).collect(),
        }
    }

    pub fn zeros_like(&self) -> Vec<Mat> {
        self.values.iter().map(|v| Mat::zeros(v.rows(), v.cols())).collect()
    }
}

/// Tape variables for every parameter of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Per-parameter gradients in store order, zero where unreachable.
    pub fn gradients(&self, store: &ParamStore, grads: &Gradients) -> Vec<Mat> {
        self.vars
            .iter()
            .zip(store.values())
            .map(|(&v, m)| grads.get_or_zeros(v, m.shape()))
            .collect()
    }
}

impl std::ops::Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}
