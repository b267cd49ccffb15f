//! Named trainable arrays and their binding onto a tape.

use rand::Rng;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Dims, Tensor3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Flat, ordered collection of named parameter arrays.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor3>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor3) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        dims: Dims,
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..dims.len()).map(|_| rng.random_range(-bound..=bound)).collect();
        let value = Tensor3::from_vec(dims, data).expect("dims are valid");
        self.add(name, value)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor3 {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor3 {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor3)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values(&self) -> &[Tensor3] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor3] {
        &mut self.values
    }

    /// Total number of trainable scalars.
    pub fn count(&self) -> usize {
        self.values.iter().map(Tensor3::len).sum()
    }

    pub fn checksum(&self) -> u64 {
        self.values
            .iter()
            .fold(0u64, |h, v| h.rotate_left(7) ^ v.checksum())
    }

    /// Overwrite values from `(name, tensor)` pairs; names and dims must match exactly.
    pub fn load_from<'a>(
        &mut self,
        arrays: impl IntoIterator<Item = (&'a str, &'a Tensor3)>,
    ) -> Result<()> {
        let arrays: Vec<_> = arrays.into_iter().collect();
        if arrays.len() != self.values.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter arrays, found {}",
                self.values.len(),
                arrays.len()
            )));
        }
        for (k, (name, value)) in arrays.into_iter().enumerate() {
            if name != self.names[k] {
                return Err(Error::Checkpoint(format!(
                    "parameter {k}: expected `{}`, found `{name}`",
                    self.names[k]
                )));
            }
            if value.dims() != self.values[k].dims() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}`: expected dims {}, found {}",
                    self.values[k].dims(),
                    value.dims()
                )));
            }
            self.values[k] = value.clone();
        }
        Ok(())
    }

    /// Put every parameter on the tape as a gradient-carrying leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.values.iter().map(|v| tape.param(v.clone())).collect(),
        }
    }
}

/// Tape variables for the parameters of one [`ParamStore`].
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    #[inline]
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradients in store order; unreachable parameters get zeros.
    pub fn collect(&self, grads: &mut Gradients, store: &ParamStore) -> Vec<Tensor3> {
        self.vars
            .iter()
            .zip(store.values())
            .map(|(&v, p)| grads.take_or_zeros(v, p.dims()))
            .collect()
    }
}
