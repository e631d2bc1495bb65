//! Named parameter storage and its binding onto a tape.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;
use core::ops::Deref;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Flat, ordered list of named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Real = f32> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.values.iter_mut()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
        }
    }

    /// Replaces every value with the same-named, same-shaped entry of
    /// `other`. Fails without modifying `self` if any entry is missing or
    /// differently shaped.
    pub fn assign_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        let mut order = Vec::with_capacity(self.len());
        for (name, value) in self.iter() {
            let id = other
                .find(name)
                .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))?;
            if other.get(id).shape() != value.shape() {
                return Err(Error::Config(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    other.get(id).shape(),
                    value.shape()
                )));
            }
            order.push(id);
        }
        for (dst, id) in self.values.iter_mut().zip(order) {
            *dst = other.get(id).clone();
        }
        Ok(())
    }
}

/// Creates named, randomly initialized parameters under a dotted prefix.
pub struct ParamBuilder<'a, T: Real> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a, T: Real> ParamBuilder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn scope(&mut self, name: &str) -> ParamBuilder<'_, T> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        ParamBuilder {
            store: &mut *self.store,
            rng: &mut *self.rng,
            prefix,
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        self.rng
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        self.store.add(full, value)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::ones(shape))
    }

    /// Normal(0, std) samples redrawn until they fall within two standard
    /// deviations.
    pub fn trunc_normal(&mut self, name: &str, shape: &[usize], std: f64) -> ParamId {
        let rng = &mut *self.rng;
        let value = Tensor::from_fn(shape, |_| loop {
            let z: f64 = rng.sample(StandardNormal);
            if z.abs() <= 2.0 {
                break T::lit(z * std);
            }
        });
        self.add(name, value)
    }

    /// Uniform on `[-bound, bound]`.
    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> ParamId {
        let rng = &mut *self.rng;
        let value = Tensor::from_fn(shape, |_| T::lit(rng.random_range(-bound..=bound)));
        self.add(name, value)
    }
}

/// A tape together with lazily bound parameters for one forward pass.
///
/// Derefs to the [`Tape`], so operations are called directly on it.
pub struct Graph<'a, T: Real> {
    tape: &'a Tape<T>,
    params: &'a ParamStore<T>,
    bound: RefCell<Vec<Option<Var<T>>>>,
}

impl<'a, T: Real> Graph<'a, T> {
    pub fn new(tape: &'a Tape<T>, params: &'a ParamStore<T>) -> Self {
        Self {
            tape,
            params,
            bound: RefCell::new(vec![None; params.len()]),
        }
    }

    pub fn tape(&self) -> &'a Tape<T> {
        self.tape
    }

    pub fn params(&self) -> &'a ParamStore<T> {
        self.params
    }

    /// The tape leaf for a parameter, created on first use.
    pub fn param(&self, id: ParamId) -> Var<T> {
        let mut bound = self.bound.borrow_mut();
        bound[id.0]
            .get_or_insert_with(|| self.tape.leaf(self.params.get(id).clone()))
            .clone()
    }

    /// Gradient for every parameter, in store order. Parameters that were
    /// never used or do not influence the loss get `None`.
    pub fn param_grads(&self, grads: &mut Gradients<T>) -> Vec<Option<Tensor<T>>> {
        self.bound
            .borrow()
            .iter()
            .map(|v| v.as_ref().and_then(|v| grads.take(v)))
            .collect()
    }
}

impl<T: Real> Deref for Graph<'_, T> {
    type Target = Tape<T>;

    fn deref(&self) -> &Tape<T> {
        self.tape
    }
}
