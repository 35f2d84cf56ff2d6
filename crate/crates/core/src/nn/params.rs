use std::cell::RefCell;
use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;

use super::tape::{Grads, Mat, Tape, Var};

/// Handle to one tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
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
        debug_assert!(!self.names.contains(&name), "duplicate parameter name {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Uniform `(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
    pub fn add_xavier(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut impl Rng) -> ParamId {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let value = Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-a..a));
        self.add(name, value)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Array2::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
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

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Set every tensor whose name starts with `prefix` to zero.
    pub fn zero_prefix(&mut self, prefix: &str) -> usize {
        let mut n = 0;
        for (name, v) in self.names.iter().zip(self.values.iter_mut()) {
            if name.starts_with(prefix) {
                v.fill(0.0);
                n += 1;
            }
        }
        n
    }
}

/// Binds a parameter store to a tape, creating each leaf at most once.
pub struct Ctx<'t> {
    pub tape: &'t Tape,
    pub store: &'t ParamStore,
    leaves: RefCell<HashMap<ParamId, Var<'t>>>,
}

impl<'t> Ctx<'t> {
    pub fn new(tape: &'t Tape, store: &'t ParamStore) -> Self {
        Self { tape, store, leaves: RefCell::new(HashMap::new()) }
    }

    pub fn param(&self, id: ParamId) -> Var<'t> {
        self.leaves.borrow_mut().entry(id).or_insert_with(|| self.tape.leaf(self.store.get(id).clone())).clone()
    }

    pub fn constant(&self, value: Mat) -> Var<'t> {
        self.tape.leaf(value)
    }

    /// Gradient for every parameter, zero where the loss does not depend on it.
    pub fn param_grads(&self, grads: &Grads) -> Vec<Mat> {
        let leaves = self.leaves.borrow();
        self.store
            .ids()
            .map(|id| {
                leaves
                    .get(&id)
                    .and_then(|v| grads.get(v))
                    .cloned()
                    .unwrap_or_else(|| Mat::zeros(self.store.get(id).dim()))
            })
            .collect()
    }
}
