use std::collections::HashMap;

use rand::{Rng, RngExt};
use rand_distr::{Distribution, Normal};

use super::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named parameter tensors in registration order.
#[derive(Debug, Clone)]
pub struct ParamStore<S> {
    names: Vec<String>,
    values: Vec<Tensor<S>>,
    index: HashMap<String, ParamId>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        ParamStore { names: Vec::new(), values: Vec::new(), index: HashMap::new() }
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor<S>) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter `{name}`");
        let id = ParamId(self.values.len());
        self.names.push(name.to_string());
        self.values.push(value);
        self.index.insert(name.to_string(), id);
        id
    }

    /// Weight matrix used as `x * W`, uniform in +-1/sqrt(fan_in).
    pub fn matrix<R: Rng + ?Sized>(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| S::c(rng.random_range(-bound..bound))).collect();
        self.add(name, Tensor::from_vec(fan_in, fan_out, data))
    }

    pub fn bias(&mut self, name: &str, n: usize) -> ParamId {
        self.add(name, Tensor::zeros(1, n))
    }

    /// Embedding table with entries drawn from N(0, 0.1).
    pub fn embedding<R: Rng + ?Sized>(&mut self, name: &str, rows: usize, dim: usize, rng: &mut R) -> ParamId {
        let normal = Normal::new(0.0, 0.1).expect("valid normal");
        let data = (0..rows * dim).map(|_| S::c(normal.sample(rng))).collect();
        self.add(name, Tensor::from_vec(rows, dim, data))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.values[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Converts every tensor to another scalar type.
    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for (n, v) in self.names.iter().zip(&self.values) {
            let data = v.data().iter().map(|x| T::c(x.f64())).collect();
            out.add(n, Tensor::from_vec(v.rows(), v.cols(), data));
        }
        out
    }
}

/// Per-parameter gradients; `None` means zero.
#[derive(Debug, Clone)]
pub struct Grads<S> {
    pub(crate) slots: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Grads<S> {
    pub fn zeros_like(store: &ParamStore<S>) -> Self {
        Grads { slots: vec![None; store.len()] }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<S>> {
        self.slots.get(id.0).and_then(Option::as_ref)
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Tensor<S>) {
        if self.slots.len() <= id.0 {
            self.slots.resize(id.0 + 1, None);
        }
        match &mut self.slots[id.0] {
            Some(t) => t.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }

    /// Adds `other` into `self`, slot by slot.
    pub fn merge(&mut self, other: &Grads<S>) {
        for (i, g) in other.slots.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, s: S) {
        for t in self.slots.iter_mut().flatten() {
            t.scale_assign(s);
        }
    }

    pub fn global_norm(&self) -> S {
        self.slots.iter().flatten().map(Tensor::sum_sq).sum::<S>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.slots.iter().flatten().all(Tensor::all_finite)
    }
}
