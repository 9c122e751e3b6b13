//! Named parameter storage and per-tape bindings.

use std::collections::HashMap;

use rand::Rng;

use crate::autodiff::{Shape, Tape, Tensor, Var};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    name: String,
    tensor: Tensor,
    trainable: bool,
}

/// Ordered collection of named arrays. Insertion order is the stable
/// serialization order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Panics on a duplicate name.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Entry {
            name,
            tensor,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (ParamId(i), e.name.as_str(), &e.tensor))
    }

    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.shape().len()).sum()
    }
}

/// Uniform `[-bound, bound]` initialization.
pub fn uniform(shape: Shape, bound: f64, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound))
}

/// Per-parameter gradient buffers aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    slots: Vec<Option<Vec<f64>>>,
}

impl Grads {
    pub fn new(store: &ParamStore) -> Self {
        Grads {
            slots: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.slots[id.0].as_deref()
    }

    pub fn add(&mut self, id: ParamId, g: &[f64]) {
        match &mut self.slots[id.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    /// Adds `other` slot by slot.
    pub fn merge(&mut self, other: &Grads) {
        for (i, slot) in other.slots.iter().enumerate() {
            if let Some(g) = slot {
                self.add(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.slots.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Flattened gradient over `ids` (missing slots count as zeros).
    pub fn flatten(&self, store: &ParamStore, ids: &[ParamId]) -> Vec<f64> {
        let mut out = Vec::new();
        for &id in ids {
            match self.get(id) {
                Some(g) => out.extend_from_slice(g),
                None => out.extend(std::iter::repeat_n(0.0, store.get(id).shape().len())),
            }
        }
        out
    }
}

/// A tape plus lazily created leaves for the parameters it touches.
pub struct Session<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
}

impl<'a> Session<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Session {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    /// Leaf for `id`, created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.leaf(self.store.get(id).clone());
        self.bound[id.0] = Some(v);
        v
    }

    /// Leaves of all trainable parameters, binding any not yet used.
    pub fn trainable_params(&mut self) -> Vec<Var> {
        let ids: Vec<ParamId> = self.store.ids().filter(|&id| self.store.is_trainable(id)).collect();
        ids.into_iter().map(|id| self.param(id)).collect()
    }

    /// Gradients of every bound parameter after `backward`.
    pub fn grads(&self) -> Grads {
        let mut grads = Grads::new(self.store);
        for (i, v) in self.bound.iter().enumerate() {
            if let Some(v) = v {
                if self.tape.has_grad(*v) {
                    grads.add(ParamId(i), &self.tape.grad(*v));
                }
            }
        }
        grads
    }
}

/// Finite-difference check of a model-level scalar against [`Session`]
/// gradients, over the parameters `ids` of `store`.
///
/// Same error measure as [`crate::autodiff::finite_difference_check`].
pub fn finite_difference_params<F>(store: &ParamStore, ids: &[ParamId], f: F, eps: f64) -> f64
where
    F: Fn(&mut Session<'_>) -> Var,
{
    let mut sess = Session::new(store);
    let out = f(&mut sess);
    sess.tape.backward(out).expect("scalar output");
    let grads = sess.grads();
    let eval = |probe: &ParamStore| {
        let mut s = Session::new(probe);
        let out = f(&mut s);
        s.tape.scalar(out)
    };
    let mut probe = store.clone();
    let mut worst: f64 = 0.0;
    for &id in ids {
        let analytic = grads.flatten(store, &[id]);
        for (k, &a) in analytic.iter().enumerate() {
            let original = store.get(id).data()[k];
            probe.get_mut(id).data_mut()[k] = original + eps;
            let plus = eval(&probe);
            probe.get_mut(id).data_mut()[k] = original - eps;
            let minus = eval(&probe);
            probe.get_mut(id).data_mut()[k] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max((a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn session_binds_once_and_collects() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::vector(vec![1.0, 2.0]), true);
        let unused = store.add("u", Tensor::scalar(0.0), true);
        let mut s = Session::new(&store);
        let a = s.param(w);
        let b = s.param(w);
        assert_eq!(a, b);
        let sq = s.tape.mul(a, a).unwrap();
        let y = s.tape.sum(sq).unwrap();
        s.tape.backward(y).unwrap();
        let g = s.grads();
        assert_eq!(g.get(w), Some(&[2.0, 4.0][..]));
        assert_eq!(g.get(unused), None);
        assert_eq!(g.flatten(&store, &[unused, w]), vec![0.0, 2.0, 4.0]);
    }

    #[test]
    fn names_resolve() {
        let mut store = ParamStore::new();
        let id = store.add("enc.w", Tensor::scalar(1.0), false);
        assert_eq!(store.find("enc.w"), Some(id));
        assert_eq!(store.name(id), "enc.w");
        assert!(!store.is_trainable(id));
        assert_eq!(store.find("missing"), None);
    }
}
