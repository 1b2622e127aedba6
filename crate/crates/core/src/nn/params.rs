use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// State such as batch-norm running statistics.
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub kind: ParamKind,
}

/// Named tensors owned by a model, in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, kind: ParamKind) -> ParamId {
        let name = name.into();
        assert!(
            self.find(&name).is_none(),
            "duplicate parameter name '{name}'"
        );
        self.entries.push(ParamEntry { name, value, kind });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable)
            .map(|e| e.value.numel())
            .sum()
    }

    /// Replaces the value of `id`, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "param update",
                expected: entry.value.shape().to_vec(),
                got: value.shape().to_vec(),
            });
        }
        entry.value = value;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One forward pass: a fresh tape plus lazily bound parameters.
///
/// Parameters are read from the store and never mutated during the pass.
/// Buffer updates (batch-norm running statistics) are queued and applied by
/// the caller with [`ParamStore`] access once the step is committed.
pub struct Session<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
    mode: Mode,
    updates: Vec<(ParamId, Tensor)>,
}

impl<'a> Session<'a> {
    pub fn new(store: &'a ParamStore, mode: Mode) -> Self {
        Self {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
            mode,
            updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    /// Tape variable for a trainable parameter, bound on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let entry = self.store.entry(id);
        let v = self
            .tape
            .leaf(entry.value.clone(), entry.kind == ParamKind::Trainable);
        self.bound[id.0] = Some(v);
        v
    }

    /// Parameters bound so far in this pass.
    pub fn bound_params(&self) -> Vec<ParamId> {
        self.bound
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_some())
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    pub fn buffer(&self, id: ParamId) -> &'a Tensor {
        self.store.get(id)
    }

    pub fn queue_update(&mut self, id: ParamId, value: Tensor) {
        self.updates.push((id, value));
    }

    pub fn take_updates(&mut self) -> Vec<(ParamId, Tensor)> {
        std::mem::take(&mut self.updates)
    }

    /// Runs backward and gathers gradients for every trainable parameter.
    ///
    /// Parameters not touched by this pass get zero gradients.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        self.tape.backward(loss)?;
        let mut grads = Vec::with_capacity(self.store.len());
        for (id, entry) in self.store.ids().zip(self.store.entries()) {
            grads.push(match (entry.kind, self.bound[id.0]) {
                (ParamKind::Buffer, _) => None,
                (ParamKind::Trainable, Some(v)) => Some(self.tape.grad(v)?),
                (ParamKind::Trainable, None) => Some(Tensor::zeros(entry.value.shape())),
            });
        }
        Ok(Gradients(grads))
    }
}

/// Gradients aligned with a [`ParamStore`]; `None` for buffers.
#[derive(Clone, Debug)]
pub struct Gradients(Vec<Option<Tensor>>);

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self(
            store
                .entries()
                .iter()
                .map(|e| (e.kind == ParamKind::Trainable).then(|| Tensor::zeros(e.value.shape())))
                .collect(),
        )
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.0[id.0].as_ref()
    }

    pub fn iter(&self) -> impl Iterator<Item = Option<&Tensor>> {
        self.0.iter().map(Option::as_ref)
    }

    /// Adds `other * weight` into `self`.
    pub fn accumulate(&mut self, other: &Gradients, weight: f64) {
        for (mine, theirs) in self.0.iter_mut().zip(&other.0) {
            if let (Some(a), Some(b)) = (mine.as_mut(), theirs.as_ref()) {
                a.data_mut()
                    .iter_mut()
                    .zip(b.data())
                    .for_each(|(x, y)| *x += weight * y);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn session_binds_each_param_once() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::from_vec(vec![2.0]), ParamKind::Trainable);
        let unused = store.add("u", Tensor::from_vec(vec![1.0, 1.0]), ParamKind::Trainable);
        let buf = store.add("b", Tensor::from_vec(vec![5.0]), ParamKind::Buffer);
        assert_eq!(store.num_trainable(), 3);

        let mut s = Session::new(&store, Mode::Train);
        let a = s.param(w);
        let b = s.param(w);
        assert_eq!(a, b);
        let p = s.tape.mul(a, b).unwrap();
        let loss = s.tape.sum(p);
        let grads = s.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[4.0]);
        assert_eq!(grads.get(unused).unwrap().data(), &[0.0, 0.0]);
        assert!(grads.get(buf).is_none());
    }

    #[test]
    #[should_panic(expected = "duplicate")]
    fn names_are_unique() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::scalar(0.0), ParamKind::Trainable);
        store.add("w", Tensor::scalar(0.0), ParamKind::Trainable);
    }
}
