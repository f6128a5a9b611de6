//! Named parameter storage and per-tape binding.

use std::cell::RefCell;
use std::collections::HashMap;

use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
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
    /// State that is saved with the model but never receives gradients
    /// (batch-norm running statistics).
    Buffer,
}

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
}

/// Flat, ordered store of every tensor a model owns.
#[derive(Clone, Debug, Default)]
pub struct Params {
    entries: Vec<ParamEntry>,
    by_name: HashMap<String, ParamId>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: &str, kind: ParamKind, value: Tensor) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_owned(),
            kind,
            value,
        });
        self.by_name.insert(name.to_owned(), id);
        id
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        self.insert(name, ParamKind::Trainable, value)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor) -> ParamId {
        self.insert(name, ParamKind::Buffer, value)
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

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    /// Total number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable)
            .map(|e| e.value.len())
            .sum()
    }
}

/// Lazily places parameters on a tape, at most once each.
///
/// Binding the same [`ParamId`] twice yields the same [`Var`], so a weight
/// shared between two call sites accumulates both gradient contributions.
pub struct Binder<'t, 'p> {
    tape: &'t Tape,
    params: &'p Params,
    requires_grad: bool,
    bound: RefCell<HashMap<ParamId, Var<'t>>>,
}

impl<'t, 'p> Binder<'t, 'p> {
    /// Binds trainable parameters as differentiable leaves.
    pub fn new(tape: &'t Tape, params: &'p Params) -> Self {
        Self {
            tape,
            params,
            requires_grad: true,
            bound: RefCell::default(),
        }
    }

    /// Binds everything as constants (inference).
    pub fn frozen(tape: &'t Tape, params: &'p Params) -> Self {
        Self {
            requires_grad: false,
            ..Self::new(tape, params)
        }
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn params(&self) -> &'p Params {
        self.params
    }

    pub fn var(&self, id: ParamId) -> Var<'t> {
        if let Some(v) = self.bound.borrow().get(&id) {
            return *v;
        }
        let entry = self.params.entry(id);
        let value = entry.value.clone();
        let v = if self.requires_grad && entry.kind == ParamKind::Trainable {
            self.tape.leaf(value)
        } else {
            self.tape.constant(value)
        };
        self.bound.borrow_mut().insert(id, v);
        v
    }

    /// Gradients of every bound trainable parameter, ordered by id.
    pub fn collect(&self, grads: &Gradients) -> Vec<(ParamId, Tensor)> {
        let bound = self.bound.borrow();
        let mut out: Vec<_> = bound
            .iter()
            .filter(|(id, _)| self.params.entry(**id).kind == ParamKind::Trainable)
            .filter_map(|(id, v)| grads.wrt(*v).map(|g| (*id, g.clone())))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}
