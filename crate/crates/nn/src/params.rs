//! Named parameter storage.

use indexmap::IndexMap;
use ndarray::ArrayD;

use crate::tape::{Gradients, Tape, Var};
use crate::Float;

/// Ordered collection of named tensors. Iteration order is insertion order,
/// which keeps serialisation and optimisation deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<F> {
    tensors: IndexMap<String, ArrayD<F>>,
}

impl<F: Float> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { tensors: IndexMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: ArrayD<F>) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<F>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ArrayD<F>> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<F>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    /// Converts every tensor to another float type.
    pub fn cast<G: Float>(&self) -> ParamStore<G> {
        let mut out = ParamStore::new();
        for (k, v) in &self.tensors {
            out.insert(k.clone(), v.mapv(|e| G::c(e.to_f64_lossy())));
        }
        out
    }

    /// Places every tensor on `tape` as a differentiable input.
    pub fn bind(&self, tape: &mut Tape<F>) -> BoundParams {
        self.bind_with(tape, true)
    }

    /// Places every tensor on `tape` as a constant.
    pub fn bind_const(&self, tape: &mut Tape<F>) -> BoundParams {
        self.bind_with(tape, false)
    }

    fn bind_with(&self, tape: &mut Tape<F>, trainable: bool) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| {
                let var = if trainable {
                    tape.param(v.clone())
                } else {
                    tape.constant(v.clone())
                };
                (k.clone(), var)
            })
            .collect();
        BoundParams { vars }
    }
}

/// Tape handles for a bound [`ParamStore`].
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: IndexMap<String, Var>,
}

impl BoundParams {
    /// Handle for `name`. Panics if the parameter was never registered,
    /// which is a model-construction bug rather than a data error.
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` is not bound"))
    }

    pub fn try_var(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    /// Gradients keyed by parameter name. Parameters the loss did not reach
    /// get a zero gradient.
    pub fn collect_grads<F: Float>(
        &self,
        tape: &Tape<F>,
        grads: &mut Gradients<F>,
    ) -> IndexMap<String, ArrayD<F>> {
        self.vars
            .iter()
            .map(|(k, &v)| {
                let g = grads
                    .take(v)
                    .unwrap_or_else(|| ArrayD::zeros(tape.value(v).raw_dim()));
                (k.clone(), g)
            })
            .collect()
    }
}
