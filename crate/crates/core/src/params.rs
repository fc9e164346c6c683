//! Named trainable parameters and their binding onto a tape.

use std::collections::HashSet;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A trainable tensor together with its AdamW state.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub first_moment: Tensor,
    pub second_moment: Tensor,
    pub step: u64,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let zeros = Tensor::zeros(value.dims());
        Self { name: name.into(), first_moment: zeros.clone(), second_moment: zeros, value, step: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Ordered collection of uniquely named parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    names: HashSet<String>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if !self.names.insert(name.clone()) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.params.push(Param::new(name, value));
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn find_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Total number of scalar weights.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Replaces every parameter (value and optimizer state) with the entry of the same
    /// name from `other`. Both stores must hold the same names with the same dims.
    pub fn load_from(&mut self, other: Vec<Param>) -> Result<()> {
        if other.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} parameters, model expects {}",
                other.len(),
                self.params.len()
            )));
        }
        for (slot, incoming) in self.params.iter_mut().zip(other) {
            if slot.name != incoming.name || slot.value.dims() != incoming.value.dims() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} {:?} does not match checkpoint entry {} {:?}",
                    slot.name,
                    slot.value.dims(),
                    incoming.name,
                    incoming.value.dims()
                )));
            }
            *slot = incoming;
        }
        Ok(())
    }
}

/// Kaiming-style uniform initialisation scaled by fan-in.
pub fn kaiming_uniform(dims: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / fan_in as f32).sqrt();
    Tensor::from_fn(dims, |_| rng.gen_range(-bound..bound))
}

/// One forward/backward pass: a tape plus lazily bound parameter leaves.
pub struct Session<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
    trainable: bool,
}

impl<'a> Session<'a> {
    /// `trainable = false` records parameters as constants, so no gradients are kept.
    pub fn new(store: &'a ParamStore, trainable: bool) -> Self {
        Self { tape: Tape::new(), store, bound: vec![None; store.len()], trainable }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.leaf(self.store.get(id).value.clone(), self.trainable);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.tape.constant(t)
    }

    /// Gradients per parameter, in store order; unused parameters get zeros.
    pub fn param_grads(&self) -> Vec<Tensor> {
        self.store
            .iter()
            .zip(&self.bound)
            .map(|(p, v)| v.and_then(|v| self.tape.grad(v)).unwrap_or_else(|| Tensor::zeros(p.value.dims())))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.add("a.w", Tensor::zeros(&[2])).unwrap();
        assert!(s.add("a.w", Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn moments_match_value_dims() {
        let p = Param::new("x", Tensor::zeros(&[2, 3, 1]));
        assert_eq!(p.first_moment.dims(), p.value.dims());
        assert_eq!(p.second_moment.dims(), p.value.dims());
    }

    #[test]
    fn session_binds_each_param_once() {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::ones(&[2])).unwrap();
        let mut sess = Session::new(&s, true);
        let a = sess.param(id);
        let b = sess.param(id);
        assert_eq!(a, b);
        let y = sess.tape.add(a, b).unwrap();
        let r = sess.tape.sum(y);
        sess.tape.backward(r).unwrap();
        assert_eq!(sess.param_grads()[0].data(), &[2.0, 2.0]);
    }
}
