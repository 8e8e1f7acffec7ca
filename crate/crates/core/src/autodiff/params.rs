use std::collections::BTreeMap;

use super::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Named trainable tensors. Iteration order is the lexicographic name order,
/// which keeps checkpoints and optimizer updates deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    params: BTreeMap<String, Tensor>,
}

/// Parameters recorded as leaves on a tape for one forward pass.
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Invalid(format!("duplicate parameter {name}")));
        }
        self.params.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Records every parameter whose name passes `trainable` as a
    /// gradient-carrying leaf; all others become constants.
    pub fn bind(&self, tape: &mut Tape, trainable: impl Fn(&str) -> bool) -> Result<BoundParams> {
        let mut vars = BTreeMap::new();
        for (name, value) in &self.params {
            let var = tape.leaf(value.clone(), trainable(name))?;
            vars.insert(name.clone(), var);
        }
        Ok(BoundParams { vars })
    }

    /// Binds only the parameters passing `include`, all trainable.
    pub fn bind_only(&self, tape: &mut Tape, include: impl Fn(&str) -> bool) -> Result<BoundParams> {
        let mut vars = BTreeMap::new();
        for (name, value) in self.params.iter().filter(|(n, _)| include(n)) {
            vars.insert(name.clone(), tape.leaf(value.clone(), true)?);
        }
        Ok(BoundParams { vars })
    }

    /// Checks that `other` holds exactly the same names and shapes.
    pub fn check_compatible(&self, other: &ParameterStore) -> Result<()> {
        for (name, t) in &self.params {
            match other.params.get(name) {
                None => return Err(Error::Invalid(format!("missing parameter {name}"))),
                Some(o) if o.shape() != t.shape() => {
                    return Err(Error::shape(
                        "parameters",
                        format!("{name}: expected {:?}, got {:?}", t.shape(), o.shape()),
                    ))
                }
                _ => {}
            }
        }
        if let Some(extra) = other.params.keys().find(|k| !self.params.contains_key(*k)) {
            return Err(Error::Invalid(format!("unexpected parameter {extra}")));
        }
        Ok(())
    }
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::Invalid(format!("unknown parameter {name}")))
    }

    /// Gradients of the trainable parameters keyed by name. Parameters that do
    /// not influence the loss get zero gradients.
    pub fn named_gradients(&self, tape: &Tape, grads: &Gradients) -> BTreeMap<String, Vec<f64>> {
        self.vars
            .iter()
            .filter(|(_, &v)| tape.requires_grad(v))
            .map(|(name, &v)| {
                let g = grads.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; tape.value(v).len()]);
                (name.clone(), g)
            })
            .collect()
    }
}

/// Adds `src` into `dst` entry by entry, inserting missing names.
pub fn accumulate_gradients(dst: &mut BTreeMap<String, Vec<f64>>, src: BTreeMap<String, Vec<f64>>) {
    for (name, g) in src {
        match dst.get_mut(&name) {
            Some(d) => d.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            None => {
                dst.insert(name, g);
            }
        }
    }
}
