//! An ordered, named collection of parameter tensors.
//!
//! The insertion order is part of the contract: optimizers walk entries in
//! order, and the checkpoint container serializes them in order, which keeps
//! runs bitwise reproducible.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        debug_assert!(
            self.get(&name).is_none(),
            "duplicate parameter name {name}"
        );
        self.entries.push((name, tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn take(&self, name: &str) -> Result<Tensor> {
        self.get(name)
            .cloned()
            .ok_or_else(|| Error::Format(format!("missing parameter `{name}`")))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    /// Checks that `other` has the same names and shapes in the same order.
    pub fn check_aligned(&self, other: &ParamSet, op: &'static str) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::invalid(format!(
                "{op}: parameter sets have {} vs {} entries",
                self.len(),
                other.len()
            )));
        }
        for ((na, ta), (nb, tb)) in self.entries.iter().zip(&other.entries) {
            if na != nb {
                return Err(Error::invalid(format!(
                    "{op}: parameter name mismatch `{na}` vs `{nb}`"
                )));
            }
            if ta.shape() != tb.shape() {
                return Err(Error::ShapeMismatch {
                    op,
                    lhs: ta.shape().to_vec(),
                    rhs: tb.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(Tensor::is_finite)
    }

    /// First entry containing a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.iter()
            .find(|(_, t)| !t.is_finite())
            .map(|(n, _)| n)
    }
}

impl FromIterator<(String, Tensor)> for ParamSet {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        ParamSet {
            entries: iter.into_iter().collect(),
        }
    }
}
