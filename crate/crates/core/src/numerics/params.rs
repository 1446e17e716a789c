use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Index of a parameter inside a [`ParameterSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Ordered, uniquely named parameters, each with a same-shape gradient
/// accumulator. Insertion order is the serialization order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    entries: Vec<Parameter>,
    by_name: HashMap<String, usize>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter name {name}"
            )));
        }
        let grad = Tensor::zeros(value.shape());
        let id = self.entries.len();
        self.by_name.insert(name.clone(), id);
        self.entries.push(Parameter { name, value, grad });
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.entries.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.entries {
            p.grad.fill(0.0);
        }
    }

    pub fn scale_grad(&mut self, factor: f64) {
        for p in &mut self.entries {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// All parameter values concatenated in declaration order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.numel());
        for p in &self.entries {
            out.extend_from_slice(p.value.data());
        }
        out
    }

    pub fn flatten_grad(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.numel());
        for p in &self.entries {
            out.extend_from_slice(p.grad.data());
        }
        out
    }

    /// Overwrites all values from a flat vector in declaration order.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.numel() {
            return Err(Error::Dimension(format!(
                "expected {} parameter values, got {}",
                self.numel(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for p in &mut self.entries {
            let n = p.value.len();
            p.value
                .data_mut()
                .copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Returns a mutable reference to scalar `k` in flattened order.
    pub fn flat_entry_mut(&mut self, mut k: usize) -> &mut f64 {
        for p in &mut self.entries {
            let n = p.value.len();
            if k < n {
                return &mut p.value.data_mut()[k];
            }
            k -= n;
        }
        panic!("flat parameter index out of range");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_grads_match_shapes() {
        let mut ps = ParameterSet::new();
        let a = ps.insert("w", Tensor::zeros(&[2, 3])).unwrap();
        assert!(ps.insert("w", Tensor::zeros(&[1])).is_err());
        assert_eq!(ps.grad(a).shape(), &[2, 3]);
        assert_eq!(ps.id("w"), Some(a));
    }

    #[test]
    fn flat_assignment_round_trips() {
        let mut ps = ParameterSet::new();
        ps.insert("a", Tensor::full(&[2], 1.0)).unwrap();
        ps.insert("b", Tensor::full(&[3], 2.0)).unwrap();
        let flat = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        ps.assign_flat(&flat).unwrap();
        assert_eq!(ps.flatten(), flat);
        *ps.flat_entry_mut(3) = 9.0;
        assert_eq!(ps.flatten()[3], 9.0);
        assert!(ps.assign_flat(&flat[..4]).is_err());
    }
}
