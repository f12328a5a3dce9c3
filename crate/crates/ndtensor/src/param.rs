use std::collections::BTreeMap;

use crate::error::{Result, TensorError};
use crate::{Scalar, Tape, Tensor, Var};

/// Named parameter tensors. Iteration order is the lexicographic name order,
/// which keeps every traversal (binding, optimizer updates, serialization)
/// deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore<T: Scalar = f32> {
    params: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParameterStore<T> {
    pub fn new() -> Self {
        Self { params: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(TensorError::DuplicateParameter(name));
        }
        self.params.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.params.get(name).ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params.get_mut(name).ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    /// Total number of scalar parameters.
    pub fn count_params(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParameterStore<U> {
        ParameterStore {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Records every parameter on `tape` as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bindings {
        Bindings {
            vars: self.params.iter().map(|(k, v)| (k.clone(), tape.param(v.clone()))).collect(),
        }
    }

    /// Gradients of the last backward pass, keyed like the store. Parameters
    /// the loss never touched get zeros.
    pub fn gradients(&self, tape: &Tape<T>, bindings: &Bindings) -> Result<BTreeMap<String, Tensor<T>>> {
        self.params
            .iter()
            .map(|(name, value)| {
                let var = bindings.get(name)?;
                let g = tape.grad(var).unwrap_or_else(|| Tensor::zeros(value.shape().to_vec()));
                Ok((name.clone(), g))
            })
            .collect()
    }
}

/// Parameter name → tape variable for one recorded forward pass.
#[derive(Clone, Debug, Default)]
pub struct Bindings {
    vars: BTreeMap<String, Var>,
}

impl Bindings {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

impl FromIterator<(String, Var)> for Bindings {
    fn from_iter<I: IntoIterator<Item = (String, Var)>>(iter: I) -> Self {
        Self {
            vars: iter.into_iter().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_elements() {
        let mut store = ParameterStore::<f32>::new();
        assert_eq!(store.count_params(), 0);
        store.insert("w", Tensor::zeros([3, 3])).unwrap();
        store.insert("b", Tensor::zeros([3])).unwrap();
        assert_eq!(store.count_params(), 12);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParameterStore::<f32>::new();
        store.insert("w", Tensor::zeros([1])).unwrap();
        assert!(store.insert("w", Tensor::zeros([1])).is_err());
        assert!(matches!(store.get("nope"), Err(TensorError::UnknownParameter(_))));
    }
}
