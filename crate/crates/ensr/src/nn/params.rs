//! Named parameter storage. Parameters live outside any tape; each
//! training step binds them onto a fresh tape as leaves and applies
//! updates back here. BTreeMap keeps every iteration order fixed.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use std::collections::BTreeMap;

/// Parameter name -> tape var, as produced by [`ParamStore::bind`].
pub type VarMap = BTreeMap<String, Var>;

#[derive(Default, Clone)]
pub struct ParamStore {
    map: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        assert!(
            self.map.insert(name.to_string(), t).is_none(),
            "duplicate parameter {}",
            name
        );
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {}", name))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {}", name))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.map.values().map(Tensor::numel).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Leafs every parameter onto `tape`, returning name -> var.
    pub fn bind(&self, tape: &Tape) -> BTreeMap<String, Var> {
        self.map
            .iter()
            .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
            .collect()
    }
}
