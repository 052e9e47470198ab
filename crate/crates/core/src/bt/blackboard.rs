use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geom::Cell;

/// Values a blackboard entry may hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BbValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
    Coord(Cell),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("blackboard key `{0}` is not set")]
pub struct UnsetKey(pub String);

/// Key-value store shared by every node of one tree.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Blackboard {
    entries: BTreeMap<String, BbValue>,
}

impl Blackboard {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: impl Into<String>, value: BbValue) {
        self.entries.insert(key.into(), value);
    }

    pub fn get(&self, key: &str) -> Result<&BbValue, UnsetKey> {
        self.entries.get(key).ok_or_else(|| UnsetKey(key.to_string()))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &BbValue)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
