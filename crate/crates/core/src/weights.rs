//! Symbolic weight registry and concrete weight assignments.

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a symbolic weight θ inside a [`WeightTable`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WeightId(pub u32);

impl WeightId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Names and initial values of every symbolic weight known to a program.
///
/// Weights are shared by name: interning the same name twice yields the
/// same id, which is how a θ that appears at several sites stays one
/// parameter.
#[derive(Clone, Debug, Default)]
pub struct WeightTable {
    names: Vec<String>,
    init: Vec<f64>,
    by_name: FxHashMap<String, WeightId>,
}

impl WeightTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id for `name`, registering it with `init` if it is new.
    pub fn intern(&mut self, name: &str, init: f64) -> WeightId {
        if let Some(&id) = self.by_name.get(name) {
            return id;
        }
        let id = WeightId(self.names.len() as u32);
        self.names.push(name.to_string());
        self.init.push(init);
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<WeightId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: WeightId) -> &str {
        &self.names[id.index()]
    }

    pub fn init_value(&self, id: WeightId) -> f64 {
        self.init[id.index()]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = WeightId> + '_ {
        (0..self.names.len() as u32).map(WeightId)
    }

    /// Number of weights whose name starts with `prefix`.
    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.names.iter().filter(|n| n.starts_with(prefix)).count()
    }

    /// The assignment holding every weight's initial value.
    pub fn initial(&self) -> WeightAssignment {
        WeightAssignment(self.init.clone())
    }

    /// Builds an assignment from `(name, value)` pairs; unnamed weights keep
    /// their initial values and unknown names are an error.
    pub fn assignment_from_pairs<'a>(
        &self,
        pairs: impl IntoIterator<Item = (&'a str, f64)>,
    ) -> Result<WeightAssignment> {
        let mut w = self.initial();
        for (name, value) in pairs {
            let id = self
                .get(name)
                .ok_or_else(|| Error::Config(format!("unknown weight `{name}`")))?;
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::WeightRange(value));
            }
            w.0[id.index()] = value;
        }
        Ok(w)
    }

    /// Name-keyed view of an assignment, in id order.
    pub fn named<'a>(&'a self, w: &'a WeightAssignment) -> impl Iterator<Item = (&'a str, f64)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(w.0.iter().copied())
    }
}

/// Concrete value for every symbolic weight, indexed by [`WeightId`].
#[derive(Clone, Debug, PartialEq)]
pub struct WeightAssignment(pub Vec<f64>);

impl WeightAssignment {
    pub fn uniform(len: usize, value: f64) -> Self {
        WeightAssignment(vec![value; len])
    }

    pub fn get(&self, id: WeightId) -> f64 {
        self.0[id.index()]
    }

    pub fn set(&mut self, id: WeightId, value: f64) {
        self.0[id.index()] = value;
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Fails unless every weight up to `needed` is present and in `[0, 1]`.
    pub fn check(&self, needed: usize) -> Result<()> {
        if self.0.len() < needed {
            return Err(Error::WeightArity {
                needed,
                got: self.0.len(),
            });
        }
        match self.0.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            Some(&bad) => Err(Error::WeightRange(bad)),
            None => Ok(()),
        }
    }
}
