use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Classifier input with its class index.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Tensor,
    pub label: usize,
}

impl Sample {
    pub fn new(input: Tensor, label: usize) -> Self {
        Self { input, label }
    }
}

/// Ordered class names; a class's index is its position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassSet(Vec<String>);

/// Name of the class that never receives a heatmap in a pipeline run.
pub const HEALTHY: &str = "healthy";

impl ClassSet {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::InvalidArgument("class set is empty".into()));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::InvalidArgument(format!("duplicate class {n:?}")));
            }
        }
        Ok(Self(names))
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.0.iter().position(|n| n == name)
    }

    pub fn name(&self, index: usize) -> &str {
        &self.0[index]
    }

    /// Every class other than [`HEALTHY`] counts as damage.
    pub fn is_damage(&self, index: usize) -> bool {
        self.0.get(index).is_some_and(|n| n != HEALTHY)
    }
}

impl Default for ClassSet {
    fn default() -> Self {
        Self(vec!["broken".into(), "flash".into(), HEALTHY.into()])
    }
}
