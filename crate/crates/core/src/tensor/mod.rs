//! Minimal differentiable engine for 1D feature maps.
//!
//! Everything the networks in this crate need and nothing more: a
//! channels × length [`FeatureMap`], a named flat [`ParameterStore`], a
//! layer-level [`Tape`] that records forward operations and replays their
//! adjoints, and an [`Adam`] optimizer.

mod adam;
pub mod ops;
mod tape;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{Adam, AdamConfig, AdamState};
pub use ops::Activation;
pub use tape::{ConvParams, DenseParams, NodeId, Tape};
pub(crate) use tape::softmax;

/// Dense channels × length array of `f64`, row-major by channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    length: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, length: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || length == 0 {
            return Err(Error::Shape {
                op: "feature_map",
                detail: format!("channels ({channels}) and length ({length}) must be positive"),
            });
        }
        if values.len() != channels * length {
            return Err(Error::Shape {
                op: "feature_map",
                detail: format!(
                    "expected {channels}x{length} = {} values, got {}",
                    channels * length,
                    values.len()
                ),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("feature map value at {pos} is not finite")));
        }
        Ok(Self {
            channels,
            length,
            values,
        })
    }

    /// Single-channel map from a slice.
    pub fn from_row(row: &[f64]) -> Result<Self> {
        Self::new(1, row.len(), row.to_vec())
    }

    pub fn zeros(channels: usize, length: usize) -> Self {
        Self {
            channels,
            length,
            values: vec![0.0; channels * length],
        }
    }

    pub(crate) fn from_raw(channels: usize, length: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), channels * length);
        Self {
            channels,
            length,
            values,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.channels, self.length)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.values[c * self.length..(c + 1) * self.length]
    }

    pub fn get(&self, c: usize, i: usize) -> f64 {
        self.values[c * self.length + i]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Index of an entry in a [`ParameterStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Named flat parameter arrays (kernels, biases, mask logits).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, ParamId>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a zero-initialized parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<ParamId> {
        let count: usize = shape.iter().product();
        self.add_with_values(name, shape, vec![0.0; count])
    }

    pub fn add_with_values(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        values: Vec<f64>,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter name `{name}`")));
        }
        let count: usize = shape.iter().product();
        if count == 0 || values.len() != count {
            return Err(Error::Shape {
                op: "parameter",
                detail: format!(
                    "`{name}` shape {shape:?} holds {count} values, got {}",
                    values.len()
                ),
            });
        }
        let id = ParamId(self.entries.len());
        self.index.insert(name.clone(), id);
        self.entries.push(ParamEntry {
            name,
            shape: shape.to_vec(),
            values,
        });
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn values(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].values
    }

    pub fn values_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.entries[id.0].values
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.id(name).map(|id| self.values(id))
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sum of all entry sizes.
    pub fn total_count(&self) -> usize {
        self.entries.iter().map(|e| e.values.len()).sum()
    }

    /// All values concatenated in registration order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_count());
        for e in &self.entries {
            out.extend_from_slice(&e.values);
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.total_count() {
            return Err(Error::Shape {
                op: "load_flat",
                detail: format!("expected {} values, got {}", self.total_count(), flat.len()),
            });
        }
        let mut offset = 0;
        for e in &mut self.entries {
            let n = e.values.len();
            e.values.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn from_entries(entries: Vec<ParamEntry>) -> Result<Self> {
        let mut store = Self::new();
        for e in entries {
            store.add_with_values(e.name, &e.shape, e.values)?;
        }
        Ok(store)
    }

    pub fn all_finite(&self) -> bool {
        self.entries
            .iter()
            .all(|e| e.values.iter().all(|v| v.is_finite()))
    }
}

/// Gradient arrays keyed like the store they were computed against.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    names: Vec<String>,
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParameterStore) -> Self {
        Self {
            names: store.entries.iter().map(|e| e.name.clone()).collect(),
            grads: store
                .entries
                .iter()
                .map(|e| vec![0.0; e.values.len()])
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub(crate) fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.grads[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.grads[i].as_slice())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.grads.iter().map(Vec::as_slice))
    }

    /// `self += other`, entry by entry.
    pub fn accumulate(&mut self, other: &Gradients) {
        debug_assert_eq!(self.grads.len(), other.grads.len());
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.grads {
            for x in g.iter_mut() {
                *x *= factor;
            }
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.grads.iter().flatten().copied().collect()
    }
}
