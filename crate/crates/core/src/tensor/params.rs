use serde::{Deserialize, Serialize};

use super::Tensor;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    name: String,
    /// Weight matrices take L2 decay, biases do not.
    decay: bool,
    tensor: Tensor,
}

/// Flat registry of trainable tensors. Every parameter appears exactly once.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, tensor: Tensor, decay: bool) -> ParamId {
        self.entries.push(Entry {
            name: name.into(),
            decay,
            tensor,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn decays(&self, id: ParamId) -> bool {
        self.entries[id.0].decay
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (ParamId(i), &e.tensor))
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            let n = e.tensor.len();
            // length always matches, so this cannot fail
            let _ = e.tensor.set_grad(vec![0.0; n]);
        }
    }

    /// Snapshot of all parameter values, used for best-checkpoint tracking.
    pub fn values(&self) -> Vec<Vec<f64>> {
        self.entries.iter().map(|e| e.tensor.data().to_vec()).collect()
    }

    pub fn restore(&mut self, values: &[Vec<f64>]) {
        for (e, v) in self.entries.iter_mut().zip(values) {
            e.tensor.data_mut().copy_from_slice(v);
        }
    }
}
