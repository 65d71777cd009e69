use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a tensor held by a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Role of a parameter; the l2 penalty only touches `Weight`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
    Embedding,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
}

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            kind,
            value,
        });
        ParamId(self.entries.len() - 1)
    }

    /// Glorot-uniform weight. `shape` is `[fan_in, fan_out]` or `[positions, fan_in, fan_out]`.
    pub fn weight<R: Rng + ?Sized>(&mut self, name: impl Into<String>, shape: &[usize], rng: &mut R) -> ParamId {
        let (fan_in, fan_out) = match shape {
            [i, o] => (*i, *o),
            [_, i, o] => (*i, *o),
            _ => panic!("weight must be rank 2 or 3, got {shape:?}"),
        };
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite glorot limit");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        self.insert(name, ParamKind::Weight, Tensor::new(shape.to_vec(), data).expect("sized"))
    }

    pub fn bias(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.insert(name, ParamKind::Bias, Tensor::zeros(shape))
    }

    /// Embedding table drawn from N(0, 0.01).
    pub fn embedding<R: Rng + ?Sized>(&mut self, name: impl Into<String>, rows: usize, dim: usize, rng: &mut R) -> ParamId {
        let dist = Normal::new(0.0, 0.01).expect("valid sd");
        let data = (0..rows * dim).map(|_| dist.sample(rng)).collect();
        self.insert(
            name,
            ParamKind::Embedding,
            Tensor::matrix(rows, dim, data).expect("sized"),
        )
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Overwrite every tensor from `other`, which must have identical names and shapes.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.entries.len() != self.entries.len() {
            return Err(Error::Contract(format!(
                "parameter count mismatch: {} vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (dst, src) in self.entries.iter_mut().zip(&other.entries) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(Error::shape("copy_from", dst.value.shape(), src.value.shape()));
            }
            dst.value = src.value.clone();
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.value.is_finite())
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }
}
