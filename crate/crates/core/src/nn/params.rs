use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{NetworkSpec, NnError, Tensor};
use crate::scalar::Scalar;

/// Named weight and bias tensors of one network, in layer order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters<T> {
    entries: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> Parameters<T> {
    /// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self, NnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries = IndexMap::new();
        for (name, shape, fan_in) in spec.parameter_layout()? {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let t = Tensor::from_fn(shape, |_| T::lit(rng.gen_range(-bound..=bound)));
            entries.insert(name, t);
        }
        Ok(Self { entries })
    }

    pub fn zeros(spec: &NetworkSpec) -> Result<Self, NnError> {
        Ok(Self {
            entries: spec
                .parameter_layout()?
                .into_iter()
                .map(|(name, shape, _)| (name, Tensor::zeros(shape)))
                .collect(),
        })
    }

    /// Zero tensors with the same names and shapes as `self`.
    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape().to_vec())))
                .collect(),
        }
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (String, Tensor<T>)>) -> Self {
        Self { entries: entries.into_iter().collect() }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name)
    }

    pub(crate) fn require(&self, name: &str) -> Result<&Tensor<T>, NnError> {
        self.entries.get(name).ok_or_else(|| NnError::MissingParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar values across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// True when both hold the same names with the same shapes, in the same order.
    pub fn same_layout(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(other.entries.iter())
                .all(|((ka, va), (kb, vb))| ka == kb && va.shape() == vb.shape())
    }

    /// Checks that the names and shapes are exactly those `spec` prescribes.
    pub fn check_against(&self, spec: &NetworkSpec) -> Result<(), NnError> {
        let layout = spec.parameter_layout()?;
        if layout.len() != self.entries.len() {
            return Err(NnError::KeyMismatch(format!(
                "spec defines {} parameter tensors, found {}",
                layout.len(),
                self.entries.len()
            )));
        }
        for (name, shape, _) in layout {
            let t = self.require(&name)?;
            if t.shape() != shape.as_slice() {
                return Err(NnError::ShapeMismatch {
                    layer: name,
                    detail: format!("expected {shape:?}, found {:?}", t.shape()),
                });
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(Tensor::all_finite)
    }

    pub fn cast<U: Scalar>(&self) -> Parameters<U> {
        Parameters { entries: self.entries.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }
}
