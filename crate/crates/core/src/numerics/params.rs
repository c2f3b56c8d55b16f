use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use super::NumericsError;

/// Index of a parameter inside a [`ParameterStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Adam moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub first_moment: Tensor<T>,
    pub second_moment: Tensor<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    fn fresh(shape: &[usize]) -> Self {
        Self {
            first_moment: Tensor::zeros(shape),
            second_moment: Tensor::zeros(shape),
            step: 0,
        }
    }
}

/// Named learnable tensors plus their optimizer state.
///
/// Insertion order is stable and defines [`ParamId`]s; shapes never change
/// after insertion.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore<T> {
    names: Vec<String>,
    index: HashMap<String, ParamId>,
    values: Vec<Tensor<T>>,
    adam: Vec<AdamState<T>>,
}

impl<T: Scalar> Default for ParameterStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParameterStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            index: HashMap::new(),
            values: Vec::new(),
            adam: Vec::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId, NumericsError> {
        if self.index.contains_key(name) {
            return Err(NumericsError::DuplicateParameter(name.to_string()));
        }
        value.dims2()?;
        let id = ParamId(self.values.len());
        self.adam.push(AdamState::fresh(value.shape()));
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        self.values.push(value);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<ParamId, NumericsError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| NumericsError::UnknownParameter(name.to_string()))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>, NumericsError> {
        Ok(self.value(self.id(name)?))
    }

    /// Replaces a parameter's value. The shape must match.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<(), NumericsError> {
        if value.shape() != self.values[id.0].shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "set_parameter",
                left: self.values[id.0].shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn set_by_name(&mut self, name: &str, value: Tensor<T>) -> Result<(), NumericsError> {
        let id = self.id(name)?;
        self.set(id, value)
    }

    pub(crate) fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub(crate) fn value_and_state_mut(
        &mut self,
        id: ParamId,
    ) -> (&mut Tensor<T>, &mut AdamState<T>) {
        (&mut self.values[id.0], &mut self.adam[id.0])
    }

    pub fn adam_state(&self, id: ParamId) -> &AdamState<T> {
        &self.adam[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Drops all Adam moments and step counts.
    pub fn reset_optimizer_state(&mut self) {
        for (state, value) in self.adam.iter_mut().zip(&self.values) {
            *state = AdamState::fresh(value.shape());
        }
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        Gradients {
            grads: self
                .values
                .iter()
                .map(|v| Tensor::zeros(v.shape()))
                .collect(),
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Same names and values in another precision; optimizer state is reset.
    pub fn cast<U: Scalar>(&self) -> ParameterStore<U> {
        let mut out = ParameterStore::new();
        for (name, value) in self.iter() {
            out.insert(name, value.cast()).expect("names are unique");
        }
        out
    }
}

/// One gradient tensor per parameter, aligned with the store's [`ParamId`]s.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    grads: Vec<Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: &Tensor<T>) -> Result<(), NumericsError> {
        let slot = self
            .grads
            .get_mut(id.0)
            .ok_or_else(|| NumericsError::UnknownParameter(format!("#{}", id.0)))?;
        if slot.shape() != g.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "accumulate_gradient",
                left: slot.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        slot.add_assign(g);
        Ok(())
    }

    /// `self += factor · other`
    pub fn add_scaled(&mut self, other: &Gradients<T>, factor: T) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_scaled_assign(b, factor);
        }
    }

    pub fn scale(&mut self, factor: T) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|v| *v = *v * factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.data())
            .map(|v| {
                let x = v.to_f64().unwrap_or(0.0);
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Glorot-uniform matrix: entries in `(-r, r)` with `r = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Scalar, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> Tensor<T> {
    let r = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| T::from_f64_lossy(rng.gen_range(-r..r)))
        .collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches")
}

/// Standard normal entries times `scale`.
pub fn scaled_normal<T: Scalar, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    scale: f64,
    rng: &mut R,
) -> Tensor<T> {
    let data = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::from_f64_lossy(scale * z)
        })
        .collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches")
}
