use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParameterStore};
use super::tensor::Scalar;
use super::NumericsError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), NumericsError> {
        let ok = self.learning_rate > 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0
            && self.batch_size > 0;
        if ok {
            Ok(())
        } else {
            Err(NumericsError::InvalidArgument(format!(
                "invalid optimizer config {self:?}"
            )))
        }
    }
}

/// One bias-corrected Adam update of every parameter in `store`.
pub fn adam_step<T: Scalar>(
    store: &mut ParameterStore<T>,
    grads: &Gradients<T>,
    config: &OptimizerConfig,
) -> Result<(), NumericsError> {
    config.validate()?;
    if grads.len() != store.len() {
        let missing = store.len().min(grads.len());
        return Err(NumericsError::MissingGradient(
            store
                .ids()
                .nth(missing)
                .map(|id| store.name(id).to_string())
                .unwrap_or_default(),
        ));
    }
    for id in store.ids().collect::<Vec<_>>() {
        let g = grads.get(id);
        if g.shape() != store.value(id).shape() {
            return Err(NumericsError::MissingGradient(store.name(id).to_string()));
        }
    }

    let b1 = config.beta1;
    let b2 = config.beta2;
    for id in store.ids().collect::<Vec<_>>() {
        let g = grads.get(id);
        let (value, state) = store.value_and_state_mut(id);
        state.step += 1;
        let t = state.step as i32;
        let corr1 = 1.0 - b1.powi(t);
        let corr2 = 1.0 - b2.powi(t);
        let step_size = T::from_f64_lossy(config.learning_rate / corr1);
        let corr2_sqrt = T::from_f64_lossy(corr2.sqrt());
        let eps = T::from_f64_lossy(config.epsilon);
        let (b1t, b2t) = (T::from_f64_lossy(b1), T::from_f64_lossy(b2));
        let m = state.first_moment.data_mut();
        let v = state.second_moment.data_mut();
        for (((p, &gi), mi), vi) in value.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mi = b1t * *mi + (T::one() - b1t) * gi;
            *vi = b2t * *vi + (T::one() - b2t) * gi * gi;
            // p -= lr · m̂ / (sqrt(v̂) + ε), with m̂ = m / corr1 and v̂ = v / corr2
            *p = *p - step_size * *mi / ((*vi).sqrt() / corr2_sqrt + eps);
        }
    }
    Ok(())
}
