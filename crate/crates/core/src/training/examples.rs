use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{normalize, truncate_observations, ForecastSample, Normalizer, TimeSeriesSample};
use crate::error::{Error, Result};
use crate::model::{ForwardMode, Stochastic, StratsModel};
use crate::numerics::{Gradients, Scalar, Tape, Tensor, Var};

use super::loss::{cross_entropy_loss, masked_mse_loss};

/// A normalized, truncated labeled stay.
#[derive(Debug, Clone)]
pub struct TargetExample {
    pub sample: TimeSeriesSample,
    pub label: u8,
}

/// A normalized, truncated observation window with its forecast target.
#[derive(Debug, Clone)]
pub struct ForecastExample {
    pub sample: TimeSeriesSample,
    pub mask: Vec<f64>,
    pub values: Vec<f64>,
}

/// Something that contributes one loss term per sample.
pub trait Example: Sync {
    fn record_loss<T: Scalar>(
        &self,
        model: &StratsModel<T>,
        tape: &mut Tape<T>,
        train: Option<&mut Stochastic<'_>>,
    ) -> Result<Var>;
}

impl Example for TargetExample {
    fn record_loss<T: Scalar>(
        &self,
        model: &StratsModel<T>,
        tape: &mut Tape<T>,
        train: Option<&mut Stochastic<'_>>,
    ) -> Result<Var> {
        let vars = model.forward_on_tape(tape, &self.sample, ForwardMode::Target, train)?;
        cross_entropy_loss(tape, vars.logit.expect("target mode"), &[self.label])
    }
}

impl Example for ForecastExample {
    fn record_loss<T: Scalar>(
        &self,
        model: &StratsModel<T>,
        tape: &mut Tape<T>,
        train: Option<&mut Stochastic<'_>>,
    ) -> Result<Var> {
        let vars = model.forward_on_tape(tape, &self.sample, ForwardMode::Forecast, train)?;
        let row = |v: &[f64]| Tensor::row(v.iter().map(|&x| T::from_f64_lossy(x)).collect());
        masked_mse_loss(
            tape,
            vars.forecast.expect("forecast mode"),
            &row(&self.values),
            &row(&self.mask),
        )
    }
}

/// Normalizes labeled stays for the target task. Unlabeled and empty stays
/// are skipped; long stays keep their latest `max_observations` triplets.
pub fn prepare_target(
    samples: &[TimeSeriesSample],
    normalizer: &Normalizer,
    max_observations: usize,
) -> Result<Vec<TargetExample>> {
    samples
        .iter()
        .filter(|s| s.label.is_some() && !s.triplets.is_empty())
        .map(|s| {
            let sample = normalize(&truncate_observations(s, max_observations), normalizer)?;
            Ok(TargetExample {
                label: s.label.expect("filtered"),
                sample,
            })
        })
        .collect()
}

/// Normalizes forecast windows (whose targets are already normalized).
pub fn prepare_forecast(
    windows: &[ForecastSample],
    normalizer: &Normalizer,
    max_observations: usize,
) -> Result<Vec<ForecastExample>> {
    windows
        .iter()
        .map(|w| {
            Ok(ForecastExample {
                sample: normalize(
                    &truncate_observations(&w.base, max_observations),
                    normalizer,
                )?,
                mask: w.mask_as_f64(),
                values: w.forecast_values.clone(),
            })
        })
        .collect()
}

/// Deterministic seed for one batch.
pub(crate) fn mix_seed(seed: u64, epoch: u64, batch: u64) -> u64 {
    let mut z = seed
        .wrapping_add(epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(batch.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mean loss over `batch` and its gradient, one tape per sample.
///
/// Samples run in parallel; their gradients are summed in batch order, so
/// the result does not depend on the number of threads. With `seed = None`
/// dropout is off.
pub fn batch_gradients<T: Scalar, E: Example>(
    model: &StratsModel<T>,
    batch: &[&E],
    seed: Option<u64>,
) -> Result<(f64, Gradients<T>)> {
    if batch.is_empty() {
        return Err(Error::Training("empty batch".into()));
    }
    let config = model.config();
    let per_sample: Vec<Result<(f64, Gradients<T>)>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, example)| {
            let mut tape = Tape::new();
            let loss = match seed {
                Some(seed) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(i as u64);
                    let mut stochastic = Stochastic {
                        rng: &mut rng,
                        dropout_rate: config.dropout_rate,
                        attention_dropout_rate: config.attention_dropout_rate,
                    };
                    example.record_loss(model, &mut tape, Some(&mut stochastic))?
                }
                None => example.record_loss(model, &mut tape, None)?,
            };
            let value = tape.value(loss).item()?.to_f64().unwrap_or(f64::NAN);
            Ok((value, tape.backward(loss, model.params())?))
        })
        .collect();
    let mut total = 0.0;
    let mut grads = model.params().zero_gradients();
    for result in per_sample {
        let (loss, g) = result?;
        total += loss;
        grads.add_scaled(&g, T::one());
    }
    let inv = 1.0 / batch.len() as f64;
    grads.scale(T::from_f64_lossy(inv));
    Ok((total * inv, grads))
}

/// Evaluation-mode mean loss over `examples`.
pub fn mean_loss<T: Scalar, E: Example>(model: &StratsModel<T>, examples: &[E]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Training("no examples to evaluate".into()));
    }
    let losses: Vec<Result<f64>> = examples
        .par_iter()
        .map(|e| {
            let mut tape = Tape::new();
            let loss = e.record_loss(model, &mut tape, None)?;
            Ok(tape.value(loss).item()?.to_f64().unwrap_or(f64::NAN))
        })
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / examples.len() as f64)
}

/// Target-task probabilities for every example, in order.
pub fn predict<T: Scalar>(model: &StratsModel<T>, examples: &[TargetExample]) -> Result<Vec<f64>> {
    examples
        .par_iter()
        .map(|e| {
            let out = model.forward(&e.sample, ForwardMode::Target)?;
            Ok(out.target_probability.expect("target mode"))
        })
        .collect()
}

/// Per-variable masked MSE over forecast examples: the mean squared error
/// at observed coordinates (`None` where a variable is never observed).
pub fn forecast_error_by_variable<T: Scalar>(
    model: &StratsModel<T>,
    examples: &[ForecastExample],
) -> Result<Vec<Option<f64>>> {
    let nv = model.config().n_variables;
    let predictions: Vec<Result<Vec<f64>>> = examples
        .par_iter()
        .map(|e| {
            Ok(model
                .forward(&e.sample, ForwardMode::Forecast)?
                .forecast
                .expect("forecast mode"))
        })
        .collect();
    let mut sums = vec![0.0; nv];
    let mut counts = vec![0usize; nv];
    for (e, p) in examples.iter().zip(predictions) {
        let p = p?;
        for j in 0..nv {
            if e.mask[j] > 0.0 {
                sums[j] += (p[j] - e.values[j]).powi(2);
                counts[j] += 1;
            }
        }
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| (c > 0).then(|| s / c as f64))
        .collect())
}
