use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::params::ParameterStore;
use super::tape::{Tape, Var};
use super::NumericsError;

/// Gradients smaller than this are compared on an absolute scale.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub coords_checked: usize,
    pub max_relative_error: f64,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub step: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_relative_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_relative_error() < self.tolerance
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_relative_error.total_cmp(&b.max_relative_error))
    }
}

/// `|a - n| / max(|a|, |n|, floor)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub coords_per_tensor: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            coords_per_tensor: 20,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

/// Compares reverse-mode gradients of `loss_fn` against central finite
/// differences on a random subsample of coordinates of every parameter.
///
/// `loss_fn` must be deterministic (dropout off) and build a scalar loss on
/// the tape it is given.
pub fn grad_check<E, F>(
    loss_fn: F,
    store: &ParameterStore<f64>,
    options: &GradCheckOptions,
) -> Result<GradCheckReport, E>
where
    E: From<NumericsError>,
    F: Fn(&ParameterStore<f64>, &mut Tape<f64>) -> Result<Var, E>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(store, &mut tape)?;
    let grads = tape.backward(loss, store)?;
    drop(tape);

    let eval = |s: &ParameterStore<f64>| -> Result<f64, E> {
        let mut tape = Tape::new();
        let l = loss_fn(s, &mut tape)?;
        Ok(tape.value(l).item()?)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut work = store.clone();
    let mut params = Vec::new();
    for id in store.ids() {
        let numel = store.value(id).numel();
        let k = options.coords_per_tensor.min(numel);
        let coords = sample(&mut rng, numel, k).into_vec();
        let mut check = ParamCheck {
            name: store.name(id).to_string(),
            coords_checked: k,
            max_relative_error: 0.0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        };
        for c in coords {
            let orig = store.value(id).data()[c];
            work.value_mut(id).data_mut()[c] = orig + options.step;
            let plus = eval(&work)?;
            work.value_mut(id).data_mut()[c] = orig - options.step;
            let minus = eval(&work)?;
            work.value_mut(id).data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * options.step);
            let analytic = grads.get(id).data()[c];
            let err = relative_error(analytic, numeric);
            if err >= check.max_relative_error {
                check.max_relative_error = err;
                check.worst_analytic = analytic;
                check.worst_numeric = numeric;
            }
        }
        params.push(check);
    }
    Ok(GradCheckReport {
        tolerance: options.tolerance,
        step: options.step,
        params,
    })
}
