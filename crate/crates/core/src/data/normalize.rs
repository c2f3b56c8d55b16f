use serde::{Deserialize, Serialize};

use super::{DataError, TimeSeriesSample};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: f64,
    pub std: f64,
}

impl FeatureStats {
    pub const IDENTITY: FeatureStats = FeatureStats {
        mean: 0.0,
        std: 1.0,
    };

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    /// Population mean and standard deviation; zero variance maps to std 1.
    fn fit(values: impl Iterator<Item = f64>) -> Self {
        let (mut n, mut sum, mut sum_sq) = (0usize, 0.0f64, 0.0f64);
        let vals: Vec<f64> = values.collect();
        for &v in &vals {
            n += 1;
            sum += v;
        }
        if n == 0 {
            return Self::IDENTITY;
        }
        let mean = sum / n as f64;
        for &v in &vals {
            sum_sq += (v - mean) * (v - mean);
        }
        let std = (sum_sq / n as f64).sqrt();
        Self {
            mean,
            std: if std > 0.0 { std } else { 1.0 },
        }
    }
}

/// Per-variable and per-demographic z-score statistics plus the constant
/// that times are divided by.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub variables: Vec<FeatureStats>,
    pub demographics: Vec<FeatureStats>,
    pub time_scale: f64,
}

impl Normalizer {
    pub fn identity(n_variables: usize, n_demographics: usize) -> Self {
        Self {
            variables: vec![FeatureStats::IDENTITY; n_variables],
            demographics: vec![FeatureStats::IDENTITY; n_demographics],
            time_scale: 1.0,
        }
    }

    pub fn value(&self, variable: usize, v: f64) -> Result<f64, DataError> {
        self.variables
            .get(variable)
            .map(|s| s.apply(v))
            .ok_or(DataError::MissingStatistics(variable))
    }
}

/// Fits statistics on `samples`, which should be the training split only.
pub fn fit_normalizer(
    samples: &[TimeSeriesSample],
    n_variables: usize,
    time_scale: f64,
) -> Result<Normalizer, DataError> {
    if samples.is_empty() {
        return Err(DataError::InvalidArgument(
            "cannot fit normalizer on an empty dataset".into(),
        ));
    }
    if !(time_scale > 0.0 && time_scale.is_finite()) {
        return Err(DataError::InvalidArgument(format!(
            "time scale must be positive, got {time_scale}"
        )));
    }
    let mut per_var: Vec<Vec<f64>> = vec![Vec::new(); n_variables];
    for s in samples {
        for o in &s.triplets {
            per_var
                .get_mut(o.variable)
                .ok_or(DataError::MissingStatistics(o.variable))?
                .push(o.value);
        }
    }
    let n_demo = samples[0].demographics.len();
    let demographics = (0..n_demo)
        .map(|j| FeatureStats::fit(samples.iter().map(|s| s.demographics[j])))
        .collect();
    Ok(Normalizer {
        variables: per_var
            .into_iter()
            .map(|v| FeatureStats::fit(v.into_iter()))
            .collect(),
        demographics,
        time_scale,
    })
}

/// Z-scores values and demographics and divides times by the time scale.
pub fn normalize(
    sample: &TimeSeriesSample,
    stats: &Normalizer,
) -> Result<TimeSeriesSample, DataError> {
    if sample.demographics.len() != stats.demographics.len() {
        return Err(DataError::InvalidArgument(format!(
            "sample has {} demographics, statistics cover {}",
            sample.demographics.len(),
            stats.demographics.len()
        )));
    }
    let mut out = sample.clone();
    for o in &mut out.triplets {
        o.value = stats.value(o.variable, o.value)?;
        o.time /= stats.time_scale;
    }
    for (v, s) in out.demographics.iter_mut().zip(&stats.demographics) {
        *v = s.apply(*v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ObservationTriplet;

    fn sample(obs: &[(f64, usize, f64)], demo: Vec<f64>) -> TimeSeriesSample {
        TimeSeriesSample {
            stay_id: "s".into(),
            patient_id: "p".into(),
            triplets: obs
                .iter()
                .map(|&(t, f, v)| ObservationTriplet::new(t, f, v))
                .collect(),
            demographics: demo,
            label: None,
        }
    }

    #[test]
    fn population_statistics() {
        let s = sample(&[(0.0, 0, 1.0), (1.0, 0, 3.0), (2.0, 1, 5.0)], vec![0.0]);
        let n = fit_normalizer(&[s], 2, 1.0).unwrap();
        assert_eq!(
            n.variables[0],
            FeatureStats {
                mean: 2.0,
                std: 1.0
            }
        );
        assert_eq!(
            n.variables[1],
            FeatureStats {
                mean: 5.0,
                std: 1.0
            }
        );
        assert_eq!(
            n.demographics[0],
            FeatureStats {
                mean: 0.0,
                std: 1.0
            }
        );
    }

    #[test]
    fn normalizes_values() {
        let s = sample(&[(0.0, 0, 1.0), (1.0, 0, 3.0)], vec![]);
        let n = fit_normalizer(std::slice::from_ref(&s), 1, 2.0).unwrap();
        let out = normalize(&s, &n).unwrap();
        assert_eq!(out.triplets[0].value, -1.0);
        assert_eq!(out.triplets[1].value, 1.0);
        assert_eq!(out.triplets[1].time, 0.5);
        let at_mean = sample(&[(0.0, 0, 2.0)], vec![]);
        assert_eq!(normalize(&at_mean, &n).unwrap().triplets[0].value, 0.0);
    }

    #[test]
    fn identity_statistics_are_idempotent() {
        let s = sample(&[(0.3, 0, 7.5), (1.0, 1, -2.0)], vec![1.5]);
        let id = Normalizer::identity(2, 1);
        let once = normalize(&s, &id).unwrap();
        assert_eq!(normalize(&once, &id).unwrap(), s);
    }

    #[test]
    fn missing_variable_statistics_error() {
        let s = sample(&[(0.0, 3, 1.0)], vec![]);
        assert!(matches!(
            normalize(&s, &Normalizer::identity(2, 0)),
            Err(DataError::MissingStatistics(3))
        ));
    }
}
