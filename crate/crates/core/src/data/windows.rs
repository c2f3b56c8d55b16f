use serde::{Deserialize, Serialize};

use super::{DataError, Normalizer, TimeSeriesSample};

/// How observation/prediction window pairs are cut from a stay.
///
/// For each endpoint `x` the observation window is
/// `[max(0, x - lookback), x)` and the prediction window is `[x, x + horizon)`.
/// `lookback = None` means the observation window always starts at 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub endpoints: Vec<f64>,
    pub lookback: Option<f64>,
    pub horizon: f64,
}

impl WindowSpec {
    /// Endpoints 20, 24, …, 124 h with a 24 h lookback and 2 h horizon.
    pub fn mimic_style() -> Self {
        Self {
            endpoints: (20..=124).step_by(4).map(f64::from).collect(),
            lookback: Some(24.0),
            horizon: 2.0,
        }
    }

    /// Endpoints 12, 16, …, 44 h, observation windows anchored at 0, 2 h horizon.
    pub fn physionet_style() -> Self {
        Self {
            endpoints: (12..=44).step_by(4).map(f64::from).collect(),
            lookback: None,
            horizon: 2.0,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.horizon > 0.0) {
            return Err(DataError::InvalidArgument(
                "horizon must be positive".into(),
            ));
        }
        if let Some(lb) = self.lookback {
            if !(lb > 0.0) {
                return Err(DataError::InvalidArgument(
                    "lookback must be positive".into(),
                ));
            }
        }
        if self.endpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DataError::InvalidArgument(
                "window endpoints must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    /// `(observation_start, endpoint)` for every endpoint.
    pub fn candidate_windows(&self) -> Vec<(f64, f64)> {
        self.endpoints
            .iter()
            .map(|&x| {
                let start = self.lookback.map_or(0.0, |lb| (x - lb).max(0.0));
                (start, x)
            })
            .collect()
    }
}

/// An observation window of a stay plus the forecast targets that follow it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastSample {
    /// Raw values; times re-origined so the observation window starts at 0.
    pub base: TimeSeriesSample,
    pub window_start: f64,
    pub window_end: f64,
    pub forecast_mask: Vec<bool>,
    /// Normalized last value per variable in the prediction window; 0 where masked.
    pub forecast_values: Vec<f64>,
}

impl ForecastSample {
    pub fn mask_as_f64(&self) -> Vec<f64> {
        self.forecast_mask
            .iter()
            .map(|&m| if m { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Cuts every stay into observation/prediction window pairs.
///
/// Pairs without an observation in either window are dropped. Forecast
/// targets use the last observation of each variable in the prediction
/// window, normalized with `stats`.
pub fn build_forecast_windows(
    samples: &[TimeSeriesSample],
    spec: &WindowSpec,
    stats: &Normalizer,
) -> Result<Vec<ForecastSample>, DataError> {
    spec.validate()?;
    let n_vars = stats.variables.len();
    let windows = spec.candidate_windows();
    let mut out = Vec::new();
    for sample in samples {
        let mut sorted = sample.clone();
        sorted.sort_triplets();
        for &(start, end) in &windows {
            let horizon_end = end + spec.horizon;
            let mut mask = vec![false; n_vars];
            let mut values = vec![0.0; n_vars];
            let mut base = TimeSeriesSample {
                triplets: Vec::new(),
                ..sorted.clone()
            };
            for o in &sorted.triplets {
                if o.time >= start && o.time < end {
                    let mut t = *o;
                    t.time -= start;
                    base.triplets.push(t);
                } else if o.time >= end && o.time < horizon_end {
                    // sorted by time, so later writes are later observations
                    mask[o.variable] = true;
                    values[o.variable] = stats.value(o.variable, o.value)?;
                }
            }
            if base.triplets.is_empty() || !mask.iter().any(|&m| m) {
                continue;
            }
            out.push(ForecastSample {
                base,
                window_start: start,
                window_end: end,
                forecast_mask: mask,
                forecast_values: values,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ObservationTriplet;

    #[test]
    fn mimic_style_windows() {
        let spec = WindowSpec::mimic_style();
        let w = spec.candidate_windows();
        assert_eq!(w.len(), 27);
        assert_eq!(w[0], (0.0, 20.0));
        let at48 = w.iter().find(|(_, x)| *x == 48.0).unwrap();
        assert_eq!(*at48, (24.0, 48.0));
    }

    #[test]
    fn rejects_unordered_endpoints() {
        let spec = WindowSpec {
            endpoints: vec![4.0, 2.0],
            lookback: None,
            horizon: 2.0,
        };
        assert!(spec.validate().is_err());
    }

    fn stay(obs: &[(f64, usize, f64)]) -> TimeSeriesSample {
        TimeSeriesSample {
            stay_id: "s".into(),
            patient_id: "p".into(),
            triplets: obs
                .iter()
                .map(|&(t, f, v)| ObservationTriplet::new(t, f, v))
                .collect(),
            demographics: vec![],
            label: None,
        }
    }

    #[test]
    fn last_value_in_prediction_window_is_target() {
        let spec = WindowSpec {
            endpoints: vec![10.0],
            lookback: Some(5.0),
            horizon: 2.0,
        };
        let s = stay(&[
            (4.0, 0, 1.0),
            (6.0, 0, 2.0),
            (10.0, 1, 3.0),
            (11.5, 1, 4.0),
            (12.0, 0, 9.0),
        ]);
        let out = build_forecast_windows(&[s], &spec, &Normalizer::identity(2, 0)).unwrap();
        assert_eq!(out.len(), 1);
        let f = &out[0];
        assert_eq!(f.base.triplets.len(), 1);
        assert_eq!(f.base.triplets[0].time, 1.0);
        assert_eq!(f.forecast_mask, vec![false, true]);
        assert_eq!(f.forecast_values, vec![0.0, 4.0]);
    }

    #[test]
    fn empty_prediction_windows_are_dropped() {
        let s = stay(&[(1.0, 0, 1.0), (2.0, 1, 1.0)]);
        let out = build_forecast_windows(
            &[s],
            &WindowSpec::mimic_style(),
            &Normalizer::identity(2, 0),
        )
        .unwrap();
        assert!(out.is_empty());
    }
}
