//! Triplet representation of sparse, irregularly sampled time series and the
//! dataset plumbing around it.

mod csv_io;
mod normalize;
mod split;
mod synthetic;
mod windows;

use std::collections::HashMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use csv_io::{export_csv, ingest_csv, load_data_dir, read_vocabulary, DataFiles};
pub use normalize::{fit_normalizer, normalize, FeatureStats, Normalizer};
pub use split::{sample_labeled_fraction, split_patients, Split, SplitRatios};
pub use synthetic::{generate_synthetic, generate_synthetic_with_latent, SyntheticConfig};
pub use windows::{build_forecast_windows, ForecastSample, WindowSpec};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}:{line}: unknown variable `{name}`")]
    UnknownVariable {
        path: PathBuf,
        line: u64,
        name: String,
    },
    #[error(
        "{path}:{line}: duplicate observation for stay `{stay_id}` at time {time} of `{variable}`"
    )]
    DuplicateObservation {
        path: PathBuf,
        line: u64,
        stay_id: String,
        time: f64,
        variable: String,
    },
    #[error("{path}:{line}: negative time {time}")]
    NegativeTime { path: PathBuf, line: u64, time: f64 },
    #[error("stay `{0}` has no demographics row")]
    MissingDemographics(String),
    #[error("vocabulary: {0}")]
    Vocabulary(String),
    #[error("variable index {0} has no normalization statistics")]
    MissingStatistics(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

/// One measurement: `value` of variable `variable` at `time` hours.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationTriplet {
    pub time: f64,
    pub variable: usize,
    pub value: f64,
}

impl ObservationTriplet {
    pub fn new(time: f64, variable: usize, value: f64) -> Self {
        Self {
            time,
            variable,
            value,
        }
    }

    /// Time ascending, ties by variable index.
    pub fn order_key(&self, other: &Self) -> std::cmp::Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.variable.cmp(&other.variable))
    }
}

/// Ordered set of variable names; position is the variable index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(names: Vec<String>) -> Result<Self, DataError> {
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() {
                return Err(DataError::Vocabulary(format!(
                    "empty name at line {}",
                    i + 1
                )));
            }
            if index.insert(n.clone(), i).is_some() {
                return Err(DataError::Vocabulary(format!("duplicate name `{n}`")));
            }
        }
        Ok(Self { names, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

/// All observations of one stay plus its static covariates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesSample {
    pub stay_id: String,
    pub patient_id: String,
    pub triplets: Vec<ObservationTriplet>,
    pub demographics: Vec<f64>,
    pub label: Option<u8>,
}

impl TimeSeriesSample {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn sort_triplets(&mut self) {
        self.triplets.sort_by(ObservationTriplet::order_key);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub vocabulary: Vocabulary,
    pub demographic_names: Vec<String>,
    pub samples: Vec<TimeSeriesSample>,
}

impl Dataset {
    pub fn n_variables(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn n_demographics(&self) -> usize {
        self.demographic_names.len()
    }

    pub fn labeled(&self) -> impl Iterator<Item = &TimeSeriesSample> {
        self.samples.iter().filter(|s| s.label.is_some())
    }

    pub fn find(&self, stay_id: &str) -> Option<&TimeSeriesSample> {
        self.samples.iter().find(|s| s.stay_id == stay_id)
    }

    /// Fraction of (stay, variable) pairs with no observation.
    pub fn missing_rate(&self) -> f64 {
        if self.samples.is_empty() || self.n_variables() == 0 {
            return 0.0;
        }
        let f = self.n_variables();
        let mut seen = vec![false; f];
        let mut missing = 0usize;
        for s in &self.samples {
            seen.iter_mut().for_each(|v| *v = false);
            for t in &s.triplets {
                seen[t.variable] = true;
            }
            missing += seen.iter().filter(|v| !**v).count();
        }
        missing as f64 / (self.samples.len() * f) as f64
    }
}

/// Keeps the `max_n` most recent observations, preserving order.
pub fn truncate_observations(sample: &TimeSeriesSample, max_n: usize) -> TimeSeriesSample {
    let mut out = sample.clone();
    if out.triplets.len() > max_n {
        out.sort_triplets();
        let drop = out.triplets.len() - max_n;
        out.triplets.drain(..drop);
    }
    out
}

/// Observation count at the given quantile (nearest-rank), at least 1.
pub fn observation_count_quantile(samples: &[TimeSeriesSample], q: f64) -> usize {
    let mut counts: Vec<usize> = samples.iter().map(TimeSeriesSample::len).collect();
    if counts.is_empty() {
        return 1;
    }
    counts.sort_unstable();
    let rank = ((q.clamp(0.0, 1.0) * counts.len() as f64).ceil() as usize).clamp(1, counts.len());
    counts[rank - 1].max(1)
}
