use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, TimeSeriesSample};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    /// 64:16:20
    fn default() -> Self {
        Self {
            train: 0.64,
            val: 0.16,
            test: 0.20,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<(), DataError> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !(*r >= 0.0)) || ((parts.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(DataError::InvalidArgument(format!(
                "split ratios must be non-negative and sum to 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<TimeSeriesSample>,
    pub val: Vec<TimeSeriesSample>,
    pub test: Vec<TimeSeriesSample>,
}

/// Shuffles patients with `seed` and assigns all of a patient's stays to one
/// split. Split sizes are rounded patient counts.
pub fn split_patients(
    samples: &[TimeSeriesSample],
    ratios: SplitRatios,
    seed: u64,
) -> Result<Split, DataError> {
    ratios.validate()?;
    let mut patients: Vec<&str> = Vec::new();
    let mut seen = HashMap::new();
    for s in samples {
        if !seen.contains_key(s.patient_id.as_str()) {
            seen.insert(s.patient_id.as_str(), patients.len());
            patients.push(&s.patient_id);
        }
    }
    if patients.len() < 3 {
        return Err(DataError::InvalidArgument(format!(
            "need at least 3 patients to split, found {}",
            patients.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    patients.shuffle(&mut rng);
    let n = patients.len() as f64;
    let n_train = (ratios.train * n).round() as usize;
    let n_val = ((ratios.val * n).round() as usize).min(patients.len() - n_train);
    let mut assignment: HashMap<&str, u8> = HashMap::new();
    for (i, p) in patients.iter().enumerate() {
        let part = if i < n_train {
            0
        } else if i < n_train + n_val {
            1
        } else {
            2
        };
        assignment.insert(p, part);
    }
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for s in samples {
        match assignment[s.patient_id.as_str()] {
            0 => split.train.push(s.clone()),
            1 => split.val.push(s.clone()),
            _ => split.test.push(s.clone()),
        }
    }
    Ok(split)
}

/// Keeps a uniformly drawn `fraction` of the labeled samples (rounded, at
/// least one) together with every unlabeled sample, in input order.
pub fn sample_labeled_fraction(
    samples: &[TimeSeriesSample],
    fraction: f64,
    seed: u64,
) -> Result<Vec<TimeSeriesSample>, DataError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DataError::InvalidArgument(format!(
            "labeled fraction must be in (0, 1], got {fraction}"
        )));
    }
    let labeled: Vec<usize> = samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.label.is_some())
        .map(|(i, _)| i)
        .collect();
    if fraction == 1.0 {
        return Ok(samples.to_vec());
    }
    let k = ((fraction * labeled.len() as f64).round() as usize)
        .max(1)
        .min(labeled.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; samples.len()];
    for &i in labeled.choose_multiple(&mut rng, k) {
        keep[i] = true;
    }
    Ok(samples
        .iter()
        .enumerate()
        .filter(|(i, s)| s.label.is_none() || keep[*i])
        .map(|(_, s)| s.clone())
        .collect())
}
