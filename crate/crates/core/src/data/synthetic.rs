use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, ObservationTriplet, TimeSeriesSample, Vocabulary};

/// Number of variables that drive the label.
pub const SIGNAL_VARIABLES: usize = 5;
const SIGNAL_WEIGHTS: [f64; SIGNAL_VARIABLES] = [1.0, -1.0, 0.8, -0.8, 0.6];
const DEMOGRAPHIC_WEIGHTS: [f64; 2] = [0.5, -0.5];
const DEMOGRAPHIC_NAMES: [&str; 2] = ["age", "gender"];
const OBSERVATION_NOISE: f64 = 0.3;
const PATIENT_RATE_SIGMA: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_patients: usize,
    pub n_variables: usize,
    pub target_missing_rate: f64,
    pub mean_observations_per_stay: f64,
    pub span_hours: f64,
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_patients: 1000,
            n_variables: 129,
            target_missing_rate: 0.897,
            mean_observations_per_stay: 401.0,
            span_hours: 48.0,
            label_noise: 0.05,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    /// Desk-scale benchmark: 3000 single-stay patients, small enough to
    /// train on one CPU core in minutes.
    pub fn benchmark() -> Self {
        Self {
            n_patients: 3000,
            n_variables: 16,
            target_missing_rate: 0.5,
            mean_observations_per_stay: 64.0,
            span_hours: 48.0,
            label_noise: 0.05,
            seed: 2024,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let fail = |m: &str| Err(DataError::InvalidArgument(m.to_string()));
        if self.n_patients == 0 {
            return fail("n_patients must be positive");
        }
        if self.n_variables == 0 {
            return fail("n_variables must be positive");
        }
        if !(0.0..1.0).contains(&self.target_missing_rate) {
            return fail("target_missing_rate must be in [0, 1)");
        }
        if !(self.mean_observations_per_stay > 0.0) {
            return fail("mean_observations_per_stay must be positive");
        }
        if !(self.span_hours > 0.0 && self.span_hours.is_finite()) {
            return fail("span_hours must be positive");
        }
        if !(0.0..=0.5).contains(&self.label_noise) {
            return fail("label_noise must be in [0, 0.5]");
        }
        Ok(())
    }
}

struct VariableProfile {
    rate: f64,
    loc: f64,
    scale: f64,
}

/// Fixed quadrature draws of the per-patient rate multiplier (mean 1).
fn rate_multiplier_draws() -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    (0..256).map(|_| lognormal_unit_mean(&mut rng)).collect()
}

fn lognormal_unit_mean<R: Rng>(rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    (PATIENT_RATE_SIGMA * z - 0.5 * PATIENT_RATE_SIGMA * PATIENT_RATE_SIGMA).exp()
}

/// Per-variable Poisson rates (per hour) with mean total count
/// `mean_observations_per_stay` and expected never-observed fraction as close
/// to `target_missing_rate` as the family allows.
///
/// Rates follow `c · exp(s · z_f)` with `z_f` evenly spaced in `(-1, 1)`,
/// highest for variable 0. `c` fixes the total count; `s` is found by
/// bisection on the expected missing rate.
fn calibrate_rates(config: &SyntheticConfig) -> Vec<f64> {
    let f = config.n_variables;
    let span = config.span_hours;
    let gammas = rate_multiplier_draws();
    let rates_for = |s: f64| -> Vec<f64> {
        let w: Vec<f64> = (0..f)
            .map(|i| {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / f as f64;
                (s * z).exp()
            })
            .collect();
        let c = config.mean_observations_per_stay / (span * w.iter().sum::<f64>());
        w.into_iter().map(|wi| c * wi).collect()
    };
    let missing_for = |rates: &[f64]| -> f64 {
        let total: f64 = rates
            .iter()
            .map(|&r| {
                gammas.iter().map(|g| (-r * g * span).exp()).sum::<f64>() / gammas.len() as f64
            })
            .sum();
        total / f as f64
    };
    let target = config.target_missing_rate;
    if missing_for(&rates_for(0.0)) >= target {
        return rates_for(0.0);
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while missing_for(&rates_for(hi)) < target && hi < 64.0 {
        hi *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if missing_for(&rates_for(mid)) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    rates_for(0.5 * (lo + hi))
}

fn round_to(v: f64, decimals: i32) -> f64 {
    let p = 10f64.powi(decimals);
    (v * p).round() / p
}

/// Like [`generate_synthetic`], also returning each stay's noiseless label
/// score (positive ⇔ clean label 1).
pub fn generate_synthetic_with_latent(
    config: &SyntheticConfig,
) -> Result<(Dataset, Vec<f64>), DataError> {
    config.validate()?;
    let f = config.n_variables;
    let span = config.span_hours;
    let rates = calibrate_rates(config);

    let mut var_rng = ChaCha8Rng::seed_from_u64(config.seed);
    var_rng.set_stream(u64::MAX);
    let profiles: Vec<VariableProfile> = rates
        .iter()
        .map(|&rate| VariableProfile {
            rate,
            loc: var_rng.gen_range(1.0..150.0),
            scale: var_rng.gen_range(0.5..15.0),
        })
        .collect();

    // OU latent with correlation time span/2, sampled hourly.
    let grid = span.ceil() as usize + 1;
    let rho = (-2.0 / span).exp();
    let innovation = (1.0 - rho * rho).sqrt();
    let late_start = 0.75 * span;
    let n_signal = SIGNAL_VARIABLES.min(f);
    let late_var = {
        // variance of a window average of a unit OU process
        let w = 0.25 * span;
        let tau = span / 2.0;
        let r = w / tau;
        2.0 / (r * r) * (r - 1.0 + (-r).exp())
    };
    let score_std = (SIGNAL_WEIGHTS[..n_signal]
        .iter()
        .map(|b| b * b)
        .sum::<f64>()
        * late_var
        + DEMOGRAPHIC_WEIGHTS.iter().map(|c| c * c).sum::<f64>())
    .sqrt();
    // roughly 30% positives
    let threshold = 0.5 * score_std;

    let mut samples = Vec::with_capacity(config.n_patients);
    let mut scores = Vec::with_capacity(config.n_patients);
    for k in 0..config.n_patients {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(k as u64);

        let demographics: Vec<f64> = (0..DEMOGRAPHIC_NAMES.len())
            .map(|_| round_to(StandardNormal.sample(&mut rng), 4))
            .collect();
        let gamma = lognormal_unit_mean(&mut rng);

        let mut triplets = Vec::new();
        let mut late_means = Vec::with_capacity(n_signal);
        for (v, profile) in profiles.iter().enumerate() {
            let mut latent = Vec::with_capacity(grid);
            let mut x: f64 = StandardNormal.sample(&mut rng);
            latent.push(x);
            for _ in 1..grid {
                let e: f64 = StandardNormal.sample(&mut rng);
                x = rho * x + innovation * e;
                latent.push(x);
            }
            if v < n_signal {
                let late: Vec<f64> = latent
                    .iter()
                    .enumerate()
                    .filter(|(h, _)| *h as f64 >= late_start && (*h as f64) <= span)
                    .map(|(_, &l)| l)
                    .collect();
                late_means.push(late.iter().sum::<f64>() / late.len() as f64);
            }
            let lambda = profile.rate * gamma * span;
            let count = if lambda > 0.0 {
                Poisson::new(lambda)
                    .expect("positive rate")
                    .sample(&mut rng) as usize
            } else {
                0
            };
            for _ in 0..count {
                let t = round_to(rng.gen_range(0.0..span), 3).min(span - 1e-3);
                let h = t.floor() as usize;
                let frac = t - h as f64;
                let level = latent[h] * (1.0 - frac) + latent[(h + 1).min(grid - 1)] * frac;
                let noise: f64 = StandardNormal.sample(&mut rng);
                let value = profile.loc + profile.scale * (level + OBSERVATION_NOISE * noise);
                triplets.push(ObservationTriplet::new(t, v, round_to(value, 4)));
            }
        }
        if triplets.is_empty() {
            let t = round_to(rng.gen_range(0.0..span), 3).min(span - 1e-3);
            triplets.push(ObservationTriplet::new(t, 0, round_to(profiles[0].loc, 4)));
        }
        triplets.sort_by(ObservationTriplet::order_key);
        triplets.dedup_by(|a, b| a.time == b.time && a.variable == b.variable);

        let score = SIGNAL_WEIGHTS
            .iter()
            .zip(&late_means)
            .map(|(b, l)| b * l)
            .sum::<f64>()
            + DEMOGRAPHIC_WEIGHTS
                .iter()
                .zip(&demographics)
                .map(|(c, d)| c * d)
                .sum::<f64>()
            - threshold;
        let clean = u8::from(score > 0.0);
        let label = if rng.gen::<f64>() < config.label_noise {
            1 - clean
        } else {
            clean
        };
        scores.push(score);
        samples.push(TimeSeriesSample {
            stay_id: format!("stay{k:05}"),
            patient_id: format!("patient{k:05}"),
            triplets,
            demographics,
            label: Some(label),
        });
    }

    let names = (0..f).map(|i| format!("var{i:03}")).collect();
    Ok((
        Dataset {
            vocabulary: Vocabulary::new(names)?,
            demographic_names: DEMOGRAPHIC_NAMES.iter().map(|s| s.to_string()).collect(),
            samples,
        },
        scores,
    ))
}

/// Synthetic stays with Poisson-process observation times, slowly varying
/// latent trajectories, and a label driven by late-window levels of the
/// first [`SIGNAL_VARIABLES`] variables plus demographics.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Dataset, DataError> {
    generate_synthetic_with_latent(config).map(|(d, _)| d)
}
