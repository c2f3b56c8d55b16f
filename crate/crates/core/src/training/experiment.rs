use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    build_forecast_windows, fit_normalizer, observation_count_quantile, sample_labeled_fraction,
    split_patients, Dataset, Normalizer, SplitRatios, TimeSeriesSample, WindowSpec,
};
use crate::error::{Error, Result};
use crate::metrics::MetricSet;
use crate::model::{ModelConfig, StratsModel};

use super::examples::{prepare_forecast, prepare_target, ForecastExample, TargetExample};
use super::trainer::{
    evaluate, finetune, init_finetune_model, pretrain, FinetuneInit, TrainConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SsMode {
    /// Fine-tune from scratch.
    #[serde(rename = "ss-")]
    Without,
    /// Forecast-pretrain the trunk first.
    #[serde(rename = "ss+")]
    With,
}

impl SsMode {
    pub fn label(self) -> &'static str {
        match self {
            SsMode::Without => "ss-",
            SsMode::With => "ss+",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelVariant {
    #[serde(rename = "strats")]
    Strats,
    #[serde(rename = "istrats")]
    IStrats,
}

impl ModelVariant {
    pub fn label(self) -> &'static str {
        match self {
            ModelVariant::Strats => "strats",
            ModelVariant::IStrats => "istrats",
        }
    }
}

/// Splits, normalization statistics, and forecast windows shared by every
/// run of an experiment.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub n_variables: usize,
    pub n_demographics: usize,
    pub normalizer: Normalizer,
    pub max_observations: usize,
    pub train: Vec<TimeSeriesSample>,
    pub val: Vec<TimeSeriesSample>,
    pub test: Vec<TargetExample>,
    pub forecast_train: Vec<ForecastExample>,
    pub forecast_val: Vec<ForecastExample>,
}

impl PreparedData {
    /// Model configuration with this data's dimensions filled in.
    pub fn model_config(&self, template: &ModelConfig, variant: ModelVariant) -> ModelConfig {
        ModelConfig {
            n_variables: self.n_variables,
            n_demographics: self.n_demographics,
            max_observations: self.max_observations,
            time_scale: self.normalizer.time_scale,
            interpretable: variant == ModelVariant::IStrats,
            ..template.clone()
        }
    }

    /// Normalized labeled train and validation examples at `fraction`.
    pub fn labeled(
        &self,
        fraction: f64,
        seed: u64,
    ) -> Result<(Vec<TargetExample>, Vec<TargetExample>)> {
        let train = sample_labeled_fraction(&self.train, fraction, seed)?;
        let val = sample_labeled_fraction(&self.val, fraction, seed ^ 0x5641_4c00)?;
        Ok((
            prepare_target(&train, &self.normalizer, self.max_observations)?,
            prepare_target(&val, &self.normalizer, self.max_observations)?,
        ))
    }
}

/// Splits by patient, fits statistics on the training split, builds forecast
/// windows from every train and validation stay (labeled or not), and caps
/// sequence length at the 99th percentile of training observation counts.
///
/// `time_scale = None` uses the largest training observation time.
pub fn prepare_experiment(
    dataset: &Dataset,
    ratios: &SplitRatios,
    split_seed: u64,
    window: &WindowSpec,
    time_scale: Option<f64>,
) -> Result<PreparedData> {
    let split = split_patients(&dataset.samples, *ratios, split_seed)?;
    let time_scale = match time_scale {
        Some(t) => t,
        None => split
            .train
            .iter()
            .flat_map(|s| s.triplets.iter().map(|o| o.time))
            .fold(1.0, f64::max),
    };
    let normalizer = fit_normalizer(&split.train, dataset.n_variables(), time_scale)?;
    let max_observations = observation_count_quantile(&split.train, 0.99).max(1);
    let forecast = |samples: &[TimeSeriesSample]| -> Result<Vec<ForecastExample>> {
        let windows = build_forecast_windows(samples, window, &normalizer)?;
        prepare_forecast(&windows, &normalizer, max_observations)
    };
    Ok(PreparedData {
        n_variables: dataset.n_variables(),
        n_demographics: dataset.n_demographics(),
        forecast_train: forecast(&split.train)?,
        forecast_val: forecast(&split.val)?,
        test: prepare_target(&split.test, &normalizer, max_observations)?,
        normalizer,
        max_observations,
        train: split.train,
        val: split.val,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub fractions: Vec<f64>,
    pub n_runs: usize,
    pub ss_modes: Vec<SsMode>,
    pub variants: Vec<ModelVariant>,
    /// Run `r` uses seed `base_seed + r`.
    pub base_seed: u64,
    /// Architecture; data dimensions are filled in per experiment.
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_runs == 0 {
            return Err(Error::Config("n_runs must be at least 1".into()));
        }
        if self.fractions.is_empty() || self.ss_modes.is_empty() || self.variants.is_empty() {
            return Err(Error::Config(
                "fractions, ss_modes and variants must be non-empty".into(),
            ));
        }
        if let Some(f) = self.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(Error::Config(format!(
                "labeled fraction {f} outside (0, 1]"
            )));
        }
        self.train.validate()
    }

    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

/// Aggregated test metrics for one (variant, ss mode, fraction) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub model: ModelVariant,
    pub ss_mode: SsMode,
    pub fraction: f64,
    pub runs: Vec<MetricSet>,
    pub mean: MetricSet,
    /// Sample standard deviation; absent for a single run.
    pub std: Option<MetricSet>,
    pub config_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<RunReport>,
}

impl ExperimentReport {
    pub fn row(&self, model: ModelVariant, ss_mode: SsMode, fraction: f64) -> Option<&RunReport> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.ss_mode == ss_mode && r.fraction == fraction)
    }

    /// One line per row: means, then standard deviations (empty if absent).
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "model,ss_mode,fraction,n_runs,roc_auc,pr_auc,min_re_pr,roc_auc_std,pr_auc_std,min_re_pr_std\n",
        );
        for r in &self.rows {
            let std = match &r.std {
                Some(s) => format!("{:.6},{:.6},{:.6}", s.roc_auc, s.pr_auc, s.min_re_pr),
                None => ",,".into(),
            };
            out.push_str(&format!(
                "{},{},{},{},{:.6},{:.6},{:.6},{}\n",
                r.model.label(),
                r.ss_mode.label(),
                r.fraction,
                r.runs.len(),
                r.mean.roc_auc,
                r.mean.pr_auc,
                r.mean.min_re_pr,
                std
            ));
        }
        out
    }
}

fn aggregate(runs: &[MetricSet]) -> (MetricSet, Option<MetricSet>) {
    let n = runs.len() as f64;
    let field = |f: fn(&MetricSet) -> f64| {
        let mean = runs.iter().map(f).sum::<f64>() / n;
        let var = runs.iter().map(|m| (f(m) - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var.sqrt())
    };
    let (roc, roc_s) = field(|m| m.roc_auc);
    let (pr, pr_s) = field(|m| m.pr_auc);
    let (mrp, mrp_s) = field(|m| m.min_re_pr);
    let mean = MetricSet {
        roc_auc: roc,
        pr_auc: pr,
        min_re_pr: mrp,
    };
    let std = (runs.len() >= 2).then_some(MetricSet {
        roc_auc: roc_s,
        pr_auc: pr_s,
        min_re_pr: mrp_s,
    });
    (mean, std)
}

/// Test metrics for every fraction and ss mode of one (variant, run) pair.
/// Pretraining happens once and is shared by all fractions.
fn run_one(
    data: &PreparedData,
    config: &ExperimentConfig,
    variant: ModelVariant,
    run: usize,
    log: &(dyn Fn(&str) + Sync),
) -> Result<Vec<((usize, SsMode), MetricSet)>> {
    let seed = config.base_seed + run as u64;
    let model_config = data.model_config(&config.model, variant);
    let train_config = TrainConfig {
        seed,
        ..config.train.clone()
    };
    let pretrained = if config.ss_modes.contains(&SsMode::With) {
        let mut model = StratsModel::<f32>::new(model_config.clone(), seed)?;
        let history = pretrain(
            &mut model,
            &data.forecast_train,
            &data.forecast_val,
            &train_config,
        )?;
        log(&format!(
            "{} run {run}: pretrained {} epochs, best val MSE {:.4}",
            variant.label(),
            history.records.len(),
            history.best_metric().unwrap_or(f64::NAN)
        ));
        Some(model)
    } else {
        None
    };
    let mut out = Vec::new();
    for (fi, &fraction) in config.fractions.iter().enumerate() {
        let (train, val) = data.labeled(fraction, seed)?;
        for &mode in &config.ss_modes {
            let init = match mode {
                SsMode::Without => FinetuneInit::Fresh,
                SsMode::With => {
                    FinetuneInit::FromPretrained(pretrained.as_ref().expect("pretrained"))
                }
            };
            let mut model = init_finetune_model(&model_config, seed, init)?;
            let history = finetune(&mut model, &train, &val, &train_config)?;
            let metrics = evaluate(&model, &data.test)?;
            log(&format!(
                "{} run {run} fraction {fraction} {}: {} epochs, test ROC-AUC {:.4} PR-AUC {:.4}",
                variant.label(),
                mode.label(),
                history.records.len(),
                metrics.roc_auc,
                metrics.pr_auc
            ));
            out.push(((fi, mode), metrics));
        }
    }
    Ok(out)
}

/// Runs every (variant, run) job, in parallel, and aggregates test metrics
/// per (variant, ss mode, fraction). The report depends only on the data,
/// the config, and the seeds.
pub fn run_experiment(data: &PreparedData, config: &ExperimentConfig) -> Result<ExperimentReport> {
    run_experiment_with(data, config, &|_| {})
}

pub fn run_experiment_with(
    data: &PreparedData,
    config: &ExperimentConfig,
    log: &(dyn Fn(&str) + Sync),
) -> Result<ExperimentReport> {
    config.validate()?;
    let jobs: Vec<(ModelVariant, usize)> = config
        .variants
        .iter()
        .flat_map(|&v| (0..config.n_runs).map(move |r| (v, r)))
        .collect();
    let results: Vec<Result<Vec<((usize, SsMode), MetricSet)>>> = jobs
        .par_iter()
        .map(|&(v, r)| run_one(data, config, v, r, log))
        .collect();
    let mut per_job = Vec::with_capacity(jobs.len());
    for r in results {
        per_job.push(r?);
    }
    let fingerprint = config.fingerprint();
    let mut rows = Vec::new();
    for &variant in &config.variants {
        for &mode in &config.ss_modes {
            for (fi, &fraction) in config.fractions.iter().enumerate() {
                let runs: Vec<MetricSet> = jobs
                    .iter()
                    .zip(&per_job)
                    .filter(|((v, _), _)| *v == variant)
                    .flat_map(|(_, res)| {
                        res.iter()
                            .filter(|(k, _)| *k == (fi, mode))
                            .map(|(_, m)| *m)
                    })
                    .collect();
                let (mean, std) = aggregate(&runs);
                rows.push(RunReport {
                    model: variant,
                    ss_mode: mode,
                    fraction,
                    runs,
                    mean,
                    std,
                    config_fingerprint: fingerprint.clone(),
                });
            }
        }
    }
    Ok(ExperimentReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_std_needs_two_runs() {
        let m = |x| MetricSet {
            roc_auc: x,
            pr_auc: x,
            min_re_pr: x,
        };
        let (mean, std) = aggregate(&[m(0.5)]);
        assert_eq!(mean.roc_auc, 0.5);
        assert!(std.is_none());
        let (mean, std) = aggregate(&[m(0.4), m(0.6)]);
        assert!((mean.roc_auc - 0.5).abs() < 1e-12);
        assert!((std.unwrap().roc_auc - 0.02f64.sqrt()).abs() < 1e-12);
    }
}
