use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{MetricSet, ScoredLabels};
use crate::model::{ModelConfig, StratsModel};
use crate::numerics::{adam_step, OptimizerConfig, ParameterStore, Scalar};

use super::examples::{
    batch_gradients, mean_loss, mix_seed, predict, Example, ForecastExample, TargetExample,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub pretrain_learning_rate: f64,
    pub finetune_patience: usize,
    pub pretrain_patience: usize,
    pub pretrain_epoch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 5e-4,
            pretrain_learning_rate: 5e-4,
            finetune_patience: 10,
            pretrain_patience: 5,
            pretrain_epoch_size: 256_000,
            max_epochs: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("finetune_patience", self.finetune_patience),
            ("pretrain_patience", self.pretrain_patience),
            ("pretrain_epoch_size", self.pretrain_epoch_size),
            ("max_epochs", self.max_epochs),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        for (name, lr) in [
            ("learning_rate", self.learning_rate),
            ("pretrain_learning_rate", self.pretrain_learning_rate),
        ] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        Ok(())
    }

    fn optimizer(&self, learning_rate: f64) -> OptimizerConfig {
        OptimizerConfig {
            learning_rate,
            batch_size: self.batch_size,
            ..OptimizerConfig::default()
        }
    }
}

/// Patience-based early stopping on a metric where larger is better.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Records an epoch's metric; returns true when it is a new best.
    /// Only strict improvements count.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> bool {
        let improved = match self.best {
            None => !metric.is_nan(),
            Some(best) => metric > best,
        };
        if improved {
            self.best = Some(metric);
            self.best_epoch = epoch;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        improved
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// One line of a training history file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    pub best_so_far: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
    /// Epoch whose weights were restored (1-based).
    pub best_epoch: usize,
}

impl History {
    pub fn best_metric(&self) -> Option<f64> {
        self.records.last().map(|r| r.best_so_far)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path).map_err(Error::io(path))?;
        file.write_all(self.to_jsonl()?.as_bytes())
            .map_err(Error::io(path))
    }

    pub fn read_jsonl(path: &Path) -> Result<Vec<EpochRecord>> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| Ok(serde_json::from_str(l)?))
            .collect()
    }
}

/// How the model entering fine-tuning is initialized.
pub enum FinetuneInit<'a, T: Scalar> {
    Fresh,
    FromPretrained(&'a StratsModel<T>),
}

/// Builds the model for fine-tuning: fresh weights from `seed`, with the
/// trunk overwritten by the pretrained one when requested.
pub fn init_finetune_model<T: Scalar>(
    config: &ModelConfig,
    seed: u64,
    init: FinetuneInit<'_, T>,
) -> Result<StratsModel<T>> {
    let mut model = StratsModel::new(config.clone(), seed)?;
    if let FinetuneInit::FromPretrained(source) = init {
        model.copy_trunk_from(source)?;
    }
    Ok(model)
}

fn run_epochs<T: Scalar, E: Example>(
    model: &mut StratsModel<T>,
    patience: usize,
    max_epochs: usize,
    mut epoch_batches: impl FnMut(usize) -> Vec<Vec<usize>>,
    examples: &[E],
    optimizer: &OptimizerConfig,
    seed: u64,
    mut validate: impl FnMut(&StratsModel<T>) -> Result<f64>,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<History> {
    model.params_mut().reset_optimizer_state();
    let mut stopper = EarlyStopping::new(patience);
    let mut best: Option<ParameterStore<T>> = None;
    let mut history = History::default();
    for epoch in 1..=max_epochs {
        let batches = epoch_batches(epoch);
        let mut total = 0.0;
        for (b, indices) in batches.iter().enumerate() {
            let batch: Vec<&E> = indices.iter().map(|&i| &examples[i]).collect();
            let (loss, grads) =
                batch_gradients(model, &batch, Some(mix_seed(seed, epoch as u64, b as u64)))?;
            if !loss.is_finite() {
                return Err(Error::Training(format!("non-finite loss at epoch {epoch}")));
            }
            adam_step(model.params_mut(), &grads, optimizer)?;
            total += loss;
        }
        let metric = validate(model)?;
        if stopper.observe(epoch, metric) {
            best = Some(model.params().clone());
        }
        let record = EpochRecord {
            epoch,
            train_loss: total / batches.len().max(1) as f64,
            val_metric: metric,
            best_so_far: stopper.best().unwrap_or(f64::NAN),
        };
        progress(&record);
        history.records.push(record);
        if stopper.should_stop() {
            break;
        }
    }
    if let Some(best) = best {
        *model.params_mut() = best;
    }
    history.best_epoch = stopper.best_epoch();
    Ok(history)
}

/// Forecast pretraining. Each epoch draws `pretrain_epoch_size` windows with
/// replacement; training early-stops on validation masked MSE and restores
/// the best weights.
pub fn pretrain<T: Scalar>(
    model: &mut StratsModel<T>,
    train: &[ForecastExample],
    val: &[ForecastExample],
    config: &TrainConfig,
) -> Result<History> {
    pretrain_with(model, train, val, config, &mut |_| {})
}

/// [`pretrain`] with a per-epoch callback. `val_metric` in the history is
/// the validation masked MSE (lower is better).
pub fn pretrain_with<T: Scalar>(
    model: &mut StratsModel<T>,
    train: &[ForecastExample],
    val: &[ForecastExample],
    config: &TrainConfig,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<History> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Training("forecast dataset is empty".into()));
    }
    let n = train.len();
    let bs = config.batch_size;
    let seed = config.seed;
    let batches = |epoch: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, epoch as u64, u64::MAX));
        let draws: Vec<usize> = (0..config.pretrain_epoch_size)
            .map(|_| rng.gen_range(0..n))
            .collect();
        draws.chunks(bs).map(|c| c.to_vec()).collect()
    };
    // Early stopping maximizes, so track the negated MSE and flip it back.
    let mut flipping = |r: &EpochRecord| {
        progress(&EpochRecord {
            val_metric: -r.val_metric,
            best_so_far: -r.best_so_far,
            ..r.clone()
        })
    };
    let mut history = run_epochs(
        model,
        config.pretrain_patience,
        config.max_epochs,
        batches,
        train,
        &config.optimizer(config.pretrain_learning_rate),
        seed,
        |m| Ok(-mean_loss(m, val)?),
        &mut flipping,
    )?;
    for r in &mut history.records {
        r.val_metric = -r.val_metric;
        r.best_so_far = -r.best_so_far;
    }
    Ok(history)
}

/// Target-task fine-tuning with early stopping on validation ROC-AUC +
/// PR-AUC. Optimizer state is reset first.
pub fn finetune<T: Scalar>(
    model: &mut StratsModel<T>,
    train: &[TargetExample],
    val: &[TargetExample],
    config: &TrainConfig,
) -> Result<History> {
    finetune_with(model, train, val, config, &mut |_| {})
}

pub fn finetune_with<T: Scalar>(
    model: &mut StratsModel<T>,
    train: &[TargetExample],
    val: &[TargetExample],
    config: &TrainConfig,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<History> {
    config.validate()?;
    let positives = train.iter().filter(|e| e.label == 1).count();
    if positives == 0 || positives == train.len() {
        return Err(Error::Training(
            "training labels contain a single class; ROC-AUC is undefined".into(),
        ));
    }
    if val.is_empty() {
        return Err(Error::Training("validation set is empty".into()));
    }
    let n = train.len();
    let bs = config.batch_size;
    let seed = config.seed;
    let batches = |epoch: usize| {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(
            seed,
            epoch as u64,
            u64::MAX,
        )));
        order.chunks(bs).map(|c| c.to_vec()).collect()
    };
    run_epochs(
        model,
        config.finetune_patience,
        config.max_epochs,
        batches,
        train,
        &config.optimizer(config.learning_rate),
        seed,
        |m| {
            let metrics = evaluate(m, val)?;
            Ok(metrics.roc_auc + metrics.pr_auc)
        },
        progress,
    )
}

/// Test-set metrics of the target task.
pub fn evaluate<T: Scalar>(
    model: &StratsModel<T>,
    examples: &[TargetExample],
) -> Result<MetricSet> {
    let scores = predict(model, examples)?;
    let labels: Vec<u8> = examples.iter().map(|e| e.label).collect();
    Ok(MetricSet::compute(&ScoredLabels::from_u8(
        scores, &labels,
    )?)?)
}
