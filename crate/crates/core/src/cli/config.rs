use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{SplitRatios, SyntheticConfig, WindowSpec};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::{ExperimentConfig, ModelVariant, SsMode, TrainConfig};

/// Every key accepted by the `pretrain`, `train`, `evaluate` and
/// `experiment` config files. Missing keys take their defaults; unknown keys
/// are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub d: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub dropout_rate: f64,
    pub attention_dropout_rate: f64,
    pub fusion_width: Option<usize>,

    pub batch_size: usize,
    pub learning_rate: f64,
    pub pretrain_learning_rate: f64,
    pub finetune_patience: usize,
    pub pretrain_patience: usize,
    pub pretrain_epoch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,

    pub split_train: f64,
    pub split_val: f64,
    pub split_test: f64,
    pub split_seed: u64,
    /// `"mimic"` or `"physionet"`.
    pub window: String,
    /// Hours that times are divided by; the largest training time if unset.
    pub time_scale: Option<f64>,
    /// Fraction of labeled training and validation stays used by `train`.
    pub labeled_fraction: f64,

    pub fractions: Vec<f64>,
    pub n_runs: usize,
    pub ss_modes: Vec<SsMode>,
    pub variants: Vec<ModelVariant>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::new(1, 1);
        let train = TrainConfig::default();
        let split = SplitRatios::default();
        Self {
            d: model.d,
            n_blocks: model.n_blocks,
            n_heads: model.n_heads,
            dropout_rate: model.dropout_rate,
            attention_dropout_rate: model.attention_dropout_rate,
            fusion_width: model.fusion_width,
            batch_size: train.batch_size,
            learning_rate: train.learning_rate,
            pretrain_learning_rate: train.pretrain_learning_rate,
            finetune_patience: train.finetune_patience,
            pretrain_patience: train.pretrain_patience,
            pretrain_epoch_size: train.pretrain_epoch_size,
            max_epochs: train.max_epochs,
            seed: train.seed,
            split_train: split.train,
            split_val: split.val,
            split_test: split.test,
            split_seed: 0,
            window: "mimic".into(),
            time_scale: None,
            labeled_fraction: 1.0,
            fractions: vec![0.1, 0.5, 1.0],
            n_runs: 10,
            ss_modes: vec![SsMode::Without, SsMode::With],
            variants: vec![ModelVariant::Strats, ModelVariant::IStrats],
        }
    }
}

impl RunConfig {
    pub fn model_template(&self) -> ModelConfig {
        ModelConfig {
            d: self.d,
            n_blocks: self.n_blocks,
            n_heads: self.n_heads,
            dropout_rate: self.dropout_rate,
            attention_dropout_rate: self.attention_dropout_rate,
            fusion_width: self.fusion_width,
            ..ModelConfig::new(1, 1)
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            pretrain_learning_rate: self.pretrain_learning_rate,
            finetune_patience: self.finetune_patience,
            pretrain_patience: self.pretrain_patience,
            pretrain_epoch_size: self.pretrain_epoch_size,
            max_epochs: self.max_epochs,
            seed: self.seed,
        }
    }

    pub fn split_ratios(&self) -> SplitRatios {
        SplitRatios {
            train: self.split_train,
            val: self.split_val,
            test: self.split_test,
        }
    }

    pub fn window_spec(&self) -> Result<WindowSpec> {
        match self.window.as_str() {
            "mimic" => Ok(WindowSpec::mimic_style()),
            "physionet" => Ok(WindowSpec::physionet_style()),
            other => Err(Error::Config(format!(
                "window must be \"mimic\" or \"physionet\", got \"{other}\""
            ))),
        }
    }

    pub fn experiment_config(&self) -> ExperimentConfig {
        ExperimentConfig {
            fractions: self.fractions.clone(),
            n_runs: self.n_runs,
            ss_modes: self.ss_modes.clone(),
            variants: self.variants.clone(),
            base_seed: self.seed,
            model: self.model_template(),
            train: self.train_config(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.split_ratios()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.window_spec()?;
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "labeled_fraction must be in (0, 1], got {}",
                self.labeled_fraction
            )));
        }
        let mut probe = self.model_template();
        probe.n_variables = 1;
        probe.n_demographics = 1;
        probe.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

/// A parsed config file and the hash of its bytes.
#[derive(Debug, Clone)]
pub struct Loaded<C> {
    pub config: C,
    pub hash: Option<String>,
}

fn parse<C: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<Loaded<C>> {
    let Some(path) = path else {
        return Ok(Loaded {
            config: C::default(),
            hash: None,
        });
    };
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| Error::Config(format!("{}: not UTF-8", path.display())))?;
    let config =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(Loaded {
        config,
        hash: Some(hex::encode(Sha256::digest(&bytes))),
    })
}

pub fn load_run_config(path: Option<&Path>) -> Result<Loaded<RunConfig>> {
    let loaded: Loaded<RunConfig> = parse(path)?;
    loaded.config.validate()?;
    Ok(loaded)
}

pub fn load_synthetic_config(path: Option<&Path>) -> Result<Loaded<SyntheticConfig>> {
    let loaded: Loaded<SyntheticConfig> = parse(path)?;
    loaded
        .config
        .validate()
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(loaded)
}
