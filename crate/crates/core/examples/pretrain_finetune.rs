// Forecast pretraining followed by mortality fine-tuning on a small cohort.

use strats::data::{generate_synthetic, SplitRatios, SyntheticConfig, WindowSpec};
use strats::metrics::MetricSet;
use strats::model::ModelConfig;
use strats::training::*;

pub fn run_example() -> strats::Result<MetricSet> {
    let dataset = generate_synthetic(&SyntheticConfig {
        n_patients: 300,
        mean_observations_per_stay: 16.0,
        ..SyntheticConfig::default()
    })?;
    let data = prepare_experiment(
        &dataset,
        &SplitRatios::default(),
        0,
        &WindowSpec::physionet_style(),
        None,
    )?;
    let template = ModelConfig {
        d: 16,
        n_heads: 2,
        ..ModelConfig::new(0, 0)
    };
    let config = data.model_config(&template, ModelVariant::Strats);
    let train = TrainConfig {
        max_epochs: 4,
        pretrain_epoch_size: 512,
        learning_rate: 1e-3,
        pretrain_learning_rate: 1e-3,
        ..TrainConfig::default()
    };

    let mut trunk = strats::model::StratsModel::<f32>::new(config.clone(), 1)?;
    let history = pretrain(&mut trunk, &data.forecast_train, &data.forecast_val, &train)?;
    println!(
        "pretrained for {} epochs, best val MSE {:.4}",
        history.records.len(),
        history.best_metric().unwrap()
    );

    let mut model = init_finetune_model(&config, 2, FinetuneInit::FromPretrained(&trunk))?;
    let (labeled, val) = data.labeled(1.0, 0)?;
    let history = finetune_with(&mut model, &labeled, &val, &train, &mut |r| {
        println!(
            "epoch {}: loss {:.4}, val ROC+PR {:.4}",
            r.epoch, r.train_loss, r.val_metric
        )
    })?;
    let metrics = evaluate(&model, &data.test)?;
    println!(
        "best epoch {}; test ROC-AUC {:.3}, PR-AUC {:.3}, min(Re,Pr) {:.3}",
        history.best_epoch, metrics.roc_auc, metrics.pr_auc, metrics.min_re_pr
    );
    Ok(metrics)
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
