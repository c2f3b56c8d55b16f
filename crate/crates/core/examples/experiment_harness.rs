// Repeated runs over labeled fractions, with and without pretraining, for
// both model variants; prints the aggregate table.

use strats::data::{generate_synthetic, SplitRatios, SyntheticConfig, WindowSpec};
use strats::model::ModelConfig;
use strats::training::*;

pub fn run_example() -> strats::Result<ExperimentReport> {
    let dataset = generate_synthetic(&SyntheticConfig {
        n_patients: 240,
        mean_observations_per_stay: 10.0,
        ..SyntheticConfig::default()
    })?;
    let data = prepare_experiment(
        &dataset,
        &SplitRatios::default(),
        0,
        &WindowSpec::physionet_style(),
        None,
    )?;
    let config = ExperimentConfig {
        fractions: vec![0.5, 1.0],
        n_runs: 2,
        ss_modes: vec![SsMode::Without, SsMode::With],
        variants: vec![ModelVariant::Strats, ModelVariant::IStrats],
        base_seed: 0,
        model: ModelConfig {
            d: 8,
            n_heads: 2,
            n_blocks: 1,
            ..ModelConfig::new(0, 0)
        },
        train: TrainConfig {
            max_epochs: 2,
            pretrain_epoch_size: 128,
            ..TrainConfig::default()
        },
    };
    let report = run_experiment_with(&data, &config, &|line| println!("{line}"))?;
    print!("{}", report.to_csv());
    Ok(report)
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
