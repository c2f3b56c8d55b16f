// Check reverse-mode gradients of the full model against finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use strats::data::{ObservationTriplet, TimeSeriesSample};
use strats::model::{ModelConfig, StratsModel};
use strats::numerics::{grad_check, GradCheckOptions, ParameterStore, Tape, Var};
use strats::training::{Example, TargetExample};

pub fn run_example() -> strats::Result<f64> {
    let config = ModelConfig {
        d: 8,
        n_heads: 2,
        ..ModelConfig::new(3, 2)
    };
    let model = StratsModel::<f64>::new(config.clone(), 1)?;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut triplets: Vec<ObservationTriplet> = (0..6)
        .map(|_| {
            ObservationTriplet::new(
                rng.gen_range(0.0..1.0),
                rng.gen_range(0..3),
                rng.gen_range(-2.0..2.0),
            )
        })
        .collect();
    triplets.sort_by(ObservationTriplet::order_key);
    let example = TargetExample {
        sample: TimeSeriesSample {
            stay_id: "a".into(),
            patient_id: "a".into(),
            triplets,
            demographics: vec![0.3, -1.1],
            label: Some(1),
        },
        label: 1,
    };

    let loss = |store: &ParameterStore<f64>, tape: &mut Tape<f64>| -> strats::Result<Var> {
        let m = StratsModel::from_params(config.clone(), store.clone())?;
        example.record_loss(&m, tape, None)
    };
    let report = grad_check(loss, model.params(), &GradCheckOptions::default())?;
    let worst = report.worst().expect("model has parameters");
    println!(
        "{} tensors checked, worst relative error {:.2e} in {}",
        report.params.len(),
        worst.max_relative_error,
        worst.name
    );
    assert!(report.passed());
    Ok(report.max_relative_error())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
