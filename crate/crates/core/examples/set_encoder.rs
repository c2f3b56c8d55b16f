// The model treats a stay as an unordered set of triplets: shuffling the
// input leaves the prediction unchanged.

use strats::data::{ObservationTriplet, TimeSeriesSample};
use strats::model::{ForwardMode, ModelConfig, StratsModel};

pub fn run_example() -> strats::Result<f64> {
    let model = StratsModel::<f64>::new(ModelConfig::new(4, 1), 7)?;
    let triplets = vec![
        ObservationTriplet::new(0.05, 0, 0.4),
        ObservationTriplet::new(0.10, 2, -1.3),
        ObservationTriplet::new(0.10, 3, 0.9),
        ObservationTriplet::new(0.40, 0, 1.7),
        ObservationTriplet::new(0.55, 1, -0.2),
    ];
    let sample = |triplets: Vec<ObservationTriplet>| TimeSeriesSample {
        stay_id: "x".into(),
        patient_id: "x".into(),
        triplets,
        demographics: vec![0.5],
        label: None,
    };
    let a = model.forward(&sample(triplets.clone()), ForwardMode::Both)?;
    let mut reversed = triplets;
    reversed.reverse();
    let b = model.forward(&sample(reversed), ForwardMode::Both)?;

    let (pa, pb) = (a.target_probability.unwrap(), b.target_probability.unwrap());
    println!("probability {pa:.6} vs {pb:.6} after reversing the input");
    println!("fusion weights {:?}", a.attention_weights);
    println!("forecast {:?}", a.forecast.unwrap());
    assert!((a.attention_weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    Ok((pa - pb).abs())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
