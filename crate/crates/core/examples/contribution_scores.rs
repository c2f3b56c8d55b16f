// Decompose an interpretable model's logit into per-observation and
// per-demographic scores, then rank variables by total score.

use strats::cli::variable_table;
use strats::data::{fit_normalizer, generate_synthetic, normalize, SyntheticConfig};
use strats::model::{ModelConfig, StratsModel};

pub fn run_example() -> strats::Result<f64> {
    let dataset = generate_synthetic(&SyntheticConfig {
        n_patients: 10,
        ..SyntheticConfig::default()
    })?;
    let stats = fit_normalizer(&dataset.samples, dataset.n_variables(), 48.0)?;
    let config = ModelConfig {
        d: 16,
        interpretable: true,
        ..ModelConfig::new(dataset.n_variables(), dataset.n_demographics())
    };
    let model = StratsModel::<f32>::new(config, 3)?;

    let raw = &dataset.samples[0];
    let report = model.contribution_scores(&normalize(raw, &stats)?)?;
    let gap = (report.reconstructed_logit() - report.logit).abs();
    println!(
        "logit {:.5}, scores + bias {:.5}",
        report.logit,
        report.reconstructed_logit()
    );

    let observations: Vec<(f64, usize, f64, f64)> = raw
        .triplets
        .iter()
        .zip(&report.observation_scores)
        .map(|(o, &s)| (o.time, o.variable, o.value, s))
        .collect();
    for row in variable_table(dataset.vocabulary.names(), &observations)
        .iter()
        .take(5)
    {
        println!(
            "{:>8} {:+.4}  {}",
            row.variable,
            row.total_score,
            row.range()
        );
    }
    assert!(gap < 1e-5);
    Ok(gap)
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
