// Cut stays into observation / prediction windows for forecast pretraining.

use strats::data::{
    build_forecast_windows, fit_normalizer, generate_synthetic, SyntheticConfig, WindowSpec,
};

pub fn run_example() -> strats::Result<usize> {
    let dataset = generate_synthetic(&SyntheticConfig {
        n_patients: 20,
        ..SyntheticConfig::default()
    })?;
    let stats = fit_normalizer(&dataset.samples, dataset.n_variables(), 48.0)?;

    let mimic = WindowSpec::mimic_style();
    println!(
        "mimic-style spec: {} candidate windows per stay",
        mimic.candidate_windows().len()
    );

    let spec = WindowSpec::physionet_style();
    let windows = build_forecast_windows(&dataset.samples, &spec, &stats)?;
    let first = &windows[0];
    let observed = first.forecast_mask.iter().filter(|&&m| m).count();
    println!(
        "{} windows from {} stays; first is [{}, {}) h with {} inputs and {observed} targets",
        windows.len(),
        dataset.samples.len(),
        first.window_start,
        first.window_end,
        first.base.triplets.len()
    );
    Ok(windows.len())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
