// Generate a small synthetic ICU cohort, write it as CSV, and read it back.

use strats::data::{export_csv, generate_synthetic, load_data_dir, SyntheticConfig};

pub fn run_example() -> strats::Result<usize> {
    let config = SyntheticConfig {
        n_patients: 50,
        ..SyntheticConfig::default()
    };
    let dataset = generate_synthetic(&config)?;
    let stays = dataset.samples.len();
    let positives = dataset.labeled().filter(|s| s.label == Some(1)).count();
    println!(
        "{stays} stays, {} variables, missing rate {:.2}, {positives} positive",
        dataset.n_variables(),
        dataset.missing_rate()
    );

    let dir = std::env::temp_dir().join(format!("strats-synthetic-{}", std::process::id()));
    let files = export_csv(&dataset, &dir)?;
    println!("wrote {}", files.triplets.display());
    let back = load_data_dir(&dir)?;
    assert_eq!(back, dataset);
    std::fs::remove_dir_all(&dir).ok();
    Ok(stays)
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
