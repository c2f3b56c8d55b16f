// Save a model with its normalization statistics and load it back bit for bit.

use strats::data::Normalizer;
use strats::model::{ModelConfig, StratsModel};
use strats::training::{load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint};

pub fn run_example() -> strats::Result<String> {
    let model = StratsModel::<f32>::new(ModelConfig::new(5, 2), 9)?;
    let mut checkpoint = Checkpoint::new(model.clone(), Some(Normalizer::identity(5, 2)));
    checkpoint
        .metadata
        .insert("stage".into(), "finetune".into());

    let path = std::env::temp_dir().join(format!("strats-example-{}.strats", std::process::id()));
    let sha = save_checkpoint(&path, &checkpoint)?;
    println!("saved {} ({sha})", path.display());

    let back = load_checkpoint_for(&path, model.config())?;
    for (name, value) in model.params().iter() {
        assert_eq!(value, back.model.params().get(name).unwrap());
    }

    let mut bytes = std::fs::read(&path).map_err(strats::Error::io(&path))?;
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&path, &bytes).map_err(strats::Error::io(&path))?;
    let err = load_checkpoint(&path).unwrap_err();
    println!("corrupted copy rejected: {err}");
    std::fs::remove_file(&path).ok();
    Ok(sha)
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
