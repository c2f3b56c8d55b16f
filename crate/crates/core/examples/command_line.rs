// Drive the `strats` command line in-process: synth, pretrain, train,
// evaluate, explain.

use strats::cli::main_with_args;

fn strats(args: &[&str]) -> strats::Result<()> {
    match main_with_args(std::iter::once("strats").chain(args.iter().copied())) {
        0 => Ok(()),
        code => Err(strats::Error::Training(format!(
            "`strats {}` exited with {code}",
            args[0]
        ))),
    }
}

pub fn run_example() -> strats::Result<String> {
    let root = std::env::temp_dir().join(format!("strats-cli-{}", std::process::id()));
    let path = |p: &str| root.join(p).to_string_lossy().into_owned();
    std::fs::create_dir_all(&root).map_err(strats::Error::io(&root))?;
    let synth = "n_patients = 80\nmean_observations_per_stay = 10.0\nseed = 5\n";
    std::fs::write(root.join("synth.toml"), synth).map_err(strats::Error::io(&root))?;
    let run =
        "d = 8\nn_heads = 2\nmax_epochs = 2\npretrain_epoch_size = 64\nwindow = \"physionet\"\n";
    std::fs::write(root.join("run.toml"), run).map_err(strats::Error::io(&root))?;

    strats(&[
        "synth",
        "--config",
        &path("synth.toml"),
        "--out",
        &path("data"),
    ])?;
    strats(&[
        "pretrain",
        "--data",
        &path("data"),
        "--config",
        &path("run.toml"),
        "--interpretable",
        "--out",
        &path("pre"),
    ])?;
    strats(&[
        "train",
        "--data",
        &path("data"),
        "--config",
        &path("run.toml"),
        "--interpretable",
        "--init",
        &path("pre/checkpoint.strats"),
        "--out",
        &path("fine"),
    ])?;
    strats(&[
        "evaluate",
        "--checkpoint",
        &path("fine/checkpoint.strats"),
        "--data",
        &path("data"),
        "--out",
        &path("eval"),
    ])?;
    let report =
        std::fs::read_to_string(root.join("eval/report.json")).map_err(strats::Error::io(&root))?;
    println!("{report}");

    let stay = strats::data::load_data_dir(&root.join("data"))?.samples[0]
        .stay_id
        .clone();
    strats(&[
        "explain",
        "--checkpoint",
        &path("fine/checkpoint.strats"),
        "--data",
        &path("data"),
        "--stay",
        &stay,
        "--out",
        &path("explain"),
    ])?;
    let table = std::fs::read_to_string(root.join("explain/variables.csv"))
        .map_err(strats::Error::io(&root))?;
    println!("{table}");
    std::fs::remove_dir_all(&root).ok();
    Ok(report)
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
