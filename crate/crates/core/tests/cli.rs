use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use strats::cli::{main_with_args, variable_table, EXIT_VALIDATION};
use strats::data::{ingest_csv, read_vocabulary, DataFiles};

fn strats(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("strats").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SYNTH: &str = "n_patients = 60
n_variables = 5
target_missing_rate = 0.3
mean_observations_per_stay = 10.0
span_hours = 48.0
label_noise = 0.0
seed = 11
";

const RUN: &str = "d = 8
n_heads = 2
n_blocks = 1
max_epochs = 2
pretrain_epoch_size = 32
batch_size = 8
window = \"physionet\"
";

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        fs::write(root.join("synth.toml"), SYNTH).unwrap();
        fs::write(root.join("run.toml"), RUN).unwrap();
        Self { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn synth(&self, out: &str) -> PathBuf {
        let out = self.path(out);
        let cfg = self.path("synth.toml");
        assert_eq!(strats(&["synth", "--config", p(&cfg), "--out", p(&out)]), 0);
        out
    }
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn synth_output_parses_back_and_is_reproducible() {
    let ws = Workspace::new();
    let a = ws.synth("a");
    let b = ws.synth("b");
    let files_a = read_dir_bytes(&a);
    assert!(files_a.contains_key("triplets.csv"));
    assert_eq!(files_a, read_dir_bytes(&b));
    assert_eq!(manifest(&a)["command"], "synth");
    assert_eq!(manifest(&a)["seeds"]["seed"], 11);

    let files = DataFiles::in_dir(&a);
    let vocab = read_vocabulary(&files.vocabulary).unwrap();
    let data = ingest_csv(&files.triplets, &files.demographics, &files.labels, &vocab).unwrap();
    assert_eq!(data.samples.len(), 60);

    let c = ws.path("c");
    let cfg = ws.path("synth.toml");
    assert_eq!(
        strats(&["synth", "--config", p(&cfg), "--seed", "12", "--out", p(&c)]),
        0
    );
    assert_ne!(files_a, read_dir_bytes(&c));
}

#[test]
fn invalid_synth_config_writes_nothing() {
    let ws = Workspace::new();
    fs::write(
        ws.path("zero.toml"),
        SYNTH.replace("n_patients = 60", "n_patients = 0"),
    )
    .unwrap();
    let out = ws.path("zero");
    assert_eq!(
        strats(&[
            "synth",
            "--config",
            p(&ws.path("zero.toml")),
            "--out",
            p(&out)
        ]),
        EXIT_VALIDATION
    );
    assert!(!out.exists());
}

#[test]
fn unknown_config_keys_and_bad_flags_are_validation_errors() {
    let ws = Workspace::new();
    let data = ws.synth("data");
    fs::write(ws.path("typo.toml"), "learning_rat = 0.01\n").unwrap();
    let out = ws.path("typo");
    let code = strats(&[
        "train",
        "--data",
        p(&data),
        "--config",
        p(&ws.path("typo.toml")),
        "--out",
        p(&out),
    ]);
    assert_eq!(code, EXIT_VALIDATION);
    assert_eq!(strats(&["train", "--bogus"]), EXIT_VALIDATION);
    assert_eq!(
        strats(&[
            "evaluate",
            "--checkpoint",
            "/nonexistent",
            "--data",
            p(&data),
            "--out",
            p(&out)
        ]),
        3
    );
}

#[test]
fn pretrain_train_evaluate_and_explain() {
    let ws = Workspace::new();
    let data = ws.synth("data");
    let cfg = ws.path("run.toml");

    let pre = ws.path("pre");
    let code = strats(&[
        "pretrain",
        "--data",
        p(&data),
        "--config",
        p(&cfg),
        "--seed",
        "3",
        "--interpretable",
        "--out",
        p(&pre),
    ]);
    assert_eq!(code, 0);
    let plain = ws.path("plain");
    assert_eq!(
        strats(&[
            "pretrain",
            "--data",
            p(&data),
            "--config",
            p(&cfg),
            "--out",
            p(&plain)
        ]),
        0
    );
    assert!(pre.join("checkpoint.strats").exists());
    assert!(pre.join("history.jsonl").exists());

    let fine = ws.path("fine");
    let init = pre.join("checkpoint.strats");
    let mismatched = plain.join("checkpoint.strats");
    let code = strats(&[
        "train",
        "--data",
        p(&data),
        "--config",
        p(&cfg),
        "--init",
        p(&mismatched),
        "--interpretable",
        "--out",
        p(&ws.path("bad")),
    ]);
    assert_eq!(code, 3);
    let code = strats(&[
        "train",
        "--data",
        p(&data),
        "--config",
        p(&cfg),
        "--seed",
        "3",
        "--init",
        p(&init),
        "--interpretable",
        "--out",
        p(&fine),
    ]);
    assert_eq!(code, 0);
    let m = manifest(&fine);
    let parent = strats::training::file_sha256(&init).unwrap();
    assert_eq!(m["lineage"]["init_checkpoint_sha256"], parent.as_str());
    assert!(m["inputs"]
        .as_array()
        .unwrap()
        .iter()
        .any(|v| v.as_str() == Some(p(&init))));

    let eval = ws.path("eval");
    let ck = fine.join("checkpoint.strats");
    assert_eq!(
        strats(&[
            "evaluate",
            "--checkpoint",
            p(&ck),
            "--data",
            p(&data),
            "--out",
            p(&eval)
        ]),
        0
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(eval.join("report.json")).unwrap()).unwrap();
    for key in ["roc_auc", "pr_auc", "min_re_pr"] {
        let v = report["metrics"][key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{key}");
    }
    let scores = fs::read_to_string(eval.join("scores.csv")).unwrap();
    assert_eq!(
        scores.lines().count() as u64,
        report["n_test"].as_u64().unwrap() + 1
    );
    // rerunning evaluation reproduces the report exactly
    let eval2 = ws.path("eval2");
    assert_eq!(
        strats(&[
            "evaluate",
            "--checkpoint",
            p(&ck),
            "--data",
            p(&data),
            "--out",
            p(&eval2)
        ]),
        0
    );
    assert_eq!(
        fs::read(eval.join("report.json")).unwrap(),
        fs::read(eval2.join("report.json")).unwrap()
    );

    let files = DataFiles::in_dir(&data);
    let vocab = read_vocabulary(&files.vocabulary).unwrap();
    let dataset = ingest_csv(&files.triplets, &files.demographics, &files.labels, &vocab).unwrap();
    let stay = dataset
        .samples
        .iter()
        .find(|s| s.triplets.len() >= 3)
        .unwrap();
    let exp = ws.path("explain");
    assert_eq!(
        strats(&[
            "explain",
            "--checkpoint",
            p(&ck),
            "--data",
            p(&data),
            "--stay",
            &stay.stay_id,
            "--out",
            p(&exp)
        ]),
        0
    );
    let contributions = fs::read_to_string(exp.join("contributions.csv")).unwrap();
    assert_eq!(
        contributions.lines().count() - 1,
        stay.triplets.len() + stay.demographics.len()
    );
    let total: f64 = contributions
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .sum();
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(exp.join("summary.json")).unwrap()).unwrap();
    let logit = summary["logit"].as_f64().unwrap();
    assert!((total + summary["bias"].as_f64().unwrap() - logit).abs() < 1e-5);
    assert!(exp.join("variables.csv").exists() && exp.join("series.csv").exists());

    assert_eq!(
        strats(&[
            "explain",
            "--checkpoint",
            p(&ck),
            "--data",
            p(&data),
            "--stay",
            "nope",
            "--out",
            p(&ws.path("x"))
        ]),
        EXIT_VALIDATION
    );
    let plain = plain.join("checkpoint.strats");
    assert_eq!(
        strats(&[
            "explain",
            "--checkpoint",
            p(&plain),
            "--data",
            p(&data),
            "--stay",
            &stay.stay_id,
            "--out",
            p(&ws.path("y"))
        ]),
        3
    );
}

#[test]
fn variable_table_sorts_and_reports_ranges() {
    let names: Vec<String> = ["HR", "Lactate", "GCS"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows = variable_table(
        &names,
        &[(0.1, 0, 80.0, 0.2), (0.5, 0, 95.0, 0.1), (0.2, 1, 4.1, 0.9)],
    );
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].variable, "Lactate");
    assert_eq!(rows[0].range(), "4.1");
    assert_eq!(rows[1].range(), "80 to 95");
    assert!((rows[1].total_score - 0.3).abs() < 1e-12);
}

#[test]
fn experiment_writes_six_rows_per_model() {
    let ws = Workspace::new();
    fs::write(
        ws.path("synth.toml"),
        SYNTH
            .replace("n_patients = 60", "n_patients = 600")
            .replace("= 10.0", "= 6.0"),
    )
    .unwrap();
    let data = ws.synth("data");
    fs::write(
        ws.path("exp.toml"),
        format!("{RUN}fractions = [0.1, 0.5, 1.0]\nn_runs = 2\nss_modes = [\"ss-\", \"ss+\"]\nvariants = [\"strats\", \"istrats\"]\nmax_epochs = 1\n")
            .replace("max_epochs = 2\n", ""),
    )
    .unwrap();
    let out = ws.path("exp");
    let code = strats(&[
        "--threads",
        "2",
        "experiment",
        "--data",
        p(&data),
        "--config",
        p(&ws.path("exp.toml")),
        "--out",
        p(&out),
    ]);
    assert_eq!(code, 0);
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.iter().filter(|l| l.starts_with("strats,")).count(), 6);
    assert_eq!(rows.iter().filter(|l| l.starts_with("istrats,")).count(), 6);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 12);
    assert_eq!(manifest(&out)["command"], "experiment");
}
