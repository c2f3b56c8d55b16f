//! The `strats` command line: synth, pretrain, train, evaluate, explain and
//! experiment. Every command writes into an explicit output directory that
//! ends up holding exactly one `manifest.json`.

mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::data::{
    export_csv, generate_synthetic, load_data_dir, normalize, split_patients,
    truncate_observations, DataError, Dataset, SplitRatios,
};
use crate::error::{Error, Result};
use crate::metrics::MetricSet;
use crate::model::StratsModel;
use crate::training::{
    evaluate, file_sha256, finetune_with, init_finetune_model, load_checkpoint,
    load_checkpoint_for, predict, prepare_experiment, prepare_target, pretrain_with,
    run_experiment_with, save_checkpoint, Checkpoint, FinetuneInit, ModelVariant, PreparedData,
};

pub use config::{load_run_config, load_synthetic_config, Loaded, RunConfig};

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

pub const CHECKPOINT_FILE: &str = "checkpoint.strats";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(
    name = "strats",
    version,
    about = "Triplet Transformer for sparse irregular time series"
)]
pub struct Cli {
    /// Worker threads for batch gradients and experiment runs.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset in the CSV layout.
    Synth(SynthArgs),
    /// Forecast-pretrain a model on every train/validation stay.
    Pretrain(TrainArgs),
    /// Fine-tune on the target task, optionally from a pretrained checkpoint.
    Train(TrainArgs),
    /// Score the test split with a checkpoint.
    Evaluate(EvaluateArgs),
    /// Contribution scores of one stay under an interpretable checkpoint.
    Explain(ExplainArgs),
    /// Labeled-fraction sweep with and without pretraining, for both models.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from the small benchmark preset instead of the default.
    #[arg(long)]
    pub benchmark: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Pretrained checkpoint whose trunk initializes fine-tuning.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Use the interpretable variant.
    #[arg(long)]
    pub interpretable: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub stay: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: Option<String>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub wall_clock_seconds: f64,
    pub versions: BTreeMap<String, String>,
    pub lineage: BTreeMap<String, String>,
}

impl RunManifest {
    fn new(command: &str, config_hash: Option<String>) -> Self {
        let versions = BTreeMap::from([
            ("strats".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            (
                "checkpoint_format".to_string(),
                crate::training::CHECKPOINT_VERSION.to_string(),
            ),
        ]);
        Self {
            command: command.into(),
            config_hash,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_clock_seconds: 0.0,
            versions,
            lineage: BTreeMap::new(),
        }
    }

    fn write(mut self, out: &Path, started: Instant) -> Result<()> {
        self.wall_clock_seconds = started.elapsed().as_secs_f64();
        write_file(
            &out.join(MANIFEST_FILE),
            serde_json::to_string_pretty(&self)?.as_bytes(),
        )
    }
}

/// The evaluation report schema.
#[derive(Debug, Clone, Serialize)]
pub struct EvaluationReport {
    pub metrics: MetricSet,
    pub n_test: usize,
    pub config_hash: String,
    pub checkpoint_hash: String,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(Error::io(path))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(Error::io(path))
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

/// Parses `args` (including the program name), runs the command, and
/// returns the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} threads: {e}", cli.threads)))?;
    pool.install(|| match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Pretrain(a) => cmd_pretrain(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Explain(a) => cmd_explain(&a),
        Command::Experiment(a) => cmd_experiment(&a),
    })
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let started = Instant::now();
    let mut loaded = load_synthetic_config(args.config.as_deref())?;
    if args.config.is_none() && args.benchmark {
        loaded.config = crate::data::SyntheticConfig::benchmark();
    }
    if let Some(seed) = args.seed {
        loaded.config.seed = seed;
    }
    let dataset = generate_synthetic(&loaded.config)?;
    let files = export_csv(&dataset, &args.out)?;
    let mut manifest = RunManifest::new("synth", loaded.hash);
    manifest.seeds.insert("seed".into(), loaded.config.seed);
    manifest.inputs.extend(args.config.as_deref().map(display));
    manifest.outputs = [
        &files.triplets,
        &files.demographics,
        &files.labels,
        &files.vocabulary,
        &files.patients,
    ]
    .iter()
    .map(|p| display(p))
    .collect();
    manifest.write(&args.out, started)
}

fn split_metadata(
    config: &RunConfig,
    seed: u64,
    config_hash: &Option<String>,
) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("seed".into(), seed.to_string());
    m.insert("split_seed".into(), config.split_seed.to_string());
    m.insert("split_train".into(), config.split_train.to_string());
    m.insert("split_val".into(), config.split_val.to_string());
    m.insert("split_test".into(), config.split_test.to_string());
    m.insert("window".into(), config.window.clone());
    if let Some(h) = config_hash {
        m.insert("config_hash".into(), h.clone());
    }
    m
}

fn prepare(dataset: &Dataset, config: &RunConfig) -> Result<PreparedData> {
    prepare_experiment(
        dataset,
        &config.split_ratios(),
        config.split_seed,
        &config.window_spec()?,
        config.time_scale,
    )
}

fn variant(interpretable: bool) -> ModelVariant {
    if interpretable {
        ModelVariant::IStrats
    } else {
        ModelVariant::Strats
    }
}

fn log_epoch(stage: &'static str) -> impl FnMut(&crate::training::EpochRecord) {
    move |r| {
        eprintln!(
            "{stage} epoch {:>3}: train loss {:.5}, val {:.5} (best {:.5})",
            r.epoch, r.train_loss, r.val_metric, r.best_so_far
        )
    }
}

pub fn cmd_pretrain(args: &TrainArgs) -> Result<()> {
    let started = Instant::now();
    if args.init.is_some() {
        return Err(Error::Config(
            "--init applies to `train`, not `pretrain`".into(),
        ));
    }
    let loaded = load_run_config(args.config.as_deref())?;
    let seed = args.seed.unwrap_or(loaded.config.seed);
    let dataset = load_data_dir(&args.data)?;
    let data = prepare(&dataset, &loaded.config)?;
    let model_config =
        data.model_config(&loaded.config.model_template(), variant(args.interpretable));
    let mut model = StratsModel::<f32>::new(model_config, seed)?;
    let train_config = crate::training::TrainConfig {
        seed,
        ..loaded.config.train_config()
    };
    let history = pretrain_with(
        &mut model,
        &data.forecast_train,
        &data.forecast_val,
        &train_config,
        &mut log_epoch("pretrain"),
    )?;
    create_dir(&args.out)?;
    let mut checkpoint = Checkpoint::new(model, Some(data.normalizer.clone()));
    checkpoint.metadata = split_metadata(&loaded.config, seed, &loaded.hash);
    checkpoint
        .metadata
        .insert("stage".into(), "pretrain".into());
    checkpoint
        .metadata
        .insert("best_epoch".into(), history.best_epoch.to_string());
    let ck_path = args.out.join(CHECKPOINT_FILE);
    let ck_hash = save_checkpoint(&ck_path, &checkpoint)?;
    let history_path = args.out.join(HISTORY_FILE);
    history.write_jsonl(&history_path)?;

    let mut manifest = RunManifest::new("pretrain", loaded.hash);
    manifest.seeds.insert("seed".into(), seed);
    manifest
        .seeds
        .insert("split_seed".into(), loaded.config.split_seed);
    manifest.inputs.push(display(&args.data));
    manifest.inputs.extend(args.config.as_deref().map(display));
    manifest.outputs = vec![display(&ck_path), display(&history_path)];
    manifest.lineage.insert("checkpoint_sha256".into(), ck_hash);
    manifest.write(&args.out, started)
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let started = Instant::now();
    let loaded = load_run_config(args.config.as_deref())?;
    let seed = args.seed.unwrap_or(loaded.config.seed);
    let dataset = load_data_dir(&args.data)?;
    let data = prepare(&dataset, &loaded.config)?;
    let model_config =
        data.model_config(&loaded.config.model_template(), variant(args.interpretable));
    let parent = match &args.init {
        Some(path) => Some((
            load_checkpoint_for(path, &model_config)?,
            file_sha256(path)?,
        )),
        None => None,
    };
    let init = match &parent {
        Some((ck, _)) => FinetuneInit::FromPretrained(&ck.model),
        None => FinetuneInit::Fresh,
    };
    let mut model = init_finetune_model(&model_config, seed, init)?;
    let (train, val) = data.labeled(loaded.config.labeled_fraction, seed)?;
    let train_config = crate::training::TrainConfig {
        seed,
        ..loaded.config.train_config()
    };
    let history = finetune_with(
        &mut model,
        &train,
        &val,
        &train_config,
        &mut log_epoch("train"),
    )?;
    create_dir(&args.out)?;
    let mut checkpoint = Checkpoint::new(model, Some(data.normalizer.clone()));
    checkpoint.metadata = split_metadata(&loaded.config, seed, &loaded.hash);
    checkpoint
        .metadata
        .insert("stage".into(), "finetune".into());
    checkpoint
        .metadata
        .insert("best_epoch".into(), history.best_epoch.to_string());
    checkpoint.metadata.insert(
        "labeled_fraction".into(),
        loaded.config.labeled_fraction.to_string(),
    );
    if let Some((_, hash)) = &parent {
        checkpoint
            .metadata
            .insert("parent_sha256".into(), hash.clone());
    }
    let ck_path = args.out.join(CHECKPOINT_FILE);
    let ck_hash = save_checkpoint(&ck_path, &checkpoint)?;
    let history_path = args.out.join(HISTORY_FILE);
    history.write_jsonl(&history_path)?;

    let mut manifest = RunManifest::new("train", loaded.hash);
    manifest.seeds.insert("seed".into(), seed);
    manifest
        .seeds
        .insert("split_seed".into(), loaded.config.split_seed);
    manifest.inputs.push(display(&args.data));
    manifest.inputs.extend(args.config.as_deref().map(display));
    manifest.inputs.extend(args.init.as_deref().map(display));
    manifest.outputs = vec![display(&ck_path), display(&history_path)];
    manifest.lineage.insert("checkpoint_sha256".into(), ck_hash);
    if let Some((_, hash)) = parent {
        manifest
            .lineage
            .insert("init_checkpoint_sha256".into(), hash);
    }
    manifest.write(&args.out, started)
}

fn metadata_value<T: std::str::FromStr>(checkpoint: &Checkpoint, key: &str) -> Result<T> {
    checkpoint
        .metadata
        .get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Checkpoint(format!("metadata lacks a valid `{key}`")))
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let started = Instant::now();
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let checkpoint_hash = file_sha256(&args.checkpoint)?;
    let normalizer = checkpoint
        .normalizer
        .clone()
        .ok_or_else(|| Error::Checkpoint("checkpoint has no normalization statistics".into()))?;
    let ratios = SplitRatios {
        train: metadata_value(&checkpoint, "split_train")?,
        val: metadata_value(&checkpoint, "split_val")?,
        test: metadata_value(&checkpoint, "split_test")?,
    };
    let split_seed: u64 = metadata_value(&checkpoint, "split_seed")?;
    let dataset = load_data_dir(&args.data)?;
    let split = split_patients(&dataset.samples, ratios, split_seed)?;
    let model = &checkpoint.model;
    let test = prepare_target(&split.test, &normalizer, model.config().max_observations)?;
    let metrics = evaluate(model, &test)?;
    let scores = predict(model, &test)?;

    create_dir(&args.out)?;
    let report = EvaluationReport {
        metrics,
        n_test: test.len(),
        config_hash: model.config().fingerprint(),
        checkpoint_hash: checkpoint_hash.clone(),
    };
    let report_path = args.out.join("report.json");
    write_file(
        &report_path,
        serde_json::to_string_pretty(&report)?.as_bytes(),
    )?;
    let mut csv = String::from("stay_id,label,probability\n");
    for (e, p) in test.iter().zip(&scores) {
        csv.push_str(&format!("{},{},{}\n", e.sample.stay_id, e.label, p));
    }
    let scores_path = args.out.join("scores.csv");
    write_file(&scores_path, csv.as_bytes())?;

    let mut manifest = RunManifest::new("evaluate", None);
    manifest.seeds.insert("split_seed".into(), split_seed);
    manifest.inputs = vec![display(&args.checkpoint), display(&args.data)];
    manifest.outputs = vec![display(&report_path), display(&scores_path)];
    manifest
        .lineage
        .insert("checkpoint_sha256".into(), checkpoint_hash);
    manifest.write(&args.out, started)
}

/// One variable's total contribution and value range.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableContribution {
    pub variable: String,
    pub total_score: f64,
    pub n_observations: usize,
    pub min_value: f64,
    pub max_value: f64,
}

impl VariableContribution {
    /// A single number when min equals max, otherwise `min to max`.
    pub fn range(&self) -> String {
        if self.min_value == self.max_value {
            format!("{}", self.min_value)
        } else {
            format!("{} to {}", self.min_value, self.max_value)
        }
    }
}

/// Per-variable totals, sorted by descending score.
pub fn variable_table(
    names: &[String],
    observations: &[(f64, usize, f64, f64)],
) -> Vec<VariableContribution> {
    let mut rows: BTreeMap<usize, VariableContribution> = BTreeMap::new();
    for &(_, var, value, score) in observations {
        let row = rows.entry(var).or_insert_with(|| VariableContribution {
            variable: names[var].clone(),
            total_score: 0.0,
            n_observations: 0,
            min_value: value,
            max_value: value,
        });
        row.total_score += score;
        row.n_observations += 1;
        row.min_value = row.min_value.min(value);
        row.max_value = row.max_value.max(value);
    }
    let mut rows: Vec<_> = rows.into_values().collect();
    rows.sort_by(|a, b| b.total_score.total_cmp(&a.total_score));
    rows
}

pub fn cmd_explain(args: &ExplainArgs) -> Result<()> {
    let started = Instant::now();
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let model = &checkpoint.model;
    if !model.config().interpretable {
        return Err(Error::Model(
            "explain needs a checkpoint of the interpretable variant (train --interpretable)"
                .into(),
        ));
    }
    let normalizer = checkpoint
        .normalizer
        .clone()
        .ok_or_else(|| Error::Checkpoint("checkpoint has no normalization statistics".into()))?;
    let dataset = load_data_dir(&args.data)?;
    let raw = dataset.find(&args.stay).ok_or_else(|| {
        Error::Data(DataError::InvalidArgument(format!(
            "unknown stay_id `{}`",
            args.stay
        )))
    })?;
    let raw = truncate_observations(raw, model.config().max_observations);
    let report = model.contribution_scores(&normalize(&raw, &normalizer)?)?;

    create_dir(&args.out)?;
    let names = dataset.vocabulary.names();
    let mut contributions = String::from("kind,name,time,value,score\n");
    let mut observations = Vec::with_capacity(raw.triplets.len());
    for (o, &score) in raw.triplets.iter().zip(&report.observation_scores) {
        contributions.push_str(&format!(
            "observation,{},{},{},{}\n",
            names[o.variable], o.time, o.value, score
        ));
        observations.push((o.time, o.variable, o.value, score));
    }
    for ((name, value), score) in dataset
        .demographic_names
        .iter()
        .zip(&raw.demographics)
        .zip(&report.demographic_scores)
    {
        contributions.push_str(&format!("demographic,{name},,{value},{score}\n"));
    }
    let contributions_path = args.out.join("contributions.csv");
    write_file(&contributions_path, contributions.as_bytes())?;

    let mut table = String::from("variable,total_score,n_observations,range\n");
    for row in variable_table(names, &observations) {
        table.push_str(&format!(
            "{},{},{},{}\n",
            row.variable,
            row.total_score,
            row.n_observations,
            row.range()
        ));
    }
    let table_path = args.out.join("variables.csv");
    write_file(&table_path, table.as_bytes())?;

    let mut series = observations.clone();
    series.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.total_cmp(&b.0)));
    let mut plot = String::from("variable,time,value,score\n");
    for (t, v, value, score) in series {
        plot.push_str(&format!("{},{t},{value},{score}\n", names[v]));
    }
    let series_path = args.out.join("series.csv");
    write_file(&series_path, plot.as_bytes())?;

    #[derive(Serialize)]
    struct Summary<'a> {
        stay_id: &'a str,
        logit: f64,
        bias: f64,
        probability: f64,
        n_observations: usize,
        n_demographics: usize,
    }
    let summary_path = args.out.join("summary.json");
    let summary = Summary {
        stay_id: &args.stay,
        logit: report.logit,
        bias: report.bias,
        probability: report.probability,
        n_observations: raw.triplets.len(),
        n_demographics: raw.demographics.len(),
    };
    write_file(
        &summary_path,
        serde_json::to_string_pretty(&summary)?.as_bytes(),
    )?;

    let mut manifest = RunManifest::new("explain", None);
    manifest.inputs = vec![display(&args.checkpoint), display(&args.data)];
    manifest.outputs = vec![
        display(&contributions_path),
        display(&table_path),
        display(&series_path),
        display(&summary_path),
    ];
    manifest
        .lineage
        .insert("checkpoint_sha256".into(), file_sha256(&args.checkpoint)?);
    manifest.write(&args.out, started)
}

pub fn cmd_experiment(args: &ExperimentArgs) -> Result<()> {
    let started = Instant::now();
    let loaded = load_run_config(args.config.as_deref())?;
    let mut config = loaded.config.clone();
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let dataset = load_data_dir(&args.data)?;
    let data = prepare(&dataset, &config)?;
    let report = run_experiment_with(&data, &config.experiment_config(), &|line| {
        eprintln!("{line}")
    })?;
    create_dir(&args.out)?;
    let json_path = args.out.join("report.json");
    write_file(
        &json_path,
        serde_json::to_string_pretty(&report)?.as_bytes(),
    )?;
    let csv_path = args.out.join("report.csv");
    write_file(&csv_path, report.to_csv().as_bytes())?;

    let mut manifest = RunManifest::new("experiment", loaded.hash);
    for r in 0..config.n_runs {
        manifest
            .seeds
            .insert(format!("run{r}"), config.seed + r as u64);
    }
    manifest
        .seeds
        .insert("split_seed".into(), config.split_seed);
    manifest.inputs.push(display(&args.data));
    manifest.inputs.extend(args.config.as_deref().map(display));
    manifest.outputs = vec![display(&json_path), display(&csv_path)];
    manifest.write(&args.out, started)
}
