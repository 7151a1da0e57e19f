//! The `dmfp` command line: synthetic data, training, prediction,
//! evaluation and parameter sweeps, each run stored under a directory named
//! by its configuration hash.

pub mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use dmfp_core::base::BaseClassifiers;
use dmfp_core::baselines::{BaselineKind, Prediction, Predictor};
use dmfp_core::data::{load_dataset, split_dataset, DatasetSplit, LabeledDataset};
use dmfp_core::eval::{paired_t_test, render_reports, render_summaries, EvalReport, PairedTTest};
use dmfp_core::fusion::Variant;
use dmfp_core::pipeline::{evaluate, multi_seed_run, predict_all, sweep, Evaluation, TrainedPipeline};
use dmfp_core::synth::{generate, write_synthetic};
use dmfp_core::worked_example::run_worked_example;
use dmfp_core::DmfpError;
use log::info;
use serde::Serialize;
use serde_json::json;

use crate::config::{LoadedConfig, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{message}")]
    Config { message: String, keys: Vec<String> },
    #[error(transparent)]
    Core(#[from] DmfpError),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::Core(e) => e.kind(),
            CliError::Usage(_) => "usage",
        }
    }

    /// Machine-readable form printed on stderr.
    pub fn to_json(&self) -> String {
        let mut body = json!({ "kind": self.kind(), "message": self.to_string() });
        if let CliError::Config { keys, .. } = self {
            body["keys"] = json!(keys);
        }
        json!({ "error": body }).to_string()
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "dmfp", version, about = "Competence-weighted fusion of per-modality privacy classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration; relative paths inside resolve against its directory.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Root directory for outputs (overrides `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Ablation variant(s), e.g. NoPhi3 or NV_CL; comma-separated or repeated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub variant: Vec<String>,
    /// Baseline(s), e.g. majority-vote; comma-separated or repeated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub baseline: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset (manifest, CSVs and region truth).
    Generate,
    /// Train base classifiers, competence models and requested baselines.
    Train,
    /// Emit JSON-lines decisions of trained systems.
    Predict {
        /// Manifest of the records to label; the test split by default.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Score trained systems on the test split.
    Evaluate {
        /// Retrain and evaluate over this many consecutive seeds.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Private-class F1 over the configured (k_v, k_p) grid.
    Sweep,
    /// Print the step-by-step twelve-record worked example.
    #[command(name = "reproduce-figure3")]
    ReproduceFigure3,
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let msg = e.to_string();
                eprintln!("{}", CliError::Usage(msg.trim().to_string()).to_json());
                return 2;
            }
            print!("{e}");
            return 0;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            1
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut loaded = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        loaded.config.set_seed(seed);
    }
    if let Some(out) = &cli.out {
        loaded.config.out = out.clone();
        loaded.base_dir = PathBuf::from(".");
    }
    // Predict picks among trained systems; elsewhere the flags extend the
    // configuration and hence its hash.
    if !matches!(cli.command, Command::Predict { .. }) {
        extend(&mut loaded.config.systems.variants, &cli.variant);
        extend(&mut loaded.config.systems.baselines, &cli.baseline);
    }
    if !matches!(cli.command, Command::ReproduceFigure3) {
        loaded.config.validate()?;
    }
    match &cli.command {
        Command::Generate => cmd_generate(&loaded),
        Command::Train => cmd_train(&loaded),
        Command::Predict { input } => cmd_predict(&loaded, input.as_deref(), &cli.variant, &cli.baseline),
        Command::Evaluate { seeds } => cmd_evaluate(&loaded, seeds.unwrap_or(loaded.config.evaluate.seeds)),
        Command::Sweep => cmd_sweep(&loaded),
        Command::ReproduceFigure3 => {
            emit(&run_worked_example()?.render())
        }
    }
}

fn extend(list: &mut Vec<String>, extra: &[String]) {
    for x in extra {
        if !list.contains(x) {
            list.push(x.clone());
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Run directory layout: `models/`, `predictions/`, `reports/` and the
/// configuration echo.
pub struct RunDir {
    pub root: PathBuf,
    pub hash: String,
}

impl RunDir {
    pub fn of(loaded: &LoadedConfig) -> RunDir {
        let hash = loaded.config.hash();
        RunDir {
            root: resolve(&loaded.base_dir, &loaded.config.out).join(format!("run-{}", &hash[..8])),
            hash,
        }
    }

    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn predictions(&self) -> PathBuf {
        self.root.join("predictions")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    fn create(&self, cfg: &RunConfig) -> Result<()> {
        for d in [self.models(), self.predictions(), self.reports()] {
            fs::create_dir_all(&d).map_err(|e| DmfpError::io(&d, e))?;
        }
        write_text(
            &self.root.join("config.toml"),
            &format!("# config_hash = \"{}\"\n{}", self.hash, cfg.to_toml()),
        )
    }
}

/// Writes to stdout; a reader that hung up early is not an error.
fn emit(text: &str) -> Result<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(DmfpError::io("stdout", e).into()),
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| DmfpError::io(path, e).into())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| DmfpError::parse(path.display().to_string(), e))?;
    write_text(path, &(text + "\n"))
}

fn dataset(loaded: &LoadedConfig) -> Result<LabeledDataset> {
    match &loaded.config.data.manifest {
        Some(m) => Ok(load_dataset(resolve(&loaded.base_dir, m))?),
        None => Ok(generate(&loaded.config.synth)?.0),
    }
}

fn split(loaded: &LoadedConfig) -> Result<DatasetSplit> {
    Ok(split_dataset(&dataset(loaded)?, &loaded.config.split)?)
}

fn load_trained(run: &RunDir) -> Result<TrainedPipeline> {
    if !run.models().join("base.json").exists() {
        return Err(CliError::Usage(format!(
            "no trained models in {}; run `dmfp train` with the same configuration first",
            run.models().display()
        )));
    }
    Ok(TrainedPipeline::load(run.models())?)
}

fn cmd_generate(loaded: &LoadedConfig) -> Result<()> {
    let (ds, sidecar) = generate(&loaded.config.synth)?;
    let dir = resolve(&loaded.base_dir, &loaded.config.out).join("data");
    let manifest = write_synthetic(&ds, &sidecar, &dir)?;
    emit(&format!("{}\n", manifest.display()))
}

fn cmd_train(loaded: &LoadedConfig) -> Result<()> {
    let cfg = &loaded.config;
    let run = RunDir::of(loaded);
    let parts = split(loaded)?;
    info!(
        "split: {} train, {} estimate, {} test",
        parts.train.len(),
        parts.estimate.len(),
        parts.test.len()
    );
    let pipeline = TrainedPipeline::train(&parts.train, &parts.estimate, &cfg.pipeline(), &cfg.systems())?;
    run.create(cfg)?;
    pipeline.save(run.models())?;
    write_json(
        &run.models().join("meta.json"),
        &json!({ "config_hash": run.hash, "config": cfg }),
    )?;
    emit(&format!("{}\n", run.root.display()))
}

#[derive(Serialize)]
struct HashedPrediction<'a> {
    #[serde(flatten)]
    prediction: &'a Prediction,
    config_hash: &'a str,
}

fn write_predictions(path: &Path, preds: &[Prediction], hash: &str) -> Result<String> {
    let mut text = String::new();
    for p in preds {
        let line = serde_json::to_string(&HashedPrediction {
            prediction: p,
            config_hash: hash,
        })
        .map_err(|e| DmfpError::parse("prediction", e))?;
        text.push_str(&line);
        text.push('\n');
    }
    write_text(path, &text)?;
    Ok(text)
}

fn file_stem(system: &str) -> String {
    system.to_ascii_lowercase().replace(|c: char| !c.is_ascii_alphanumeric() && c != '-', "_")
}

fn cmd_predict(loaded: &LoadedConfig, input: Option<&Path>, variants: &[String], baselines: &[String]) -> Result<()> {
    let run = RunDir::of(loaded);
    let pipeline = load_trained(&run)?;
    let records = match input {
        Some(p) => load_dataset(p)?,
        None => split(loaded)?.test,
    };
    let mut chosen: Vec<Box<dyn Predictor + '_>> = Vec::new();
    for v in variants {
        chosen.push(Box::new(pipeline.variant(v.parse::<Variant>()?)?));
    }
    for b in baselines {
        let kind: BaselineKind = b.parse()?;
        if !pipeline.bundle.baseline_kinds.contains(&kind) {
            return Err(CliError::Usage(format!("baseline {kind} was not trained in this run")));
        }
        chosen.push(Box::new(pipeline.baseline(kind)?));
    }
    if chosen.is_empty() {
        chosen = pipeline.predictors()?;
    }
    for p in &chosen {
        let preds = predict_all(p.as_ref(), &records)?;
        let path = run.predictions().join(format!("{}.jsonl", file_stem(&p.name())));
        let text = write_predictions(&path, &preds, &run.hash)?;
        emit(&text)?;
    }
    Ok(())
}

fn stamp(ev: &mut Evaluation, hash: &str) {
    for s in &mut ev.systems {
        s.report.meta.config_hash = Some(hash.to_string());
    }
}

fn cmd_evaluate(loaded: &LoadedConfig, seeds: usize) -> Result<()> {
    if seeds == 0 {
        return Err(CliError::Config {
            message: "--seeds needs at least one seed".into(),
            keys: vec!["evaluate.seeds".into()],
        });
    }
    let cfg = &loaded.config;
    let run = RunDir::of(loaded);
    if seeds > 1 {
        return multi_seed(loaded, &run, seeds);
    }
    let pipeline = load_trained(&run)?;
    let test = split(loaded)?.test;
    let mut ev = evaluate(&pipeline, &test)?;
    stamp(&mut ev, &run.hash);
    for s in &ev.systems {
        let path = run.predictions().join(format!("{}.jsonl", file_stem(&s.report.meta.system)));
        write_predictions(&path, &s.predictions, &run.hash)?;
    }
    let reports = ev.reports();
    write_json(
        &run.reports().join("report.json"),
        &json!({
            "config_hash": run.hash,
            "config": cfg,
            "test_records": test.len(),
            "reports": reports,
            "exploratory": ev.exploratory,
            "error_correction": ev.corrections,
        }),
    )?;
    let mut text = format!("config_hash: {}\ntest records: {}\n\n", run.hash, test.len());
    text.push_str(&render_reports(&reports));
    text.push_str("\nBase classifier agreement (% of records)\n");
    text.push_str(&ev.exploratory.render());
    for c in &ev.corrections {
        text.push('\n');
        text.push_str(&c.render());
    }
    write_text(&run.reports().join("report.txt"), &text)?;
    emit(&text)
}

#[derive(Serialize)]
struct Comparison {
    system: String,
    test: Option<PairedTTest>,
}

fn multi_seed(loaded: &LoadedConfig, run: &RunDir, seeds: usize) -> Result<()> {
    let cfg = &loaded.config;
    let first = cfg.split.seed;
    let seed_list: Vec<u64> = (0..seeds as u64).map(|i| first + i).collect();
    let ds = dataset(loaded)?;
    let mut summaries = multi_seed_run(&ds, &cfg.pipeline(), &cfg.systems(), &seed_list)?;
    for s in &mut summaries {
        for r in &mut s.runs {
            r.meta.config_hash = Some(run.hash.clone());
        }
    }
    let dmfp = summaries[0].values("private_f1");
    let comparisons: Vec<Comparison> = summaries[1..]
        .iter()
        .map(|s| Comparison {
            system: s.system.clone(),
            test: paired_t_test(&dmfp, &s.values("private_f1")).ok(),
        })
        .collect();
    fs::create_dir_all(run.reports()).map_err(|e| DmfpError::io(run.reports(), e))?;
    write_json(
        &run.reports().join("multi_seed.json"),
        &json!({
            "config_hash": run.hash,
            "config": cfg,
            "seeds": seed_list,
            "summaries": summaries,
            "private_f1_vs_dmfp": comparisons,
        }),
    )?;
    let mut text = format!("config_hash: {}\nseeds: {:?}\n\n", run.hash, seed_list);
    text.push_str(&render_summaries(&summaries));
    text.push_str("\nPaired t-test on private F1, DMFP vs system\n");
    for c in &comparisons {
        match &c.test {
            Some(t) => text.push_str(&format!("{:<16} t = {:>8.3}  p = {:.4}\n", c.system, t.t, t.p_value)),
            None => text.push_str(&format!("{:<16} n/a\n", c.system)),
        }
    }
    write_text(&run.reports().join("multi_seed.txt"), &text)?;
    emit(&text)
}

fn cmd_sweep(loaded: &LoadedConfig) -> Result<()> {
    let cfg = &loaded.config;
    let run = RunDir::of(loaded);
    let parts = split(loaded)?;
    let pcfg = cfg.pipeline();
    let base = BaseClassifiers::train(&parts.train, &pcfg.train)?;
    let grid = sweep(&parts.estimate, &base, &cfg.sweep.k_v, &cfg.sweep.k_p, &pcfg, cfg.sweep.folds)?;
    fs::create_dir_all(run.reports()).map_err(|e| DmfpError::io(run.reports(), e))?;
    let csv = grid.to_csv()?;
    write_text(
        &run.reports().join("sweep.csv"),
        &format!("# config_hash = {}\n{csv}", run.hash),
    )?;
    write_json(
        &run.reports().join("sweep.json"),
        &json!({ "config_hash": run.hash, "grid": grid, "best": grid.best() }),
    )?;
    let mut text = csv;
    if let Some(b) = grid.best() {
        text.push_str(&format!("best: k_v = {}, k_p = {}, private F1 = {:.4}\n", b.k_v, b.k_p, b.f1));
    }
    emit(&text)
}

/// Reports of one evaluation, for callers comparing runs.
pub fn read_reports(path: &Path) -> Result<Vec<EvalReport>> {
    let text = fs::read_to_string(path).map_err(|e| DmfpError::io(path, e))?;
    let v: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| DmfpError::parse(path.display().to_string(), e))?;
    serde_json::from_value(v["reports"].clone())
        .map_err(|e| DmfpError::parse(path.display().to_string(), e).into())
}
