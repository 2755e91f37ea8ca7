//! `capdet` subcommands. Each command is a plain function so it can be
//! driven from tests as well as from the binary.

use std::fs;
use std::net::SocketAddr;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use capdet_core::detect::{detect_trace, WindowClassifier};
use capdet_core::io::{read_annotations, read_trace, write_annotations, write_detections, AnnotationFile, DetectionExport};
use capdet_core::nn::{load_weights, save_weights, ModelParams};
use capdet_core::search::{run_search, save_trials, SearchSpace, DEFAULT_TRIALS, DEFAULT_TRIAL_EPOCHS};
use capdet_core::sim::{simulate_dataset, SimParams, DEFAULT_RUN_SAMPLES};
use capdet_core::train::{
    build_partition_dataset, evaluate_model, runs_in, split_runs, train_model_with, Hyperparams, LabeledRun, ModelKind,
    Partition, RunSplit, DEFAULT_SPLIT_FRACTIONS,
};
use capdet_core::types::{DetectorConfig, DEFAULT_THRESHOLD};
use capdet_core::{Exec, MetricsReport};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

pub mod report;

pub const WEIGHTS_FILE: &str = "model.weights";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const SPLIT_FILE: &str = "split.json";
pub const HYPERPARAMS_FILE: &str = "hyperparams.json";
pub const TRIALS_FILE: &str = "trials.jsonl";
pub const BEST_FILE: &str = "best.json";
pub const ANNOTATION_SUFFIX: &str = ".annotations.json";

#[derive(Debug, Parser)]
#[command(name = "capdet", version, about = "Capture-phase detection for nanopore ionic-current traces")]
pub struct Cli {
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write simulated traces and their capture annotations.
    Simulate(SimulateArgs),
    /// Train a model on a directory of annotated traces.
    Train(TrainArgs),
    /// Random hyperparameter search.
    Search(SearchArgs),
    /// Detect capture regions in trace files.
    Detect(DetectArgs),
    /// Window-level metrics of a model against annotations.
    Eval(EvalArgs),
    /// Run the streaming detection server.
    Serve(ServeArgs),
    /// Comparison table from eval and trial files.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TraceFormat {
    Bin,
    Csv,
}

impl TraceFormat {
    pub fn extension(self) -> &'static str {
        match self {
            TraceFormat::Bin => "trace",
            TraceFormat::Csv => "csv",
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 20)]
    pub runs: usize,
    /// Captures per run, `lo..hi` (inclusive).
    #[arg(long, default_value = "1..3", value_parser = parse_range)]
    pub captures: RangeInclusive<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Raw samples per run.
    #[arg(long, default_value_t = DEFAULT_RUN_SAMPLES)]
    pub samples: usize,
    #[arg(long, value_enum, default_value_t = TraceFormat::Bin)]
    pub format: TraceFormat,
    #[arg(long, short)]
    pub out: PathBuf,
}

/// Accepts `a..b`, `a..=b` (both inclusive) or a single number.
pub fn parse_range(s: &str) -> std::result::Result<RangeInclusive<usize>, String> {
    let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}"));
    let (lo, hi) = match s.split_once("..") {
        Some((a, b)) => (num(a)?, num(b.strip_prefix('=').unwrap_or(b))?),
        None => {
            let n = num(s)?;
            (n, n)
        }
    };
    if lo > hi {
        return Err(format!("empty range {s}"));
    }
    Ok(lo..=hi)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelChoice {
    Deep,
    Histogram,
}

#[derive(Debug, Args)]
pub struct HyperparamArgs {
    #[arg(long, value_enum, default_value_t = ModelChoice::Deep)]
    pub model: ModelChoice,
    /// Histogram bins for the baseline model.
    #[arg(long, default_value_t = capdet_core::baseline::DEFAULT_BIN_COUNT)]
    pub bins: usize,
    #[arg(long, default_value_t = Hyperparams::default().window_size)]
    pub window: usize,
    #[arg(long, default_value_t = Hyperparams::default().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = Hyperparams::default().lr)]
    pub lr: f64,
    #[arg(long, default_value_t = Hyperparams::default().weight_decay)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = Hyperparams::default().dropout)]
    pub dropout: f64,
    #[arg(long, default_value_t = Hyperparams::default().threshold)]
    pub threshold: f64,
    #[arg(long, default_value_t = Hyperparams::default().max_epochs)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = Hyperparams::default().patience)]
    pub patience: usize,
}

impl HyperparamArgs {
    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            model: match self.model {
                ModelChoice::Deep => ModelKind::CapturenetDeep,
                ModelChoice::Histogram => ModelKind::HistogramLogistic { bin_count: self.bins },
            },
            window_size: self.window,
            batch_size: self.batch_size,
            lr: self.lr,
            weight_decay: self.weight_decay,
            dropout: self.dropout,
            threshold: self.threshold,
            max_epochs: self.max_epochs,
            patience: self.patience,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory written by `simulate` (traces plus `*.annotations.json`).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Seed of the run split; defaults to `--seed`.
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[command(flatten)]
    pub hp: HyperparamArgs,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    pub trials: usize,
    /// Epoch cap per trial.
    #[arg(long, default_value_t = DEFAULT_TRIAL_EPOCHS)]
    pub epochs: usize,
    #[arg(long, value_enum, default_value_t = ModelChoice::Deep)]
    pub model: ModelChoice,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub split_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Window size for models that do not fix one (the histogram baseline).
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Also write `<name>.windows.csv` with per-window probabilities.
    #[arg(long)]
    pub likelihood: bool,
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Split file from `train`; without it every run in `--data` is used.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PartitionArg::Test)]
    pub partition: PartitionArg,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long)]
    pub window: Option<usize>,
    /// Row label in reports; defaults to the model id.
    #[arg(long)]
    pub name: Option<String>,
    /// Also write the report as JSON to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PartitionArg {
    Train,
    Val,
    Test,
}

impl From<PartitionArg> for Partition {
    fn from(p: PartitionArg) -> Self {
        match p {
            PartitionArg::Train => Partition::Train,
            PartitionArg::Val => Partition::Val,
            PartitionArg::Test => Partition::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "CAPDET_HOST", default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    #[arg(long, env = "CAPDET_PORT", default_value_t = 8080)]
    pub port: u16,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Eval reports (`.json`) and search trial files (`.jsonl`).
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

pub fn exec_for(sequential: bool) -> Exec {
    if sequential {
        Exec::Sequential
    } else {
        Exec::default()
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let exec = exec_for(cli.sequential);
    match cli.command {
        Command::Simulate(a) => {
            let files = simulate(&a, exec)?;
            println!("wrote {} runs to {}", files.len(), a.out.display());
        }
        Command::Train(a) => {
            let s = train(&a, exec)?;
            println!(
                "best epoch {} (val loss {:.4}); weights in {}",
                s.best_epoch,
                s.best_val_loss,
                a.out.join(WEIGHTS_FILE).display()
            );
        }
        Command::Search(a) => {
            let best = search(&a, exec)?;
            match best {
                Some(b) => println!("best trial {}: maximize score {:.2}", b.0, b.1),
                None => println!("every trial failed; see {}", a.out.join(TRIALS_FILE).display()),
            }
        }
        Command::Detect(a) => {
            let written = detect(&a, exec)?;
            for p in written {
                println!("{}", p.display());
            }
        }
        Command::Eval(a) => {
            let r = eval(&a, exec)?;
            if a.json {
                println!("{}", serde_json::to_string_pretty(&r)?);
            } else {
                print!("{}", report::render_table(&[report::Row::from_eval(&r)]));
                println!("mean interval IoU {:.3} over {} runs", r.mean_iou, r.runs);
            }
        }
        Command::Serve(a) => serve(&a)?,
        Command::Report(a) => {
            let rows = report::load_rows(&a.files)?;
            if a.json {
                println!("{}", serde_json::to_string_pretty(&rows)?);
            } else {
                print!("{}", report::render_table(&rows));
            }
        }
    }
    Ok(())
}

pub fn simulate(a: &SimulateArgs, exec: Exec) -> Result<Vec<PathBuf>> {
    ensure!(a.runs > 0, "--runs must be positive");
    let runs = simulate_dataset(a.runs, a.samples, a.captures.clone(), a.seed, &SimParams::default(), exec)
        .context("simulation failed")?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut written = Vec::with_capacity(runs.len());
    for r in &runs {
        let t = &r.trace;
        let path = a.out.join(format!("{}.{}", t.run_id, a.format.extension()));
        capdet_core::io::write_trace(t, &path)?;
        write_annotations(
            &AnnotationFile::new(&t.run_id, t.channel, &r.annotations),
            a.out.join(format!("{}{ANNOTATION_SUFFIX}", t.run_id)),
        )?;
        written.push(path);
    }
    Ok(written)
}

fn is_trace_file(p: &Path) -> bool {
    matches!(p.extension().and_then(|e| e.to_str()), Some("trace" | "csv"))
}

/// Every trace in `dir` paired with `<run_id>.annotations.json`.
pub fn load_dataset(dir: &Path) -> Result<Vec<LabeledRun>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| is_trace_file(p));
    paths.sort();
    ensure!(!paths.is_empty(), "no trace files in {}", dir.display());
    paths
        .iter()
        .map(|p| {
            let trace = read_trace(p)?;
            let ann_path = dir.join(format!("{}{ANNOTATION_SUFFIX}", trace.run_id));
            let ann = read_annotations(&ann_path).with_context(|| format!("annotations for {}", p.display()))?;
            ensure!(
                ann.run_id == trace.run_id,
                "{} names run `{}` but the trace is `{}`",
                ann_path.display(),
                ann.run_id,
                trace.run_id
            );
            let annotations = ann.annotations();
            capdet_core::types::validate_intervals(&annotations, Some(trace.len()))
                .with_context(|| format!("annotations in {}", ann_path.display()))?;
            Ok(LabeledRun { trace, annotations })
        })
        .collect()
}

pub fn split_for(runs: &[LabeledRun], seed: u64) -> Result<RunSplit> {
    let ids: Vec<String> = runs.iter().map(|r| r.trace.run_id.clone()).collect();
    Ok(split_runs(&ids, DEFAULT_SPLIT_FRACTIONS, seed)?)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub params: ModelParams<f32>,
    pub split: RunSplit,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

pub fn train(a: &TrainArgs, exec: Exec) -> Result<TrainSummary> {
    let hp = a.hp.hyperparams();
    hp.validate()?;
    let runs = load_dataset(&a.data)?;
    let split = split_for(&runs, a.split_seed.unwrap_or(a.seed))?;
    let cfg = hp.detector_config();
    let train_set = build_partition_dataset(&runs, &split, Partition::Train, &cfg, a.seed, exec).context("training set")?;
    let val_set = build_partition_dataset(&runs, &split, Partition::Val, &cfg, a.seed ^ 1, exec).context("validation set")?;
    if !a.quiet {
        eprintln!(
            "{} training windows, {} validation windows ({} / {} / {} runs)",
            train_set.len(),
            val_set.len(),
            split.train.len(),
            split.val.len(),
            split.test.len()
        );
    }
    let quiet = a.quiet;
    let outcome = train_model_with(&train_set, &val_set, &hp, a.seed, exec, |r| {
        if !quiet && (r.epoch == 1 || r.epoch % 10 == 0) {
            eprintln!("epoch {:>4}  train {:.4}  val {:.4}", r.epoch, r.train_loss, r.val_loss);
        }
    })?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    save_weights(&outcome.params, a.out.join(WEIGHTS_FILE))?;
    outcome.log.save(a.out.join(TRAIN_LOG_FILE))?;
    write_json(&split, &a.out.join(SPLIT_FILE))?;
    write_json(&hp, &a.out.join(HYPERPARAMS_FILE))?;
    Ok(TrainSummary {
        params: outcome.params,
        split,
        best_epoch: outcome.best_epoch,
        best_val_loss: outcome.best_val_loss,
    })
}

/// Returns `(trial_id, maximize_score)` of the best trial.
pub fn search(a: &SearchArgs, exec: Exec) -> Result<Option<(usize, f64)>> {
    let runs = load_dataset(&a.data)?;
    let split = split_for(&runs, a.split_seed.unwrap_or(a.seed))?;
    let mut space = match a.model {
        ModelChoice::Deep => SearchSpace::default(),
        ModelChoice::Histogram => SearchSpace::baseline(),
    };
    space.max_epochs = a.epochs;
    let outcome = run_search(&runs, &split, &space, a.trials, a.seed, exec)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    save_trials(&outcome.trials, a.out.join(TRIALS_FILE))?;
    write_json(&split, &a.out.join(SPLIT_FILE))?;
    Ok(match outcome.best_trial() {
        Some(b) => {
            write_json(&b.config, &a.out.join(BEST_FILE))?;
            Some((b.trial_id, b.maximize_score))
        }
        None => None,
    })
}

/// Detector settings for a loaded model: its own window size if it has one.
pub fn detector_for(model: &dyn WindowClassifier, window: Option<usize>, threshold: f64) -> Result<DetectorConfig> {
    let window = match (model.window_size(), window) {
        (Some(m), Some(w)) if m != w => bail!("model expects windows of {m} points, --window says {w}"),
        (Some(m), _) => m,
        (None, Some(w)) => w,
        (None, None) => capdet_core::types::DEFAULT_WINDOW_SIZE,
    };
    let mut cfg = DetectorConfig::for_window(window);
    cfg.threshold = threshold;
    cfg.validate()?;
    Ok(cfg)
}

fn output_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "trace".into())
}

pub fn detect(a: &DetectArgs, exec: Exec) -> Result<Vec<PathBuf>> {
    let model = load_weights(&a.weights).with_context(|| format!("loading {}", a.weights.display()))?;
    let cfg = detector_for(&model, a.window, a.threshold)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let results = exec.try_map(&a.files, |path| -> Result<Vec<PathBuf>> {
        let trace = read_trace(path)?;
        let det = detect_trace(&model, &trace, &cfg, Exec::Sequential).with_context(|| format!("{}", path.display()))?;
        let stem = output_stem(path);
        let export = DetectionExport::from_detection(&det, &cfg, model.model_id());
        let out = a.out.join(format!("{stem}.detections.json"));
        write_detections(&export, &out)?;
        let mut written = vec![out];
        if a.likelihood {
            let csv = a.out.join(format!("{stem}.windows.csv"));
            let mut text = String::from("ds_start,ds_end,start_raw,end_raw,probability,thresholded,label\n");
            for w in &det.windows {
                text += &format!(
                    "{},{},{},{},{},{},{}\n",
                    w.ds_start,
                    w.ds_end,
                    w.ds_start * cfg.downsample_factor,
                    w.ds_end * cfg.downsample_factor,
                    w.probability,
                    u8::from(w.thresholded),
                    u8::from(w.label)
                );
            }
            fs::write(&csv, text).with_context(|| format!("writing {}", csv.display()))?;
            written.push(csv);
        }
        Ok(written)
    })?;
    Ok(results.into_iter().flatten().collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub model: String,
    pub partition: Option<String>,
    pub runs: usize,
    pub threshold: f64,
    pub metrics: MetricsReport,
    pub mean_iou: f64,
}

pub fn eval(a: &EvalArgs, exec: Exec) -> Result<EvalReport> {
    let model = load_weights(&a.weights).with_context(|| format!("loading {}", a.weights.display()))?;
    let cfg = detector_for(&model, a.window, a.threshold)?;
    let runs = load_dataset(&a.data)?;
    let (selected, partition) = match &a.split {
        Some(p) => {
            let split: RunSplit = read_json(p)?;
            let part = Partition::from(a.partition);
            let sel = runs_in(&runs, &split, part);
            ensure!(
                sel.len() == split.runs(part).len(),
                "{} lists {} {} runs but only {} are in {}",
                p.display(),
                split.runs(part).len(),
                part.name(),
                sel.len(),
                a.data.display()
            );
            (sel, Some(part.name().to_string()))
        }
        None => (runs.iter().collect(), None),
    };
    ensure!(!selected.is_empty(), "no runs to evaluate");
    let ev = evaluate_model(&model, &selected, &cfg, exec)?;
    let report = EvalReport {
        name: a.name.clone().unwrap_or_else(|| model.model_id().to_string()),
        model: model.model_id().to_string(),
        partition,
        runs: ev.runs,
        threshold: cfg.threshold,
        metrics: ev.metrics,
        mean_iou: ev.mean_iou,
    };
    if let Some(out) = &a.out {
        write_json(&report, out)?;
    }
    Ok(report)
}

pub fn serve(a: &ServeArgs) -> Result<()> {
    let _ = tracing_subscriber::fmt().try_init();
    let addr = SocketAddr::new(a.host, a.port);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(capdet_service::serve(addr, capdet_service::AppState::new()))
        .with_context(|| format!("serving on {addr}"))
}
