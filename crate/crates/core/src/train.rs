//! Run-level splits, balanced window datasets, the training loop with early
//! stopping, and held-out evaluation.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baseline;
use crate::detect::{detect_trace, window_truth};
use crate::error::{Error, Result};
use crate::exec::{derive_seed, Exec};
use crate::metrics::{evaluate, mean_interval_iou};
use crate::nn::{adamw_step, bce_loss, init_model, AdamWConfig, Mode, ModelParams, OptimizerState};
use crate::preprocess::{training_windows, Window};
use crate::types::{train_step_for, CaptureAnnotation, DetectorConfig, MetricsReport, Trace};

/// A trace together with its ground-truth capture annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledRun {
    pub trace: Trace,
    pub annotations: Vec<CaptureAnnotation>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub fn name(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl RunSplit {
    pub fn runs(&self, part: Partition) -> &[String] {
        match part {
            Partition::Train => &self.train,
            Partition::Val => &self.val,
            Partition::Test => &self.test,
        }
    }

    pub fn partition_of(&self, run_id: &str) -> Option<Partition> {
        [Partition::Train, Partition::Val, Partition::Test]
            .into_iter()
            .find(|&p| self.runs(p).iter().any(|r| r == run_id))
    }
}

pub const DEFAULT_SPLIT_FRACTIONS: [f64; 3] = [0.72, 0.18, 0.10];

/// Seeded shuffle of the (sorted) run ids. Validation and test get
/// `round(fraction * n)` runs; train takes the remainder.
pub fn split_runs(run_ids: &[String], fractions: [f64; 3], seed: u64) -> Result<RunSplit> {
    let mut ids: Vec<String> = run_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() != run_ids.len() {
        return Err(Error::InvalidConfig("duplicate run ids".into()));
    }
    let n = ids.len();
    if n < 3 {
        return Err(Error::TooFewRuns(n));
    }
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::InvalidConfig(format!("bad split fractions {fractions:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_val = ((fractions[1] * n as f64).round() as usize).max(1);
    let n_test = ((fractions[2] * n as f64).round() as usize).max(1);
    if n_val + n_test >= n {
        return Err(Error::InvalidConfig(format!("split fractions leave no training runs out of {n}")));
    }
    let test = ids.split_off(n - n_test);
    let val = ids.split_off(ids.len() - n_val);
    Ok(RunSplit { train: ids, val, test })
}

/// Labelled windows with a 1:1 class ratio.
#[derive(Clone, Debug, PartialEq)]
pub struct BalancedDataset {
    pub windows: Vec<Window>,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl BalancedDataset {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn batch(&self) -> Vec<&[f32]> {
        self.windows.iter().map(|w| w.values.as_slice()).collect()
    }

    pub fn labels(&self) -> Vec<f32> {
        self.windows
            .iter()
            .map(|w| if w.label == Some(true) { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Keeps every capture window and samples as many non-capture windows
/// (uniformly, without replacement). If negatives are the scarcer class,
/// positives are subsampled instead.
pub fn build_balanced_dataset(runs: &[&LabeledRun], cfg: &DetectorConfig, seed: u64, exec: Exec) -> Result<BalancedDataset> {
    let per_run = exec.try_map(runs, |r| training_windows(&r.trace, &r.annotations, cfg))?;
    let all: Vec<Window> = per_run.into_iter().flatten().collect();
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..all.len()).partition(|&i| all[i].label == Some(true));
    if pos.is_empty() {
        return Err(Error::NoPositiveExamples);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep_n = pos.len().min(neg.len());
    let mut pick = |from: &[usize]| -> Vec<usize> {
        if from.len() == keep_n {
            return from.to_vec();
        }
        let mut chosen: Vec<usize> = index::sample(&mut rng, from.len(), keep_n).into_iter().map(|i| from[i]).collect();
        chosen.sort_unstable();
        chosen
    };
    let pos = pick(&pos);
    let neg = pick(&neg);
    let mut keep: Vec<usize> = pos.iter().chain(&neg).copied().collect();
    keep.sort_unstable();
    let mut slots: Vec<Option<Window>> = all.into_iter().map(Some).collect();
    let windows = keep.into_iter().map(|i| slots[i].take().expect("unique index")).collect();
    Ok(BalancedDataset {
        windows,
        n_pos: keep_n,
        n_neg: keep_n,
    })
}

/// Balanced dataset from the runs of one partition. Fails if any window
/// originates from a run outside that partition.
pub fn build_partition_dataset(
    runs: &[LabeledRun],
    split: &RunSplit,
    part: Partition,
    cfg: &DetectorConfig,
    seed: u64,
    exec: Exec,
) -> Result<BalancedDataset> {
    let allowed: HashSet<&str> = split.runs(part).iter().map(String::as_str).collect();
    let selected: Vec<&LabeledRun> = runs.iter().filter(|r| allowed.contains(r.trace.run_id.as_str())).collect();
    let ds = build_balanced_dataset(&selected, cfg, seed, exec)?;
    assert_no_leakage(&ds, split, part)?;
    Ok(ds)
}

pub fn assert_no_leakage(ds: &BalancedDataset, split: &RunSplit, part: Partition) -> Result<()> {
    let allowed: HashSet<&str> = split.runs(part).iter().map(String::as_str).collect();
    match ds.windows.iter().find(|w| !allowed.contains(&*w.run_id)) {
        Some(w) => Err(Error::Leakage {
            run_id: w.run_id.to_string(),
            partition: part.name(),
        }),
        None => Ok(()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelKind {
    CapturenetDeep,
    HistogramLogistic { bin_count: usize },
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::CapturenetDeep => "capturenet-deep",
            ModelKind::HistogramLogistic { .. } => "histogram-logistic",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub model: ModelKind,
    pub window_size: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub threshold: f64,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            model: ModelKind::CapturenetDeep,
            window_size: 2000,
            batch_size: 128,
            lr: 1.83e-4,
            weight_decay: 3.32e-3,
            dropout: 0.739,
            threshold: 0.524,
            max_epochs: 500,
            patience: 50,
        }
    }
}

impl Hyperparams {
    pub fn detector_config(&self) -> DetectorConfig {
        DetectorConfig {
            window_size: self.window_size,
            train_step: train_step_for(self.window_size),
            infer_step: self.window_size,
            threshold: self.threshold,
            ..DetectorConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch size and epoch cap must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad(format!("bad optimizer settings lr={} wd={}", self.lr, self.weight_decay));
        }
        self.detector_config().validate()
    }

    fn init(&self, seed: u64) -> Result<ModelParams<f32>> {
        match self.model {
            ModelKind::CapturenetDeep => init_model(self.window_size, self.dropout, seed),
            ModelKind::HistogramLogistic { bin_count } => {
                baseline::init_baseline(bin_count, crate::types::DEFAULT_NORMALIZATION_SCALE_PA, seed)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Progress {
    Improved,
    NoImprovement,
    Stop,
}

/// Tracks the best validation loss and stops after `patience` epochs
/// without strict improvement.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> Progress {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.stale = 0;
            Progress::Improved
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                Progress::Stop
            } else {
                Progress::NoImprovement
            }
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub timestamp: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    /// One JSON object per line.
    pub fn write_jsonl(&self, out: &mut impl Write) -> std::io::Result<()> {
        for r in &self.epochs {
            serde_json::to_writer(&mut *out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub params: ModelParams<f32>,
    pub log: TrainingLog,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Mean BCE of eval-mode predictions.
pub fn dataset_loss(params: &ModelParams<f32>, ds: &BalancedDataset, exec: Exec) -> Result<f64> {
    let p = params.forward(&ds.batch(), Mode::Eval, exec)?;
    Ok(bce_loss(&p, &ds.labels())? as f64)
}

pub fn train_model(train: &BalancedDataset, val: &BalancedDataset, hp: &Hyperparams, seed: u64, exec: Exec) -> Result<TrainOutcome> {
    train_model_with(train, val, hp, seed, exec, |_| {})
}

/// Mini-batch AdamW with seeded shuffling and dropout. Bit-reproducible for
/// a given (seed, datasets, hyperparameters) regardless of `exec`.
pub fn train_model_with(
    train: &BalancedDataset,
    val: &BalancedDataset,
    hp: &Hyperparams,
    seed: u64,
    exec: Exec,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    hp.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidConfig("training and validation sets must be non-empty".into()));
    }
    let mut params = hp.init(seed)?;
    let mut state = OptimizerState::new(&params, AdamWConfig::new(hp.lr, hp.weight_decay));
    let batch = train.batch();
    let labels = train.labels();
    let mut stopper = EarlyStopping::new(hp.patience);
    let mut best = params.clone();
    let mut log = TrainingLog::default();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=hp.max_epochs {
        let last_finite_epoch = log.epochs.last().map(|r| r.epoch);
        let diverged = || Error::Diverged { epoch, last_finite_epoch };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1, epoch as u64]));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, idx) in order.chunks(hp.batch_size).enumerate() {
            let xs: Vec<&[f32]> = idx.iter().map(|&i| batch[i]).collect();
            let ys: Vec<f32> = idx.iter().map(|&i| labels[i]).collect();
            let dropout_seed = derive_seed(seed, &[2, epoch as u64, b as u64]);
            let (loss, grads) = params.loss_and_grads(&xs, &ys, dropout_seed, exec)?;
            if !loss.is_finite() {
                return Err(diverged());
            }
            adamw_step(&mut params, &grads, &mut state).map_err(|e| match e {
                Error::NonFiniteGradient { .. } => diverged(),
                other => other,
            })?;
            total += loss as f64 * idx.len() as f64;
        }
        let train_loss = total / train.len() as f64;
        let val_loss = dataset_loss(&params, val, exec)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(diverged());
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            timestamp: chrono::Utc::now().to_rfc3339(),
        };
        on_epoch(&record);
        log.epochs.push(record);
        match stopper.observe(epoch, val_loss) {
            Progress::Improved => best = params.clone(),
            Progress::NoImprovement => {}
            Progress::Stop => break,
        }
    }
    Ok(TrainOutcome {
        params: best,
        log,
        best_epoch: stopper.best_epoch(),
        best_val_loss: stopper.best_loss(),
    })
}

/// Window-level evaluation of a model on whole runs (inference grid with
/// end-aligned tail, pre-smoothing labels) plus mean region IoU.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunEvaluation {
    pub metrics: MetricsReport,
    pub mean_iou: f64,
    pub runs: usize,
}

pub fn evaluate_model(params: &ModelParams<f32>, runs: &[&LabeledRun], cfg: &DetectorConfig, exec: Exec) -> Result<RunEvaluation> {
    let per_run = exec.try_map(runs, |r| {
        let det = detect_trace(params, &r.trace, cfg, Exec::Sequential)?;
        let truth = window_truth(&det.windows, &r.annotations, cfg.downsample_factor);
        let preds: Vec<bool> = det.windows.iter().map(|w| w.thresholded).collect();
        let iou = mean_interval_iou(&det.regions, &r.annotations);
        Ok::<_, Error>((preds, truth, iou))
    })?;
    let mut preds = Vec::new();
    let mut truth = Vec::new();
    let mut iou = 0.0;
    for (p, t, i) in &per_run {
        preds.extend_from_slice(p);
        truth.extend_from_slice(t);
        iou += i;
    }
    Ok(RunEvaluation {
        metrics: evaluate(&preds, &truth)?,
        mean_iou: if runs.is_empty() { 0.0 } else { iou / runs.len() as f64 },
        runs: runs.len(),
    })
}

pub fn runs_in<'a>(runs: &'a [LabeledRun], split: &RunSplit, part: Partition) -> Vec<&'a LabeledRun> {
    let allowed: HashSet<&str> = split.runs(part).iter().map(String::as_str).collect();
    runs.iter().filter(|r| allowed.contains(r.trace.run_id.as_str())).collect()
}

/// Shared run-id storage for windows of one trace.
pub fn run_id_arc(trace: &Trace) -> Arc<str> {
    Arc::from(trace.run_id.as_str())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("run{i:02}")).collect()
    }

    #[test]
    fn split_sizes() {
        let s = split_runs(&ids(17), DEFAULT_SPLIT_FRACTIONS, 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (12, 3, 2));
        let s = split_runs(&ids(10), DEFAULT_SPLIT_FRACTIONS, 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (7, 2, 1));
        let s = split_runs(&ids(20), DEFAULT_SPLIT_FRACTIONS, 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (14, 4, 2));
        assert!(matches!(split_runs(&ids(2), DEFAULT_SPLIT_FRACTIONS, 1), Err(Error::TooFewRuns(2))));
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let a = split_runs(&ids(17), DEFAULT_SPLIT_FRACTIONS, 9).unwrap();
        let mut shuffled = ids(17);
        shuffled.reverse();
        assert_eq!(a, split_runs(&shuffled, DEFAULT_SPLIT_FRACTIONS, 9).unwrap());
        let mut all: Vec<&String> = a.train.iter().chain(&a.val).chain(&a.test).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 17);
        assert_ne!(a, split_runs(&ids(17), DEFAULT_SPLIT_FRACTIONS, 10).unwrap());
    }

    #[test]
    fn early_stopping_patience() {
        let mut s = EarlyStopping::new(50);
        assert_eq!(s.observe(1, 1.0), Progress::Improved);
        let mut stopped_at = None;
        for epoch in 2..=500 {
            if s.observe(epoch, 1.0 + epoch as f64) == Progress::Stop {
                stopped_at = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped_at, Some(51));
        assert_eq!(s.best_epoch(), 1);

        let mut s = EarlyStopping::new(50);
        assert!((1..=500).all(|e| s.observe(e, 1.0 / e as f64) == Progress::Improved));
        assert_eq!(s.best_epoch(), 500);
    }

    #[test]
    fn equal_loss_is_not_an_improvement() {
        let mut s = EarlyStopping::new(2);
        s.observe(1, 0.5);
        assert_eq!(s.observe(2, 0.5), Progress::NoImprovement);
        assert_eq!(s.observe(3, 0.5), Progress::Stop);
    }

    #[test]
    fn default_hyperparams_match_best_configuration() {
        let hp = Hyperparams::default();
        let cfg = hp.detector_config();
        assert_eq!((cfg.window_size, cfg.train_step, cfg.infer_step), (2000, 2200, 2000));
        assert_eq!(hp.batch_size, 128);
        assert_eq!(cfg.threshold, 0.524);
        hp.validate().unwrap();
    }
}
