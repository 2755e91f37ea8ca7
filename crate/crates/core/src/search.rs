//! Random hyperparameter search scored by `maximize_score` on validation runs.

use std::io::{BufRead, Write};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::exec::{derive_seed, Exec};
use crate::nn::DEEP_POOL_PRODUCT;
use crate::train::{
    build_partition_dataset, evaluate_model, runs_in, train_model, Hyperparams, LabeledRun, ModelKind, Partition, RunSplit,
};
use crate::types::MetricsReport;

pub const DEFAULT_TRIALS: usize = 40;
pub const DEFAULT_TRIAL_EPOCHS: usize = 150;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchModel {
    CapturenetDeep,
    HistogramLogistic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub model: SearchModel,
    /// Inclusive; draws are rounded to the nearest multiple of 80 inside it.
    pub window_size: [usize; 2],
    pub lr: [f64; 2],
    pub weight_decay: [f64; 2],
    pub batch_sizes: Vec<usize>,
    pub dropout: [f64; 2],
    pub threshold: [f64; 2],
    pub bin_count: [usize; 2],
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            model: SearchModel::CapturenetDeep,
            window_size: [1000, 3000],
            lr: [1e-5, 1e-2],
            weight_decay: [1e-6, 1e-2],
            batch_sizes: vec![32, 64, 128, 256, 512, 1024],
            dropout: [0.0, 0.8],
            threshold: [0.3, 0.7],
            bin_count: [10, 200],
            max_epochs: DEFAULT_TRIAL_EPOCHS,
            patience: 50,
        }
    }
}

pub fn log_uniform(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    rng.random_range(lo.ln()..=hi.ln()).exp()
}

/// Nearest multiple of `multiple` (halves round up), clamped to the
/// multiples that lie inside `[lo, hi]`.
pub fn round_to_multiple(value: usize, multiple: usize, [lo, hi]: [usize; 2]) -> usize {
    let rounded = (value + multiple / 2) / multiple * multiple;
    let min = lo.div_ceil(multiple) * multiple;
    let max = hi / multiple * multiple;
    rounded.clamp(min, max)
}

impl SearchSpace {
    pub fn baseline() -> Self {
        SearchSpace {
            model: SearchModel::HistogramLogistic,
            ..SearchSpace::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("search space: {m}")));
        let ordered = |r: [f64; 2]| r[0] <= r[1] && r[0].is_finite() && r[1].is_finite();
        if !(ordered(self.lr) && self.lr[0] > 0.0 && ordered(self.weight_decay) && self.weight_decay[0] > 0.0) {
            return bad("log-uniform ranges must be positive and ordered");
        }
        if !ordered(self.dropout) || !ordered(self.threshold) || self.window_size[0] > self.window_size[1] {
            return bad("ranges must be ordered");
        }
        let [lo, hi] = self.window_size;
        if lo.div_ceil(DEEP_POOL_PRODUCT) * DEEP_POOL_PRODUCT > hi {
            return bad("window range contains no multiple of 80");
        }
        if self.batch_sizes.is_empty() || self.batch_sizes.contains(&0) {
            return bad("batch sizes must be non-empty and positive");
        }
        if self.bin_count[0] == 0 || self.bin_count[0] > self.bin_count[1] {
            return bad("bin count range");
        }
        Ok(())
    }

    /// Independent draw per dimension.
    pub fn sample(&self, rng: &mut impl Rng) -> Hyperparams {
        let window_raw = rng.random_range(self.window_size[0]..=self.window_size[1]);
        let window_size = round_to_multiple(window_raw, DEEP_POOL_PRODUCT, self.window_size);
        let lr = log_uniform(rng, self.lr);
        let weight_decay = log_uniform(rng, self.weight_decay);
        let batch_size = self.batch_sizes[rng.random_range(0..self.batch_sizes.len())];
        let dropout = rng.random_range(self.dropout[0]..=self.dropout[1]);
        let threshold = rng.random_range(self.threshold[0]..=self.threshold[1]);
        let bin_count = rng.random_range(self.bin_count[0]..=self.bin_count[1]);
        let model = match self.model {
            SearchModel::CapturenetDeep => ModelKind::CapturenetDeep,
            SearchModel::HistogramLogistic => ModelKind::HistogramLogistic { bin_count },
        };
        Hyperparams {
            model,
            window_size,
            batch_size,
            lr,
            weight_decay,
            dropout,
            threshold,
            max_epochs: self.max_epochs,
            patience: self.patience,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial_id: usize,
    pub config: Hyperparams,
    pub metrics: Option<MetricsReport>,
    /// `-inf` for failed trials (stored as `null`).
    #[serde(serialize_with = "score_out", deserialize_with = "score_in")]
    pub maximize_score: f64,
    pub mean_iou: Option<f64>,
    pub best_epoch: Option<usize>,
    pub wall_time_s: f64,
    pub error: Option<String>,
}

fn score_out<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_some(v)
    } else {
        s.serialize_none()
    }
}

fn score_in<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome {
    pub trials: Vec<TrialResult>,
    /// Index into `trials`; `None` if every trial failed.
    pub best: Option<usize>,
}

impl SearchOutcome {
    pub fn best_trial(&self) -> Option<&TrialResult> {
        self.best.map(|i| &self.trials[i])
    }
}

/// Highest finite score; ties go to the lower trial id.
pub fn select_best(trials: &[TrialResult]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, t) in trials.iter().enumerate() {
        if !t.maximize_score.is_finite() {
            continue;
        }
        best = match best {
            Some(b) => {
                let cur = &trials[b];
                let better = t.maximize_score > cur.maximize_score
                    || (t.maximize_score == cur.maximize_score && t.trial_id < cur.trial_id);
                Some(if better { i } else { b })
            }
            None => Some(i),
        };
    }
    best
}

/// Sample, build datasets, train with early stopping, score on validation.
/// Failures become a `-inf` record.
pub fn run_trial(runs: &[LabeledRun], split: &RunSplit, space: &SearchSpace, trial_id: usize, seed: u64) -> TrialResult {
    let trial_seed = derive_seed(seed, &[trial_id as u64]);
    let config = space.sample(&mut ChaCha8Rng::seed_from_u64(trial_seed));
    let started = Instant::now();
    let attempt = || -> Result<_> {
        let cfg = config.detector_config();
        let exec = Exec::Sequential;
        let train = build_partition_dataset(runs, split, Partition::Train, &cfg, derive_seed(trial_seed, &[1]), exec)?;
        let val = build_partition_dataset(runs, split, Partition::Val, &cfg, derive_seed(trial_seed, &[2]), exec)?;
        let outcome = train_model(&train, &val, &config, derive_seed(trial_seed, &[3]), exec)?;
        let eval = evaluate_model(&outcome.params, &runs_in(runs, split, Partition::Val), &cfg, exec)?;
        Ok((eval, outcome.best_epoch))
    };
    let result = attempt();
    let wall_time_s = started.elapsed().as_secs_f64();
    match result {
        Ok((eval, best_epoch)) => TrialResult {
            trial_id,
            maximize_score: eval.metrics.maximize_score,
            metrics: Some(eval.metrics),
            mean_iou: Some(eval.mean_iou),
            best_epoch: Some(best_epoch),
            config,
            wall_time_s,
            error: None,
        },
        Err(e) => TrialResult {
            trial_id,
            config,
            metrics: None,
            maximize_score: f64::NEG_INFINITY,
            mean_iou: None,
            best_epoch: None,
            wall_time_s,
            error: Some(e.to_string()),
        },
    }
}

/// Trials are independent (seed `derive_seed(seed, [i])`), so `exec` may run
/// them concurrently without changing the results.
pub fn run_search(
    runs: &[LabeledRun],
    split: &RunSplit,
    space: &SearchSpace,
    n_trials: usize,
    seed: u64,
    exec: Exec,
) -> Result<SearchOutcome> {
    if n_trials == 0 {
        return Err(Error::InvalidConfig("at least one trial is required".into()));
    }
    space.validate()?;
    let trials = exec.map_range(n_trials, |i| run_trial(runs, split, space, i, seed));
    let best = select_best(&trials);
    Ok(SearchOutcome { trials, best })
}

pub fn write_trials(trials: &[TrialResult], out: &mut impl Write) -> std::io::Result<()> {
    for t in trials {
        serde_json::to_writer(&mut *out, t)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_trials(trials: &[TrialResult], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_trials(trials, &mut buf).expect("in-memory write");
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_trials(path: impl AsRef<Path>) -> Result<Vec<TrialResult>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
