//! Synthetic traces with open, closed, capture and translocation phases.
//!
//! Generation is a streaming state machine ([`PhaseStream`]) so long traces
//! or many channels can be produced chunk by chunk.

use std::ops::{Range, RangeInclusive};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{derive_seed, Exec};
use crate::search::log_uniform;
use crate::train::LabeledRun;
use crate::types::{CaptureAnnotation, Trace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseKind {
    Open,
    Closed,
    Capture,
    Translocation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpec {
    pub kind: PhaseKind,
    pub duration_samples: usize,
    pub level_pa: f64,
    pub noise_sd_pa: f64,
    /// Capture only.
    pub drop_rate_hz: f64,
    pub drop_depth_pa: [f64; 2],
    pub drop_noise_sd_pa: f64,
    pub drop_duration_samples: [usize; 2],
    /// Translocation only.
    pub step_period_samples: [usize; 2],
    pub step_level_range_pa: [f64; 2],
}

impl PhaseSpec {
    /// A flat phase with Gaussian noise and no drops or steps.
    pub fn flat(kind: PhaseKind, duration_samples: usize, level_pa: f64, noise_sd_pa: f64) -> Self {
        PhaseSpec {
            kind,
            duration_samples,
            level_pa,
            noise_sd_pa,
            drop_rate_hz: 0.0,
            drop_depth_pa: [0.0, 0.0],
            drop_noise_sd_pa: 0.0,
            drop_duration_samples: [1, 1],
            step_period_samples: [1, 1],
            step_level_range_pa: [level_pa, level_pa],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("{:?} phase: {m}", self.kind)));
        if self.duration_samples == 0 {
            return bad("duration must be positive");
        }
        if !(self.noise_sd_pa >= 0.0 && self.drop_noise_sd_pa >= 0.0) || !self.level_pa.is_finite() {
            return bad("noise must be non-negative and level finite");
        }
        if self.drop_rate_hz.is_nan() || self.drop_rate_hz < 0.0 || self.drop_depth_pa[0] > self.drop_depth_pa[1] {
            return bad("bad drop settings");
        }
        let [d0, d1] = self.drop_duration_samples;
        let [s0, s1] = self.step_period_samples;
        if d0 == 0 || d0 > d1 || s0 == 0 || s0 > s1 || self.step_level_range_pa[0] > self.step_level_range_pa[1] {
            return bad("bad drop duration or step settings");
        }
        Ok(())
    }
}

/// Generator defaults. Levels follow the usual open/closed/capture currents;
/// everything else is an engineering choice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub sample_rate_hz: f64,
    pub open_level_pa: f64,
    pub open_sd_pa: f64,
    pub closed_level_pa: f64,
    pub closed_sd_pa: f64,
    pub capture_level_pa: f64,
    pub capture_sd_pa: f64,
    pub drop_rate_hz: f64,
    pub drop_depth_pa: [f64; 2],
    pub drop_sd_pa: f64,
    pub drop_duration_ms: [f64; 2],
    pub step_level_pa: [f64; 2],
    pub step_period_ms: [f64; 2],
    pub translocation_sd_pa: f64,
    /// Log-uniform duration bounds, in raw samples.
    pub capture_duration: [usize; 2],
    pub translocation_duration: [usize; 2],
    pub closed_duration: [usize; 2],
    pub max_closed_phases: usize,
    /// Shortest open stretch between other phases.
    pub min_open: usize,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            sample_rate_hz: 4000.0,
            open_level_pa: 180.0,
            open_sd_pa: 3.0,
            closed_level_pa: 5.0,
            closed_sd_pa: 1.0,
            capture_level_pa: 20.0,
            capture_sd_pa: 5.0,
            drop_rate_hz: 2.0,
            drop_depth_pa: [0.0, 2.0],
            drop_sd_pa: 0.5,
            drop_duration_ms: [5.0, 20.0],
            step_level_pa: [15.0, 40.0],
            step_period_ms: [50.0, 200.0],
            translocation_sd_pa: 2.0,
            capture_duration: [400_000, 2_000_000],
            translocation_duration: [100_000, 600_000],
            closed_duration: [100_000, 400_000],
            max_closed_phases: 2,
            min_open: 200_000,
        }
    }
}

impl SimParams {
    fn ms_to_samples(&self, ms: f64) -> usize {
        ((ms * 1e-3 * self.sample_rate_hz).round() as usize).max(1)
    }

    pub fn phase(&self, kind: PhaseKind, duration_samples: usize) -> PhaseSpec {
        match kind {
            PhaseKind::Open => PhaseSpec::flat(kind, duration_samples, self.open_level_pa, self.open_sd_pa),
            PhaseKind::Closed => PhaseSpec::flat(kind, duration_samples, self.closed_level_pa, self.closed_sd_pa),
            PhaseKind::Capture => PhaseSpec {
                drop_rate_hz: self.drop_rate_hz,
                drop_depth_pa: self.drop_depth_pa,
                drop_noise_sd_pa: self.drop_sd_pa,
                drop_duration_samples: self.drop_duration_ms.map(|ms| self.ms_to_samples(ms)),
                ..PhaseSpec::flat(kind, duration_samples, self.capture_level_pa, self.capture_sd_pa)
            },
            PhaseKind::Translocation => {
                let mid = 0.5 * (self.step_level_pa[0] + self.step_level_pa[1]);
                PhaseSpec {
                    step_period_samples: self.step_period_ms.map(|ms| self.ms_to_samples(ms)),
                    step_level_range_pa: self.step_level_pa,
                    ..PhaseSpec::flat(kind, duration_samples, mid, self.translocation_sd_pa)
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseSpan {
    pub kind: PhaseKind,
    pub start: usize,
    pub end: usize,
}

/// Spans of every phase laid end to end, plus the capture annotations.
pub fn phase_spans(phases: &[PhaseSpec]) -> Vec<PhaseSpan> {
    let mut pos = 0;
    phases
        .iter()
        .map(|p| {
            let span = PhaseSpan {
                kind: p.kind,
                start: pos,
                end: pos + p.duration_samples,
            };
            pos = span.end;
            span
        })
        .collect()
}

pub fn capture_annotations(phases: &[PhaseSpec]) -> Vec<CaptureAnnotation> {
    phase_spans(phases)
        .into_iter()
        .filter(|s| s.kind == PhaseKind::Capture)
        .map(|s| CaptureAnnotation::new(s.start, s.end))
        .collect()
}

/// Emits samples for a phase sequence in arbitrary-sized chunks.
pub struct PhaseStream {
    phases: Vec<PhaseSpec>,
    sample_rate_hz: f64,
    rng: ChaCha8Rng,
    phase: usize,
    phase_end: usize,
    pos: usize,
    next_drop: usize,
    drop_end: usize,
    drop_level: f64,
    step_end: usize,
    step_level: f64,
    record_drops: bool,
    drops: Vec<Range<usize>>,
}

impl PhaseStream {
    pub fn new(phases: Vec<PhaseSpec>, sample_rate_hz: f64, seed: u64) -> Result<Self> {
        if phases.is_empty() {
            return Err(Error::InvalidConfig("at least one phase is required".into()));
        }
        for p in &phases {
            p.validate()?;
        }
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::InvalidConfig(format!("bad sample rate {sample_rate_hz}")));
        }
        let mut s = PhaseStream {
            phases,
            sample_rate_hz,
            rng: ChaCha8Rng::seed_from_u64(seed),
            phase: 0,
            phase_end: 0,
            pos: 0,
            next_drop: usize::MAX,
            drop_end: 0,
            drop_level: 0.0,
            step_end: 0,
            step_level: 0.0,
            record_drops: false,
            drops: Vec::new(),
        };
        s.enter_phase();
        Ok(s)
    }

    /// Keep the spans of injected drops (see [`PhaseStream::drops`]).
    pub fn recording_drops(mut self) -> Self {
        self.record_drops = true;
        self
    }

    pub fn total_len(&self) -> usize {
        self.phases.iter().map(|p| p.duration_samples).sum()
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn is_done(&self) -> bool {
        self.phase >= self.phases.len()
    }

    pub fn drops(&self) -> &[Range<usize>] {
        &self.drops
    }

    fn enter_phase(&mut self) {
        let Some(p) = self.phases.get(self.phase) else { return };
        self.phase_end = self.pos + p.duration_samples;
        self.drop_end = self.pos;
        self.next_drop = self.schedule_drop(self.pos);
        self.step_end = self.pos;
    }

    fn schedule_drop(&mut self, from: usize) -> usize {
        let rate = self.phases[self.phase].drop_rate_hz / self.sample_rate_hz;
        if self.phases[self.phase].kind != PhaseKind::Capture || rate <= 0.0 {
            return usize::MAX;
        }
        let gap: f64 = Exp::new(rate).expect("positive rate").sample(&mut self.rng);
        from.saturating_add(gap.ceil().max(1.0) as usize)
    }

    /// Gaussian around `level`, redrawn until strictly positive.
    fn positive_noise(&mut self, level: f64, sd: f64) -> f32 {
        if sd == 0.0 {
            return level as f32;
        }
        for _ in 0..64 {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            let v = level + sd * z;
            if v > 0.0 {
                return v as f32;
            }
        }
        level.max(0.0) as f32
    }

    fn next_sample(&mut self) -> f32 {
        let p = &self.phases[self.phase];
        let (kind, level, sd) = (p.kind, p.level_pa, p.noise_sd_pa);
        let v = match kind {
            PhaseKind::Capture => {
                if self.pos >= self.drop_end && self.pos >= self.next_drop {
                    let p = &self.phases[self.phase];
                    let (d, depth) = (p.drop_duration_samples, p.drop_depth_pa);
                    let len = self.rng.random_range(d[0]..=d[1]);
                    self.drop_end = (self.pos + len).min(self.phase_end);
                    self.drop_level = self.rng.random_range(depth[0]..=depth[1]);
                    if self.record_drops {
                        self.drops.push(self.pos..self.drop_end);
                    }
                    self.next_drop = self.schedule_drop(self.drop_end);
                }
                if self.pos < self.drop_end {
                    let sd = self.phases[self.phase].drop_noise_sd_pa;
                    self.positive_noise(self.drop_level, sd)
                } else {
                    self.positive_noise(level, sd)
                }
            }
            PhaseKind::Translocation => {
                if self.pos >= self.step_end {
                    let p = &self.phases[self.phase];
                    let (period, range) = (p.step_period_samples, p.step_level_range_pa);
                    self.step_end = self.pos + self.rng.random_range(period[0]..=period[1]);
                    self.step_level = self.rng.random_range(range[0]..=range[1]);
                }
                self.positive_noise(self.step_level, sd)
            }
            PhaseKind::Open | PhaseKind::Closed => self.positive_noise(level, sd),
        };
        self.pos += 1;
        if self.pos == self.phase_end {
            self.phase += 1;
            self.enter_phase();
        }
        v
    }

    /// Fills `buf` from the current position; returns the number written
    /// (less than `buf.len()` only at the end of the sequence).
    pub fn fill(&mut self, buf: &mut [f32]) -> usize {
        let mut n = 0;
        while n < buf.len() && !self.is_done() {
            buf[n] = self.next_sample();
            n += 1;
        }
        n
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedRun {
    pub trace: Trace,
    pub annotations: Vec<CaptureAnnotation>,
    pub phases: Vec<PhaseSpan>,
    /// Raw spans of injected near-zero drops inside captures.
    pub drops: Vec<Range<usize>>,
}

impl SimulatedRun {
    pub fn with_identity(mut self, run_id: impl Into<String>, channel: u16) -> Self {
        self.trace.run_id = run_id.into();
        self.trace.channel = channel;
        self
    }

    pub fn into_labeled(self) -> LabeledRun {
        LabeledRun {
            trace: self.trace,
            annotations: self.annotations,
        }
    }
}

/// Concatenates the phases into one trace (run id "synthetic", channel 1).
pub fn generate_trace(phases: &[PhaseSpec], sample_rate_hz: f64, seed: u64) -> Result<SimulatedRun> {
    let mut stream = PhaseStream::new(phases.to_vec(), sample_rate_hz, seed)?.recording_drops();
    let mut samples = vec![0.0f32; stream.total_len()];
    let n = stream.fill(&mut samples);
    debug_assert_eq!(n, samples.len());
    Ok(SimulatedRun {
        trace: Trace::new("synthetic", 1, sample_rate_hz, samples)?,
        annotations: capture_annotations(phases),
        phases: phase_spans(phases),
        drops: stream.drops,
    })
}

fn draw_capped(rng: &mut impl Rng, [lo, hi]: [usize; 2], cap: usize) -> usize {
    let v = log_uniform(rng, [lo as f64, hi as f64]).round() as usize;
    v.clamp(lo, hi).min(cap)
}

/// Random phase layout with exactly `n_captures` captures, each followed by
/// a translocation, separated by open stretches with a few closed phases.
pub fn plan_run(n_captures: usize, total_samples: usize, seed: u64, params: &SimParams) -> Result<Vec<PhaseSpec>> {
    let [cap_lo, _] = params.capture_duration;
    let [tr_lo, _] = params.translocation_duration;
    let gaps = n_captures + 1;
    let required = n_captures * (cap_lo + tr_lo) + gaps * params.min_open;
    if total_samples < required.max(1) {
        return Err(Error::InfeasibleLayout(format!(
            "{n_captures} captures need at least {required} samples, got {total_samples}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut budget = total_samples - gaps * params.min_open;

    let mut events = Vec::with_capacity(n_captures);
    for i in 0..n_captures {
        // Leave room for the minimum durations of the pairs still to come.
        let reserve = (n_captures - i - 1) * (cap_lo + tr_lo);
        let cap = draw_capped(&mut rng, params.capture_duration, budget - reserve - tr_lo);
        budget -= cap;
        let tr = draw_capped(&mut rng, params.translocation_duration, budget - reserve);
        budget -= tr;
        events.push((cap, tr));
    }

    let n_closed = rng.random_range(0..=params.max_closed_phases);
    let mut closed: Vec<(usize, usize)> = Vec::new();
    for _ in 0..n_closed {
        if budget < params.closed_duration[0] {
            break;
        }
        let len = draw_capped(&mut rng, params.closed_duration, budget);
        budget -= len;
        closed.push((rng.random_range(0..gaps), len));
    }

    // Remaining budget is extra open time, split by random weights.
    let weights: Vec<f64> = (0..gaps).map(|_| rng.random_range(0.05..1.0)).collect();
    let wsum: f64 = weights.iter().sum();
    let mut open: Vec<usize> = weights
        .iter()
        .map(|w| params.min_open + (budget as f64 * w / wsum).floor() as usize)
        .collect();
    let assigned: usize = open.iter().sum::<usize>() + events.iter().map(|(c, t)| c + t).sum::<usize>()
        + closed.iter().map(|(_, l)| l).sum::<usize>();
    open[gaps - 1] += total_samples - assigned;

    let mut phases = Vec::new();
    for (g, &open_len) in open.iter().enumerate() {
        let closed_here: Vec<usize> = closed.iter().filter(|(at, _)| *at == g).map(|&(_, l)| l).collect();
        if closed_here.is_empty() {
            phases.push(params.phase(PhaseKind::Open, open_len));
        } else {
            // open, closed, open, closed, ..., open
            let pieces = closed_here.len() + 1;
            let each = open_len / pieces;
            for (k, &c) in closed_here.iter().enumerate() {
                phases.push(params.phase(PhaseKind::Open, if k == 0 { open_len - each * (pieces - 1) } else { each }));
                phases.push(params.phase(PhaseKind::Closed, c));
            }
            phases.push(params.phase(PhaseKind::Open, each));
        }
        if let Some(&(cap, tr)) = events.get(g) {
            phases.push(params.phase(PhaseKind::Capture, cap));
            phases.push(params.phase(PhaseKind::Translocation, tr));
        }
    }
    phases.retain(|p| p.duration_samples > 0);
    Ok(phases)
}

pub fn generate_run(n_captures: usize, total_samples: usize, seed: u64, params: &SimParams) -> Result<SimulatedRun> {
    let phases = plan_run(n_captures, total_samples, derive_seed(seed, &[0]), params)?;
    generate_trace(&phases, params.sample_rate_hz, derive_seed(seed, &[1]))
}

pub const DEFAULT_RUN_SAMPLES: usize = 6_000_000;

/// `n_runs` labelled runs named `run000`, `run001`, ... with a capture count
/// drawn uniformly from `captures`.
pub fn simulate_dataset(
    n_runs: usize,
    total_samples: usize,
    captures: RangeInclusive<usize>,
    seed: u64,
    params: &SimParams,
    exec: Exec,
) -> Result<Vec<LabeledRun>> {
    let ids: Vec<usize> = (0..n_runs).collect();
    exec.try_map(&ids, |&i| {
        let run_seed = derive_seed(seed, &[i as u64]);
        let n = ChaCha8Rng::seed_from_u64(derive_seed(run_seed, &[2])).random_range(captures.clone());
        let channel = (i % crate::types::MAX_CHANNELS as usize) as u16 + 1;
        Ok(generate_run(n, total_samples, run_seed, params)?
            .with_identity(format!("run{i:03}"), channel)
            .into_labeled())
    })
}

/// A pore that never conducts: near-zero current throughout.
pub fn dead_channel_phases(total_samples: usize) -> Vec<PhaseSpec> {
    vec![PhaseSpec::flat(PhaseKind::Closed, total_samples, 0.5, 0.5)]
}
