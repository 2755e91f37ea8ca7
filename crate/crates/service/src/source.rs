//! Where channel samples come from: recorded traces or the simulator.

use std::collections::HashSet;
use std::path::PathBuf;

use capdet_core::exec::derive_seed;
use capdet_core::io::read_trace;
use capdet_core::sim::{dead_channel_phases, plan_run, PhaseStream, SimParams};
use capdet_core::types::{Trace, MAX_CHANNELS};
use capdet_core::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub trait ChannelSource: Send {
    fn channel(&self) -> u16;
    fn run_id(&self) -> &str;
    fn sample_rate_hz(&self) -> f64;
    /// Replaces `buf` with up to `max` new samples; an empty `buf` means the
    /// source is exhausted.
    fn next_chunk(&mut self, buf: &mut Vec<f32>, max: usize);
}

pub struct ReplaySource {
    trace: Trace,
    pos: usize,
}

impl ReplaySource {
    pub fn new(trace: Trace) -> Self {
        ReplaySource { trace, pos: 0 }
    }
}

impl ChannelSource for ReplaySource {
    fn channel(&self) -> u16 {
        self.trace.channel
    }

    fn run_id(&self) -> &str {
        &self.trace.run_id
    }

    fn sample_rate_hz(&self) -> f64 {
        self.trace.sample_rate_hz
    }

    fn next_chunk(&mut self, buf: &mut Vec<f32>, max: usize) {
        let end = (self.pos + max).min(self.trace.samples.len());
        buf.clear();
        buf.extend_from_slice(&self.trace.samples[self.pos..end]);
        self.pos = end;
    }
}

pub struct SimSource {
    stream: PhaseStream,
    run_id: String,
    channel: u16,
    sample_rate_hz: f64,
}

impl ChannelSource for SimSource {
    fn channel(&self) -> u16 {
        self.channel
    }

    fn run_id(&self) -> &str {
        &self.run_id
    }

    fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    fn next_chunk(&mut self, buf: &mut Vec<f32>, max: usize) {
        buf.resize(max, 0.0);
        let n = self.stream.fill(buf);
        buf.truncate(n);
    }
}

pub fn check_channel_count(n: usize) -> Result<()> {
    if n == 0 || n > MAX_CHANNELS as usize {
        return Err(Error::InvalidConfig(format!("a session needs 1 to {MAX_CHANNELS} channels, got {n}")));
    }
    Ok(())
}

/// One channel per file; channel numbers come from the files and must be
/// unique.
pub fn replay_sources(files: &[PathBuf]) -> Result<Vec<Box<dyn ChannelSource>>> {
    check_channel_count(files.len())?;
    let mut seen = HashSet::new();
    let mut out: Vec<Box<dyn ChannelSource>> = Vec::with_capacity(files.len());
    for f in files {
        let trace = read_trace(f)?;
        if !seen.insert(trace.channel) {
            return Err(Error::InvalidConfig(format!("channel {} appears in more than one file", trace.channel)));
        }
        out.push(Box::new(ReplaySource::new(trace)));
    }
    Ok(out)
}

pub fn replay_traces(traces: Vec<Trace>) -> Result<Vec<Box<dyn ChannelSource>>> {
    check_channel_count(traces.len())?;
    let mut seen = HashSet::new();
    traces
        .into_iter()
        .map(|t| {
            if !seen.insert(t.channel) {
                return Err(Error::InvalidConfig(format!("channel {} appears twice", t.channel)));
            }
            Ok(Box::new(ReplaySource::new(t)) as Box<dyn ChannelSource>)
        })
        .collect()
}

pub const DEFAULT_DEAD_FRACTION: f64 = 0.05;

/// Channels `1..=n_channels`, each an independent simulated run with 0 to 3
/// captures; roughly `dead_fraction` of them are dead pores.
pub fn live_sim_sources(
    n_channels: usize,
    seed: u64,
    samples_per_channel: usize,
    dead_fraction: f64,
    params: &SimParams,
) -> Result<Vec<Box<dyn ChannelSource>>> {
    check_channel_count(n_channels)?;
    (1..=n_channels as u16)
        .map(|ch| {
            let ch_seed = derive_seed(seed, &[u64::from(ch)]);
            let mut rng = ChaCha8Rng::seed_from_u64(ch_seed);
            let phases = if rng.random_bool(dead_fraction.clamp(0.0, 1.0)) {
                dead_channel_phases(samples_per_channel)
            } else {
                let wanted = rng.random_range(0..=3usize);
                // Fewer captures if the run is too short to hold them.
                (0..=wanted)
                    .rev()
                    .find_map(|n| plan_run(n, samples_per_channel, derive_seed(ch_seed, &[0]), params).ok())
                    .unwrap_or_else(|| vec![params.phase(capdet_core::sim::PhaseKind::Open, samples_per_channel)])
            };
            let stream = PhaseStream::new(phases, params.sample_rate_hz, derive_seed(ch_seed, &[1]))?;
            Ok(Box::new(SimSource {
                stream,
                run_id: format!("live-{seed}"),
                channel: ch,
                sample_rate_hz: params.sample_rate_hz,
            }) as Box<dyn ChannelSource>)
        })
        .collect()
}
