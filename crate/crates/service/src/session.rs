//! Detection sessions: a runner thread pulls chunks from every channel
//! source, feeds the per-channel detectors and publishes events.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use capdet_core::detect::WindowClassifier;
use capdet_core::exec::Exec;
use capdet_core::io::{ChannelStatus, DetectionExport, ExportConfig, EXPORT_SCHEMA_VERSION};
use capdet_core::types::DetectorConfig;
use capdet_core::{Error, Result};

use crate::hub::{Hub, Subscriber};
use crate::ingest::{DeadPoreConfig, DetectorEvent, StreamingDetector};
use crate::protocol::{
    decimate, ChannelSummary, ChannelUpdate, ControlRequest, Heartbeat, RegionEvent, ServerEvent, SessionExport,
    SessionState, SessionSummary, SignalResponse, WindowProbability,
};
use crate::source::{check_channel_count, ChannelSource};

pub const DEFAULT_CHUNK_SAMPLES: usize = 4000;
/// Downsampled points kept per channel (one 6 M-sample run at factor 100).
pub const DEFAULT_HORIZON: usize = 60_000;
pub const DEFAULT_EVENT_BUFFER: usize = 4096;

pub struct SessionConfig {
    pub sources: Vec<Box<dyn ChannelSource>>,
    pub model: Arc<dyn WindowClassifier>,
    pub detector: DetectorConfig,
    pub dead_pore: DeadPoreConfig,
    /// Multiple of real time; `None` runs as fast as possible.
    pub speed: Option<f64>,
    pub chunk_samples: usize,
    pub horizon: usize,
    pub heartbeat: Duration,
    pub event_buffer: usize,
    pub exec: Exec,
}

impl SessionConfig {
    pub fn new(sources: Vec<Box<dyn ChannelSource>>, model: Arc<dyn WindowClassifier>, detector: DetectorConfig) -> Self {
        SessionConfig {
            sources,
            model,
            detector,
            dead_pore: DeadPoreConfig::default(),
            speed: None,
            chunk_samples: DEFAULT_CHUNK_SAMPLES,
            horizon: DEFAULT_HORIZON,
            heartbeat: Duration::from_secs(1),
            event_buffer: DEFAULT_EVENT_BUFFER,
            exec: Exec::default(),
        }
    }
}

fn check_speed(speed: Option<f64>) -> Result<()> {
    match speed {
        Some(s) if s.is_nan() || s <= 0.0 => Err(Error::InvalidConfig(format!("speed must be positive, got {s}"))),
        _ => Ok(()),
    }
}

pub fn check_threshold(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidConfig(format!("threshold must be in [0, 1], got {t}")));
    }
    Ok(())
}

struct ChannelSlot {
    source: Box<dyn ChannelSource>,
    detector: StreamingDetector,
    last_update: Option<String>,
    done: bool,
}

struct Control {
    state: SessionState,
    speed: Option<f64>,
    error: Option<String>,
}

struct Shared {
    id: String,
    created_at: String,
    model_id: String,
    detector: DetectorConfig,
    channels: Vec<Mutex<ChannelSlot>>,
    by_number: HashMap<u16, usize>,
    threshold: AtomicU64,
    control: Mutex<Control>,
    wake: Condvar,
    hub: Hub,
    ticks: AtomicUsize,
}

pub struct Session {
    shared: Arc<Shared>,
    runner: Mutex<Option<JoinHandle<()>>>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl Session {
    pub fn start(id: impl Into<String>, cfg: SessionConfig) -> Result<Arc<Session>> {
        check_channel_count(cfg.sources.len())?;
        check_speed(cfg.speed)?;
        check_threshold(cfg.detector.threshold)?;
        if cfg.chunk_samples == 0 {
            return Err(Error::InvalidConfig("chunk size must be positive".into()));
        }
        let mut by_number = HashMap::new();
        let mut channels = Vec::with_capacity(cfg.sources.len());
        for (i, source) in cfg.sources.into_iter().enumerate() {
            if by_number.insert(source.channel(), i).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate channel {}", source.channel())));
            }
            let detector = StreamingDetector::new(
                Arc::clone(&cfg.model),
                cfg.detector,
                cfg.dead_pore,
                source.sample_rate_hz(),
                cfg.horizon,
            )?;
            channels.push(Mutex::new(ChannelSlot {
                source,
                detector,
                last_update: None,
                done: false,
            }));
        }
        let shared = Arc::new(Shared {
            id: id.into(),
            created_at: now(),
            model_id: cfg.model.model_id().to_string(),
            detector: cfg.detector,
            channels,
            by_number,
            threshold: AtomicU64::new(cfg.detector.threshold.to_bits()),
            control: Mutex::new(Control {
                state: SessionState::Running,
                speed: cfg.speed,
                error: None,
            }),
            wake: Condvar::new(),
            hub: Hub::new(cfg.event_buffer),
            ticks: AtomicUsize::new(0),
        });
        let runner_shared = Arc::clone(&shared);
        let (chunk, heartbeat, exec) = (cfg.chunk_samples, cfg.heartbeat, cfg.exec);
        let handle = std::thread::Builder::new()
            .name(format!("session-{}", shared.id))
            .spawn(move || run(runner_shared, chunk, heartbeat, exec))
            .map_err(|e| Error::InvalidConfig(format!("cannot start session thread: {e}")))?;
        Ok(Arc::new(Session {
            shared,
            runner: Mutex::new(Some(handle)),
        }))
    }

    pub fn id(&self) -> &str {
        &self.shared.id
    }

    pub fn n_channels(&self) -> usize {
        self.shared.channels.len()
    }

    pub fn threshold(&self) -> f64 {
        f64::from_bits(self.shared.threshold.load(Ordering::Acquire))
    }

    /// Applies to windows scored from now on; existing regions are kept.
    pub fn set_threshold(&self, t: f64) -> Result<()> {
        check_threshold(t)?;
        self.shared.threshold.store(t.to_bits(), Ordering::Release);
        Ok(())
    }

    pub fn state(&self) -> SessionState {
        self.shared.control.lock().unwrap().state
    }

    pub fn subscribe(&self) -> Subscriber {
        self.shared.hub.subscribe()
    }

    pub fn control(&self, req: &ControlRequest) -> Result<SessionState> {
        let mut c = self.shared.control.lock().unwrap();
        let active = matches!(c.state, SessionState::Running | SessionState::Paused);
        match req {
            ControlRequest::Pause if active => c.state = SessionState::Paused,
            ControlRequest::Resume if active => c.state = SessionState::Running,
            ControlRequest::Stop if active => c.state = SessionState::Stopped,
            ControlRequest::SetSpeed { speed } => {
                check_speed(*speed)?;
                c.speed = *speed;
            }
            _ => {}
        }
        let state = c.state;
        drop(c);
        self.shared.wake.notify_all();
        Ok(state)
    }

    pub fn stop(&self) {
        let _ = self.control(&ControlRequest::Stop);
    }

    /// Blocks until the runner thread exits.
    pub fn wait(&self) {
        if let Some(h) = self.runner.lock().unwrap().take() {
            let _ = h.join();
        }
    }

    pub fn summary(&self) -> SessionSummary {
        let c = self.shared.control.lock().unwrap();
        SessionSummary {
            session_id: self.shared.id.clone(),
            state: c.state,
            n_channels: self.n_channels(),
            created_at: self.shared.created_at.clone(),
            speed: c.speed,
            threshold: self.threshold(),
            model: self.shared.model_id.clone(),
            error: c.error.clone(),
        }
    }

    fn slot(&self, channel: u16) -> Option<MutexGuard<'_, ChannelSlot>> {
        let &i = self.shared.by_number.get(&channel)?;
        Some(self.shared.channels[i].lock().unwrap())
    }

    pub fn channels(&self) -> Vec<ChannelSummary> {
        self.shared
            .channels
            .iter()
            .map(|m| {
                let s = m.lock().unwrap();
                ChannelSummary {
                    channel: s.source.channel(),
                    run_id: s.source.run_id().to_string(),
                    status: s.detector.status(),
                    last_update: s.last_update.clone(),
                    raw_samples: s.detector.raw_len(),
                    regions: s.detector.regions().len(),
                }
            })
            .collect()
    }

    pub fn signal(&self, channel: u16, max_points: usize) -> Option<SignalResponse> {
        let s = self.slot(channel)?;
        let d = &s.detector;
        let values: Vec<f32> = d.ds_values().collect();
        let (points, decimated) = decimate(&values, d.ds_offset(), max_points);
        Some(SignalResponse {
            channel,
            downsample_factor: d.config().downsample_factor,
            ds_start: d.ds_offset(),
            ds_end: d.ds_len(),
            decimated,
            points,
            regions: d.regions(),
            windows: d
                .windows()
                .map(|w| WindowProbability {
                    ds_start: w.ds_start,
                    ds_end: w.ds_end,
                    probability: w.probability,
                })
                .collect(),
        })
    }

    pub fn export_channel(&self, channel: u16) -> Option<DetectionExport> {
        let s = self.slot(channel)?;
        Some(self.export_slot(&s))
    }

    fn export_slot(&self, s: &ChannelSlot) -> DetectionExport {
        let mut cfg = self.shared.detector;
        cfg.threshold = self.threshold();
        DetectionExport::new(
            s.source.run_id(),
            s.source.channel(),
            s.detector.status(),
            s.detector.regions(),
            ExportConfig::new(&cfg, self.shared.model_id.clone()),
        )
    }

    pub fn export(&self) -> SessionExport {
        SessionExport {
            schema_version: EXPORT_SCHEMA_VERSION,
            session_id: self.shared.id.clone(),
            generated_at: now(),
            channels: self
                .shared
                .channels
                .iter()
                .map(|m| self.export_slot(&m.lock().unwrap()))
                .collect(),
        }
    }

    /// Runner ticks so far (one chunk per channel per tick).
    pub fn ticks(&self) -> usize {
        self.shared.ticks.load(Ordering::Relaxed)
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.stop();
    }
}

fn to_server_events(channel: u16, events: Vec<DetectorEvent>) -> impl Iterator<Item = ServerEvent> {
    events.into_iter().map(move |e| match e {
        DetectorEvent::Status(status) => ServerEvent::ChannelUpdate(ChannelUpdate { channel, status }),
        DetectorEvent::Region(r) => ServerEvent::Region(RegionEvent {
            channel,
            start_raw: r.start_raw,
            end_raw: r.end_raw,
            confidence: r.confidence,
        }),
    })
}

fn step_channel(slot: &Mutex<ChannelSlot>, chunk: usize, threshold: f64, buf: &mut Vec<f32>) -> Result<(Vec<ServerEvent>, bool)> {
    let mut s = slot.lock().unwrap();
    if s.done {
        return Ok((Vec::new(), true));
    }
    s.source.next_chunk(buf, chunk);
    let channel = s.source.channel();
    let events = if buf.is_empty() {
        s.done = true;
        s.detector.finish(threshold)?
    } else {
        s.detector.ingest(buf, threshold)?
    };
    s.last_update = Some(now());
    Ok((to_server_events(channel, events).collect(), s.done))
}

fn run(shared: Arc<Shared>, chunk: usize, heartbeat: Duration, exec: Exec) {
    let started = Instant::now();
    let mut last_beat = Instant::now();
    let sample_rate = shared.channels.first().map_or(1.0, |c| c.lock().unwrap().source.sample_rate_hz());
    let indices: Vec<usize> = (0..shared.channels.len()).collect();
    let mut signal_time = 0.0f64;
    let mut pace_origin = (Instant::now(), 0.0f64);
    let mut last_speed: Option<f64> = None;
    loop {
        let speed = {
            let mut c = shared.control.lock().unwrap();
            while c.state == SessionState::Paused {
                c = shared.wake.wait(c).unwrap();
                pace_origin = (Instant::now(), signal_time);
            }
            if c.state != SessionState::Running {
                break;
            }
            c.speed
        };
        if speed != last_speed {
            pace_origin = (Instant::now(), signal_time);
            last_speed = speed;
        }

        let threshold = f64::from_bits(shared.threshold.load(Ordering::Acquire));
        let results = exec.map(&indices, |&i| {
            let mut buf = Vec::with_capacity(chunk);
            step_channel(&shared.channels[i], chunk, threshold, &mut buf)
        });
        let mut all_done = true;
        let mut failure = None;
        let mut events = Vec::new();
        for r in results {
            match r {
                Ok((ev, done)) => {
                    events.extend(ev);
                    all_done &= done;
                }
                Err(e) => failure = Some(e.to_string()),
            }
        }
        shared.hub.publish(events);
        shared.ticks.fetch_add(1, Ordering::Relaxed);
        if let Some(msg) = failure {
            tracing::error!(session = %shared.id, "session failed: {msg}");
            let mut c = shared.control.lock().unwrap();
            c.state = SessionState::Failed;
            c.error = Some(msg);
            break;
        }
        if all_done {
            let mut c = shared.control.lock().unwrap();
            if c.state == SessionState::Running {
                c.state = SessionState::Finished;
            }
            break;
        }
        if last_beat.elapsed() >= heartbeat {
            last_beat = Instant::now();
            shared.hub.publish([ServerEvent::Heartbeat(Heartbeat {
                timestamp: now(),
                session_id: shared.id.clone(),
            })]);
        }
        signal_time += chunk as f64 / sample_rate;
        if let Some(speed) = speed {
            let due = pace_origin.0 + Duration::from_secs_f64((signal_time - pace_origin.1) / speed);
            let c = shared.control.lock().unwrap();
            let wait = due.saturating_duration_since(Instant::now());
            if !wait.is_zero() {
                // Woken early by control changes.
                let _ = shared.wake.wait_timeout(c, wait).unwrap();
            }
        }
    }
    tracing::info!(session = %shared.id, elapsed = ?started.elapsed(), "session runner exited");
    shared.hub.close();
}

/// All sessions of one server.
#[derive(Default)]
pub struct SessionManager {
    sessions: Mutex<HashMap<String, Arc<Session>>>,
    next_id: AtomicU64,
}

impl SessionManager {
    pub fn create(&self, cfg: SessionConfig) -> Result<Arc<Session>> {
        let n = self.next_id.fetch_add(1, Ordering::Relaxed) + 1;
        let session = Session::start(format!("s{n}"), cfg)?;
        self.sessions.lock().unwrap().insert(session.id().to_string(), Arc::clone(&session));
        Ok(session)
    }

    pub fn get(&self, id: &str) -> Option<Arc<Session>> {
        self.sessions.lock().unwrap().get(id).cloned()
    }

    pub fn list(&self) -> Vec<Arc<Session>> {
        let mut v: Vec<_> = self.sessions.lock().unwrap().values().cloned().collect();
        v.sort_by_key(|s| s.id()[1..].parse::<u64>().unwrap_or(u64::MAX));
        v
    }

    pub fn remove(&self, id: &str) -> Option<Arc<Session>> {
        let s = self.sessions.lock().unwrap().remove(id)?;
        s.stop();
        Some(s)
    }
}

/// Snapshot of per-channel statuses, for tests and summaries.
pub fn status_counts(channels: &[ChannelSummary]) -> HashMap<ChannelStatus, usize> {
    let mut m = HashMap::new();
    for c in channels {
        *m.entry(c.status).or_insert(0) += 1;
    }
    m
}
