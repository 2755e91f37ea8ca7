//! Capture-phase detection for nanopore ionic-current traces.

pub mod baseline;
pub mod detect;
pub mod error;
pub mod exec;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod postprocess;
pub mod preprocess;
pub mod search;
pub mod sim;
pub mod train;
pub mod types;

pub use error::{Error, Result};
pub use exec::{derive_seed, Exec};
pub use types::{CaptureAnnotation, CaptureRegion, DetectorConfig, MetricsReport, Trace};
