//! Streaming detection server: replays recorded traces or simulates a live
//! flow cell, runs the detector per channel and pushes results over SSE.

pub mod api;
pub mod hub;
pub mod ingest;
pub mod protocol;
pub mod schemas;
pub mod session;
pub mod source;

pub use api::{router, serve, AppState};
pub use hub::{Envelope, Hub, Subscriber};
pub use ingest::{DeadPoreConfig, DetectorEvent, StreamingDetector};
pub use protocol::ServerEvent;
pub use session::{Session, SessionConfig, SessionManager};
