//! JSON schemas of the wire protocol (draft 2020-12).

pub const SERVER_EVENT: &str = include_str!("../schemas/server_event.schema.json");
pub const SESSION_SUMMARY: &str = include_str!("../schemas/session_summary.schema.json");
pub const CHANNEL_LIST: &str = include_str!("../schemas/channel_list.schema.json");
pub const SIGNAL: &str = include_str!("../schemas/signal.schema.json");
pub const SESSION_EXPORT: &str = include_str!("../schemas/session_export.schema.json");
pub const ERROR: &str = include_str!("../schemas/error.schema.json");
pub const CREATE_SESSION: &str = include_str!("../schemas/create_session.schema.json");
pub const CONTROL: &str = include_str!("../schemas/control.schema.json");
pub const THRESHOLD: &str = include_str!("../schemas/threshold.schema.json");
pub use capdet_core::io::EXPORT_SCHEMA as DETECTION_EXPORT;

pub const ALL: [(&str, &str); 10] = [
    ("server_event", SERVER_EVENT),
    ("session_summary", SESSION_SUMMARY),
    ("channel_list", CHANNEL_LIST),
    ("signal", SIGNAL),
    ("session_export", SESSION_EXPORT),
    ("error", ERROR),
    ("create_session", CREATE_SESSION),
    ("control", CONTROL),
    ("threshold", THRESHOLD),
    ("detection_export", DETECTION_EXPORT),
];
