//! Guided policy search outer loop.

pub mod log;
pub mod pd;
pub mod trainer;

pub use log::{LogRow, TraceRow, TrainingLog, LOG_COLUMNS, TRACE_COLUMNS};
pub use pd::{init_policy_pd, PdGains};
pub use trainer::{train, GpsConfig, GpsOutput, GpsSettings, GpsTrainer};
