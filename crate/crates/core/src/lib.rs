//! Laboratory environmental monitoring network.
//!
//! Measurement nodes answer UDP polls from a central collector (or push their
//! own points), a time-series store ingests everything through a line format,
//! an alert engine watches thresholds, ramp rates and the seed-power
//! interlock, and an analysis toolkit correlates the collected signals. A
//! scenario simulator stands in for the laboratories and supplies ground truth.

pub mod alert;
pub mod api;
pub mod analysis;
pub mod clock;
pub mod collector;
pub mod node;
pub mod retry;
pub mod sim;
pub mod sink;
pub mod storage;
pub mod wire;

pub use clock::{Clock, ManualClock, ScaledClock, SystemClock};
pub use sink::{PointSink, SinkError};
pub use storage::{SeriesFrame, SeriesKey, SeriesQuery, Store};
pub use wire::{DataPoint, NodePayload, Reading, WireError};
