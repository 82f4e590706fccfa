//! Interpretable drilling-accident alarms.
//!
//! Telemetry is windowed into one-hour segments, quantized into a
//! 2400-long bag-of-features histogram, scored by per-accident gradient
//! boosted trees and explained with path-dependent tree Shapley values that
//! are mapped back onto the telemetry as highlighted intervals.

pub mod bag_of_features;
pub mod consistency;
pub mod error;
pub mod evaluation;
pub mod fcmh;
pub mod gbm;
pub mod shap;
pub mod synthgen;
pub mod telemetry;

pub use error::{Error, Result};
pub use telemetry::{
    AccidentEvent, AccidentType, Dataset, Mnemonic, ReferenceInterval, Segment, TelemetryLog,
};
