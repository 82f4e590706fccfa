//! Alarm and explanation quality protocols: ROC over pooled cross-validated
//! scores, per-type alarm thresholds with coverage and false-alarm rates,
//! and precision/recall of highlighted tau-segments against reference
//! intervals.

mod alarms;
mod baselines;
pub mod experiment;
mod explanation;
mod folds;
mod roc;

pub use alarms::{
    alarm_eval, choose_threshold, default_coverage_target, AlarmStats, ProbSeries, ThresholdEntry,
    ThresholdTable,
};
pub use baselines::{random_importance, uniform_importance, BASELINE_M_PERCENT, RANDOM_DRAWS};
pub use explanation::{explanation_counts, extended_channels, PrCounts, PrMode, PrResult};
pub use folds::{FoldPlan, DEFAULT_FOLDS};
pub use roc::{roc_auc, Roc};
