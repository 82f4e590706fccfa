//! Shapley attributions for boosted-tree alarms and their mapping back to
//! highlighted telemetry.
//!
//! Attributions live on the log-odds scale. Features whose importance
//! reaches `M` percent of the maximum are selected, and every tau-segment
//! quantized into a selected cluster is highlighted on its channel.

mod brute;
mod tree_shap;

use serde::{Deserialize, Serialize};

pub use brute::{brute_force_shapley, MAX_BRUTE_FORCE_FEATURES};

use crate::bag_of_features::{feature_channel, featurize, Codebooks, FeatureVector, SegmentIndex};
use crate::error::{Error, Result};
use crate::gbm::{FeatureRow, GbmModel};
use crate::telemetry::{Mnemonic, Segment};

pub const DEFAULT_M_PERCENT: f64 = 20.0;

/// `base_value + sum(values)` reproduces the model logit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub base_value: f64,
    pub values: Vec<f64>,
}

impl Attribution {
    pub fn total(&self) -> f64 {
        self.base_value + self.values.iter().sum::<f64>()
    }

    pub fn importance(&self, mode: ImportanceMode) -> Vec<f64> {
        self.values
            .iter()
            .map(|&v| match mode {
                ImportanceMode::Positive => v.max(0.0),
                ImportanceMode::Absolute => v.abs(),
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImportanceMode {
    /// Only contributions toward the accident class count.
    #[default]
    Positive,
    Absolute,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainConfig {
    pub m_percent: f64,
    pub importance: ImportanceMode,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            m_percent: DEFAULT_M_PERCENT,
            importance: ImportanceMode::Positive,
        }
    }
}

impl ExplainConfig {
    pub fn new(m_percent: f64) -> Result<Self> {
        let cfg = ExplainConfig {
            m_percent,
            ..ExplainConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_percent > 0.0 && self.m_percent <= 100.0 {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "M must lie in (0, 100], got {}",
                self.m_percent
            )))
        }
    }
}

/// Exact path-dependent Shapley values of every feature.
pub fn tree_shap<X: FeatureRow + ?Sized>(model: &GbmModel, x: &X) -> Result<Attribution> {
    if x.n_features() != model.n_features {
        return Err(Error::Usage(format!(
            "input has {} features, model expects {}",
            x.n_features(),
            model.n_features
        )));
    }
    let mut values = vec![0.0; model.n_features];
    let mut base_value = model.base_score;
    for (tree, &w) in model.trees.iter().zip(&model.tree_weights) {
        tree.validate()?;
        base_value += w * tree.expected_value();
        tree_shap::tree_contributions(tree, x, w, &mut values);
    }
    Ok(Attribution { base_value, values })
}

/// Indices with importance at least `m_percent` of the maximum. `None` when
/// no importance is positive.
pub fn select_by_importance(importance: &[f64], m_percent: f64) -> Option<Vec<usize>> {
    let max = importance.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) {
        return None;
    }
    let cutoff = max * m_percent / 100.0;
    Some(
        importance
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0 && v >= cutoff)
            .map(|(j, _)| j)
            .collect(),
    )
}

pub fn select_top(attr: &Attribution, cfg: &ExplainConfig) -> Result<Option<Vec<usize>>> {
    cfg.validate()?;
    Ok(select_by_importance(&attr.importance(cfg.importance), cfg.m_percent))
}

/// Half-open range of sample offsets inside the explained segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelHighlight {
    pub channel: Mnemonic,
    /// Disjoint, sorted, non-touching.
    pub intervals: Vec<Interval>,
    /// Starts of the highlighted tau-segments, sorted.
    pub tau_starts: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HighlightSet {
    pub tau_len: usize,
    /// Sorted by channel; channels without highlights are absent.
    pub channels: Vec<ChannelHighlight>,
    pub features: Vec<usize>,
}

impl HighlightSet {
    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn channel(&self, m: Mnemonic) -> Option<&ChannelHighlight> {
        self.channels.iter().find(|c| c.channel == m)
    }

    /// Every highlighted tau-segment as `(channel, start offset)`.
    pub fn taus(&self) -> impl Iterator<Item = (Mnemonic, usize)> + '_ {
        self.channels
            .iter()
            .flat_map(|c| c.tau_starts.iter().map(move |&s| (c.channel, s)))
    }

    /// Intervals in absolute seconds, `[start, end)`.
    pub fn time_intervals(&self, segment_start: i64, step: i64) -> Vec<(Mnemonic, i64, i64)> {
        self.channels
            .iter()
            .flat_map(|c| {
                c.intervals.iter().map(move |iv| {
                    (
                        c.channel,
                        segment_start + iv.start as i64 * step,
                        segment_start + iv.end as i64 * step,
                    )
                })
            })
            .collect()
    }
}

/// Unions the spans of every tau-segment counted in a selected feature.
pub fn highlight(selected: &[usize], idx: &SegmentIndex) -> Result<HighlightSet> {
    let mut per_channel: Vec<Vec<usize>> = vec![Vec::new(); Mnemonic::ALL.len()];
    let mut features = Vec::new();
    for &f in selected {
        if f >= idx.n_features() {
            return Err(Error::Usage(format!(
                "feature {f} outside 0..{}",
                idx.n_features()
            )));
        }
        features.push(f);
        let c = feature_channel(f).index();
        per_channel[c].extend(idx.starts(f).iter().map(|&s| s as usize));
    }
    features.sort_unstable();
    features.dedup();

    let len = idx.tau_len();
    let channels = per_channel
        .into_iter()
        .enumerate()
        .filter(|(_, starts)| !starts.is_empty())
        .map(|(c, mut starts)| {
            starts.sort_unstable();
            starts.dedup();
            let mut intervals: Vec<Interval> = Vec::new();
            for &s in &starts {
                match intervals.last_mut() {
                    Some(last) if s <= last.end => last.end = last.end.max(s + len),
                    _ => intervals.push(Interval {
                        start: s,
                        end: s + len,
                    }),
                }
            }
            ChannelHighlight {
                channel: Mnemonic::ALL[c],
                intervals,
                tau_starts: starts,
            }
        })
        .collect();
    Ok(HighlightSet {
        tau_len: len,
        channels,
        features,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Explanation {
    pub probability: f64,
    pub highlights: HighlightSet,
    pub attribution: Attribution,
}

/// Explanation of an already featurized segment.
pub fn explain_features(
    model: &GbmModel,
    fv: &FeatureVector,
    idx: &SegmentIndex,
    cfg: &ExplainConfig,
) -> Result<Explanation> {
    let attribution = tree_shap(model, fv)?;
    let probability = model.predict_proba(fv)?;
    let highlights = match select_top(&attribution, cfg)? {
        Some(selected) => highlight(&selected, idx)?,
        None => HighlightSet {
            tau_len: idx.tau_len(),
            ..HighlightSet::default()
        },
    };
    Ok(Explanation {
        probability,
        highlights,
        attribution,
    })
}

pub fn explain(
    model: &GbmModel,
    segment: &Segment<'_>,
    codebooks: &Codebooks,
    cfg: &ExplainConfig,
) -> Result<Explanation> {
    let (fv, idx) = featurize(segment, codebooks)?;
    explain_features(model, &fv, &idx, cfg)
}
