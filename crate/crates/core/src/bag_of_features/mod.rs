//! Bag-of-features representation of a one-hour segment.
//!
//! Each channel is cut into overlapping tau-segments (one-minute stride),
//! each tau-segment is quantized against that channel's codebook, and the
//! per-channel cluster histograms are stacked channel-major into a
//! 2400-long count vector. [`SegmentIndex`] keeps the inverse map from a
//! feature back to the tau-segments counted in it.

mod codebook;
pub mod kmeans;

use std::ops::Index;

use serde::{Deserialize, Serialize};

pub use codebook::{train_codebooks, Codebook, Codebooks, CODEBOOK_FORMAT_VERSION};

use crate::error::{Error, Result};
use crate::telemetry::{Mnemonic, Segment, TelemetryLog, N_CHANNELS, SEGMENT_LEN};

pub const N_CLUSTERS: usize = 200;
pub const N_FEATURES: usize = N_CHANNELS * N_CLUSTERS;
/// One minute on the 10-second grid.
pub const TAU_STRIDE: usize = 6;
pub const DEFAULT_TAU_LEN: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BofConfig {
    pub tau_len: usize,
    pub stride: usize,
    pub clusters: usize,
    pub max_iter: usize,
    /// Upper bound on tau-segments per channel fed to k-means; `None` uses
    /// every tau-segment in the corpus.
    pub max_corpus_per_channel: Option<usize>,
}

impl Default for BofConfig {
    fn default() -> Self {
        BofConfig {
            tau_len: DEFAULT_TAU_LEN,
            stride: TAU_STRIDE,
            clusters: N_CLUSTERS,
            max_iter: 100,
            max_corpus_per_channel: None,
        }
    }
}

impl BofConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau_len == 0 || self.tau_len > SEGMENT_LEN {
            return Err(Error::Config(format!(
                "tau length {} must lie in 1..={SEGMENT_LEN}",
                self.tau_len
            )));
        }
        if self.stride == 0 {
            return Err(Error::Config("tau stride must be positive".into()));
        }
        // Each channel owns a fixed block of N_CLUSTERS features.
        if self.clusters == 0 || self.clusters > N_CLUSTERS {
            return Err(Error::Config(format!(
                "cluster count {} must lie in 1..={N_CLUSTERS}",
                self.clusters
            )));
        }
        Ok(())
    }

    /// tau-segments per channel in one segment.
    pub fn taus_per_channel(&self) -> usize {
        taus_per_channel(self.tau_len, self.stride)
    }
}

pub fn taus_per_channel(tau_len: usize, stride: usize) -> usize {
    (SEGMENT_LEN - tau_len) / stride + 1
}

/// A short window of one channel inside a segment.
#[derive(Clone, Debug, PartialEq)]
pub struct TauSegment {
    pub channel: Mnemonic,
    /// Offset inside the one-hour segment.
    pub start: usize,
    pub values: Vec<f64>,
}

impl TauSegment {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Sliding-window tau-segments for every channel, ordered by start.
pub fn extract_tau(
    segment: &Segment<'_>,
    tau_len: usize,
    stride: usize,
) -> Result<Vec<Vec<TauSegment>>> {
    if tau_len == 0 || tau_len > SEGMENT_LEN {
        return Err(Error::Config(format!(
            "tau length {tau_len} must lie in 1..={SEGMENT_LEN}"
        )));
    }
    if stride == 0 {
        return Err(Error::Config("tau stride must be positive".into()));
    }
    let count = taus_per_channel(tau_len, stride);
    Ok(Mnemonic::ALL
        .iter()
        .map(|&m| {
            let values = segment.channel(m);
            (0..count)
                .map(|j| {
                    let start = j * stride;
                    TauSegment {
                        channel: m,
                        start,
                        values: values[start..start + tau_len].to_vec(),
                    }
                })
                .collect()
        })
        .collect())
}

/// Channel-major cluster-count histogram: feature `c * 200 + k` counts the
/// tau-segments of channel `c` assigned to cluster `k`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureVector(Vec<u16>);

impl FeatureVector {
    pub fn zeros() -> Self {
        FeatureVector(vec![0; N_FEATURES])
    }

    pub fn from_counts(counts: Vec<u16>) -> Result<Self> {
        if counts.len() != N_FEATURES {
            return Err(Error::Usage(format!(
                "feature vector must have {N_FEATURES} entries, got {}",
                counts.len()
            )));
        }
        Ok(FeatureVector(counts))
    }

    pub fn counts(&self) -> &[u16] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn channel_block(&self, m: Mnemonic) -> &[u16] {
        &self.0[m.index() * N_CLUSTERS..(m.index() + 1) * N_CLUSTERS]
    }

    /// Non-zero entries as `(feature, count)`.
    pub fn nonzero(&self) -> impl Iterator<Item = (usize, u16)> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(j, &c)| (j, c))
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&c| f64::from(c)).collect()
    }
}

impl Index<usize> for FeatureVector {
    type Output = u16;

    fn index(&self, j: usize) -> &u16 {
        &self.0[j]
    }
}

pub fn feature_index(channel: Mnemonic, cluster: usize) -> usize {
    channel.index() * N_CLUSTERS + cluster
}

pub fn feature_channel(feature: usize) -> Mnemonic {
    Mnemonic::ALL[feature / N_CLUSTERS]
}

/// Inverse of the histogram: tau-segment starts counted in each feature.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentIndex {
    tau_len: usize,
    stride: usize,
    entries: Vec<Vec<u16>>,
}

impl SegmentIndex {
    pub fn new(tau_len: usize, stride: usize, entries: Vec<Vec<u16>>) -> Result<Self> {
        if tau_len == 0 || stride == 0 {
            return Err(Error::Config("tau length and stride must be positive".into()));
        }
        if let Some(&s) = entries.iter().flatten().find(|&&s| s as usize + tau_len > SEGMENT_LEN) {
            return Err(Error::Usage(format!("tau-segment start {s} runs past the segment")));
        }
        Ok(SegmentIndex {
            tau_len,
            stride,
            entries,
        })
    }

    pub fn tau_len(&self) -> usize {
        self.tau_len
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Starts (offsets in the segment) of tau-segments assigned to `feature`.
    pub fn starts(&self, feature: usize) -> &[u16] {
        &self.entries[feature]
    }

    pub fn n_features(&self) -> usize {
        self.entries.len()
    }
}

/// Histogram and inverse index of one segment.
pub fn featurize(
    segment: &Segment<'_>,
    codebooks: &Codebooks,
) -> Result<(FeatureVector, SegmentIndex)> {
    let cfg = codebooks.config();
    let taus = extract_tau(segment, cfg.tau_len, cfg.stride)?;
    let mut counts = vec![0u16; N_FEATURES];
    let mut entries = vec![Vec::new(); N_FEATURES];
    for channel_taus in &taus {
        for tau in channel_taus {
            let cluster = codebooks.get(tau.channel).assign(tau)?;
            let f = feature_index(tau.channel, cluster);
            counts[f] += 1;
            entries[f].push(tau.start as u16);
        }
    }
    Ok((
        FeatureVector(counts),
        SegmentIndex {
            tau_len: cfg.tau_len,
            stride: cfg.stride,
            entries,
        },
    ))
}

/// Cluster id of the tau-segment starting at every offset of a whole log.
///
/// Windows of the same log share tau-segments, so quantizing each start once
/// makes sliding featurization a table lookup. Results match [`featurize`]
/// exactly.
#[derive(Clone, Debug)]
pub struct LogAssignments {
    tau_len: usize,
    stride: usize,
    log_len: usize,
    clusters: Vec<Vec<u8>>,
}

impl LogAssignments {
    pub fn compute(log: &TelemetryLog, codebooks: &Codebooks) -> Self {
        let cfg = codebooks.config();
        let n_starts = (log.len() + 1).saturating_sub(cfg.tau_len);
        let mut buf = vec![0.0; cfg.tau_len + cfg.clusters.max(256)];
        let clusters = Mnemonic::ALL
            .iter()
            .map(|&m| {
                let book = codebooks.get(m);
                let values = log.channel(m);
                (0..n_starts)
                    .map(|s| book.assign_raw(&values[s..s + cfg.tau_len], &mut buf) as u8)
                    .collect()
            })
            .collect();
        LogAssignments {
            tau_len: cfg.tau_len,
            stride: cfg.stride,
            log_len: log.len(),
            clusters,
        }
    }

    pub fn cluster_at(&self, channel: Mnemonic, log_start: usize) -> usize {
        self.clusters[channel.index()][log_start] as usize
    }

    /// Histogram of the segment ending (exclusively) at `end`.
    pub fn feature_vector(&self, end: usize) -> Result<FeatureVector> {
        if end < SEGMENT_LEN || end > self.log_len {
            return Err(Error::Window(format!(
                "segment end {end} outside 360..={}",
                self.log_len
            )));
        }
        let base = end - SEGMENT_LEN;
        let count = taus_per_channel(self.tau_len, self.stride);
        let mut counts = vec![0u16; N_FEATURES];
        for (c, row) in self.clusters.iter().enumerate() {
            for j in 0..count {
                counts[c * N_CLUSTERS + row[base + j * self.stride] as usize] += 1;
            }
        }
        Ok(FeatureVector(counts))
    }

    /// Histogram plus inverse index of the segment ending at `end`; equal to
    /// [`featurize`] on the same window.
    pub fn featurize(&self, end: usize) -> Result<(FeatureVector, SegmentIndex)> {
        let fv = self.feature_vector(end)?;
        let base = end - SEGMENT_LEN;
        let count = taus_per_channel(self.tau_len, self.stride);
        let mut entries = vec![Vec::new(); N_FEATURES];
        for (c, row) in self.clusters.iter().enumerate() {
            for j in 0..count {
                let start = j * self.stride;
                entries[c * N_CLUSTERS + row[base + start] as usize].push(start as u16);
            }
        }
        Ok((
            fv,
            SegmentIndex {
                tau_len: self.tau_len,
                stride: self.stride,
                entries,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::TelemetryLog;

    fn ramp_log(n: usize) -> TelemetryLog {
        let channels = (0..N_CHANNELS)
            .map(|c| (0..n).map(|i| ((i * (c + 1)) % 97) as f64 + 0.01 * c as f64).collect())
            .collect();
        TelemetryLog::from_channels("w", 0, 10, channels).unwrap()
    }

    #[test]
    fn tau_counts() {
        let log = ramp_log(SEGMENT_LEN);
        let seg = Segment::at_index(&log, SEGMENT_LEN).unwrap();
        let taus = extract_tau(&seg, 360, 6).unwrap();
        assert!(taus.iter().all(|t| t.len() == 1));
        let taus = extract_tau(&seg, 30, 6).unwrap();
        assert!(taus.iter().all(|t| t.len() == 56));
        let t = &taus[0];
        assert!(t.windows(2).all(|w| w[1].start - w[0].start == 6));
        // Consecutive windows overlap by tau_len - stride samples.
        assert_eq!(t[0].values[6..], t[1].values[..24]);
        assert!(matches!(extract_tau(&seg, 361, 6), Err(Error::Config(_))));
    }

    #[test]
    fn feature_layout_is_channel_major() {
        assert_eq!(feature_index(Mnemonic::Hkla, 0), 0);
        assert_eq!(feature_index(Mnemonic::Wob, 3), 203);
        assert_eq!(feature_index(Mnemonic::Gasa, 199), 2399);
        assert_eq!(feature_channel(2399), Mnemonic::Gasa);
        assert_eq!(feature_channel(200), Mnemonic::Wob);
    }
}
