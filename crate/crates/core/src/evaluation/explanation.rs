use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bag_of_features::BofConfig;
use crate::error::{Error, Result};
use crate::shap::HighlightSet;
use crate::telemetry::{AccidentEvent, AccidentType, Mnemonic, ReferenceInterval};

/// Channels an engineer accepts as relevant for each accident type.
pub fn extended_channels(kind: AccidentType) -> &'static [Mnemonic] {
    use Mnemonic::*;
    match kind {
        AccidentType::KickFlow => &[Gasa, Tvt, Mfia, Mfoa, Dbtm, Dmea],
        AccidentType::Mudloss => &[Tvt, Sppa, Mfia, Mfoa, Dbtm, Dmea],
        AccidentType::Stuck => &[Hkla, Bpos, Wob, Tqa, Rpma, Dbtm, Dmea],
        AccidentType::Washout => &[Tvt, Sppa, Mfia, Mfoa, Tqa, Dbtm, Dmea],
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrMode {
    /// A highlight counts only against references on its own channel.
    Strict,
    /// A highlight on any accepted channel counts against the accident's
    /// reference time span.
    Extended,
}

impl PrMode {
    pub const ALL: [PrMode; 2] = [PrMode::Strict, PrMode::Extended];

    pub fn as_str(self) -> &'static str {
        match self {
            PrMode::Strict => "strict",
            PrMode::Extended => "extended",
        }
    }
}

/// Raw counts, summed before any ratio is taken.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    /// Reference intervals, and those touched by at least one true-positive
    /// highlight.
    pub refs_total: u64,
    pub refs_hit: u64,
}

impl PrCounts {
    pub fn add(&mut self, other: &PrCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.refs_total += other.refs_total;
        self.refs_hit += other.refs_hit;
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// Share of reference-overlapping tau-segments that were highlighted.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Share of reference intervals touched by a correct highlight.
    pub fn reference_recall(&self) -> f64 {
        ratio(self.refs_hit, self.refs_total)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Scores the highlights of one alarm moment against the references of one
/// accident. `segment_start` is the time of the first sample of the
/// explained hour.
pub fn explanation_counts(
    highlights: &HighlightSet,
    segment_start: i64,
    step: i64,
    bof: &BofConfig,
    event: &AccidentEvent,
    references: &[ReferenceInterval],
    mode: PrMode,
) -> Result<PrCounts> {
    let refs: Vec<&ReferenceInterval> = references.iter().filter(|r| r.belongs_to(event)).collect();
    if refs.is_empty() {
        return Err(Error::Evaluation(format!(
            "no reference intervals for the {} accident at {} in well {}",
            event.kind, event.event_time, event.well_id
        )));
    }
    let span = |s: usize| {
        (
            segment_start + s as i64 * step,
            segment_start + (s + bof.tau_len) as i64 * step,
        )
    };
    let hits = |(a, b): (i64, i64), r: &ReferenceInterval| a < r.end && b > r.start;

    let eligible: Vec<Mnemonic> = Mnemonic::ALL
        .iter()
        .copied()
        .filter(|m| match mode {
            PrMode::Strict => refs.iter().any(|r| r.channel == *m),
            PrMode::Extended => {
                extended_channels(event.kind).contains(m) || refs.iter().any(|r| r.channel == *m)
            }
        })
        .collect();
    let against = |m: Mnemonic| -> Vec<&ReferenceInterval> {
        match mode {
            PrMode::Strict => refs.iter().copied().filter(|r| r.channel == m).collect(),
            PrMode::Extended if eligible.contains(&m) => refs.clone(),
            PrMode::Extended => Vec::new(),
        }
    };

    let mut counts = PrCounts {
        refs_total: refs.len() as u64,
        ..PrCounts::default()
    };
    let mut ref_hit = vec![false; refs.len()];
    for ch in &highlights.channels {
        let targets = against(ch.channel);
        for &s in &ch.tau_starts {
            let sp = span(s);
            let mut tp = false;
            for r in &targets {
                if hits(sp, r) {
                    tp = true;
                    let k = refs.iter().position(|x| std::ptr::eq(*x, *r)).unwrap();
                    ref_hit[k] = true;
                }
            }
            if tp {
                counts.tp += 1;
            } else {
                counts.fp += 1;
            }
        }
    }
    let count = bof.taus_per_channel();
    for &m in &eligible {
        let targets = against(m);
        let highlighted = highlights.channel(m).map(|c| c.tau_starts.as_slice()).unwrap_or(&[]);
        for j in 0..count {
            let s = j * bof.stride;
            if highlighted.binary_search(&s).is_err() && targets.iter().any(|r| hits(span(s), r)) {
                counts.fn_ += 1;
            }
        }
    }
    counts.refs_hit = ref_hit.iter().filter(|&&h| h).count() as u64;
    Ok(counts)
}

/// Per-type counts plus their micro-average.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PrResult {
    pub per_type: BTreeMap<AccidentType, PrCounts>,
    pub micro: PrCounts,
}

impl PrResult {
    pub fn add(&mut self, kind: AccidentType, counts: &PrCounts) {
        self.per_type.entry(kind).or_default().add(counts);
        self.micro.add(counts);
    }
}
