//! Do highlighted tau-segments stay in the same region of tau space across
//! neighboring alarm moments? Exact t-SNE views plus a centroid-drift score
//! against size-matched random tau-segment sets.

mod tsne;

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use tsne::{joint_probabilities, kl_divergence, kl_gradient, silhouette, tsne, Embedding2D, TsneConfig};

use crate::bag_of_features::{Codebooks, TauSegment};
use crate::error::{Error, Result};
use crate::shap::HighlightSet;
use crate::telemetry::{Mnemonic, ReferenceInterval, Segment, TelemetryLog, SEGMENT_LEN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Highlighted,
    Codebook,
    Expert,
}

impl Group {
    fn color(self) -> &'static str {
        match self {
            Group::Highlighted => "#ff4fa3",
            Group::Codebook => "#7b2d9e",
            Group::Expert => "#f2c200",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointLabel {
    pub group: Group,
    /// Alarm moment that produced the point, for highlighted points.
    pub moment: Option<usize>,
}

/// Squared Euclidean distances, row-major, with optional point labels.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
    pub labels: Vec<PointLabel>,
}

impl DistanceMatrix {
    pub fn from_points(points: &[Vec<f64>], labels: Vec<PointLabel>) -> Result<Self> {
        let n = points.len();
        if !labels.is_empty() && labels.len() != n {
            return Err(Error::Usage(format!("{} labels for {n} points", labels.len())));
        }
        if let Some(p) = points.iter().find(|p| p.len() != points[0].len()) {
            return Err(Error::Usage(format!(
                "points of length {} and {} cannot be compared",
                points[0].len(),
                p.len()
            )));
        }
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let d: f64 = points[i]
                    .iter()
                    .zip(&points[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                values[i * n + j] = d;
                values[j * n + i] = d;
            }
        }
        Ok(DistanceMatrix { n, values, labels })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Distances between tau-segments of one channel after the codebook's
/// z-normalization.
pub fn pairwise_distances(taus: &[TauSegment], codebooks: &Codebooks) -> Result<DistanceMatrix> {
    let Some(first) = taus.first() else {
        return DistanceMatrix::from_points(&[], Vec::new());
    };
    if let Some(t) = taus.iter().find(|t| t.channel != first.channel) {
        return Err(Error::Usage(format!(
            "tau-segments of {} and {} mixed in one distance matrix",
            first.channel, t.channel
        )));
    }
    let book = codebooks.get(first.channel);
    let points: Vec<Vec<f64>> = taus.iter().map(|t| book.normalize(&t.values)).collect();
    DistanceMatrix::from_points(&points, Vec::new())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsistencyConfig {
    pub tsne: TsneConfig,
    pub null_draws: usize,
    pub max_codebook_points: usize,
    pub seed: u64,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        ConsistencyConfig {
            tsne: TsneConfig::default(),
            null_draws: 20,
            max_codebook_points: 1500,
            seed: 0,
        }
    }
}

/// One explained alarm moment: the segment ending at log index `end`.
#[derive(Clone, Debug, PartialEq)]
pub struct Moment {
    pub end: usize,
    pub highlights: HighlightSet,
}

/// Consecutive alarm moments of one accident.
#[derive(Clone, Debug)]
pub struct Case<'a> {
    pub log: &'a TelemetryLog,
    pub codebooks: &'a Codebooks,
    pub moments: Vec<Moment>,
}

impl Case<'_> {
    fn tau(&self, m: Mnemonic, end: usize, start: usize) -> Vec<f64> {
        let len = self.codebooks.config().tau_len;
        let at = end - SEGMENT_LEN + start;
        self.codebooks.get(m).normalize(&self.log.channel(m)[at..at + len])
    }

    fn centroid(&self, m: Mnemonic, end: usize, starts: &[usize]) -> Vec<f64> {
        let mut c = vec![0.0; self.codebooks.config().tau_len];
        for &s in starts {
            for (a, v) in c.iter_mut().zip(self.tau(m, end, s)) {
                *a += v;
            }
        }
        let k = starts.len() as f64;
        c.iter_mut().for_each(|a| *a /= k);
        c
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelDrift {
    pub channel: Mnemonic,
    /// Neighboring-moment pairs where the channel is highlighted twice.
    pub pairs: usize,
    pub drift: f64,
    pub null_mean: f64,
    pub ratio: f64,
}

/// Mean centroid displacement of highlighted tau-segments between
/// neighboring moments, and the same for random sets of equal size drawn
/// from the same windows. `p_value` is the one-sided Monte-Carlo p-value of
/// the observed drift being this small.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyScore {
    pub channels: Vec<ChannelDrift>,
    pub pairs: usize,
    pub drift: f64,
    pub null: Vec<f64>,
    pub null_mean: f64,
    pub null_std: f64,
    pub ratio: f64,
    pub p_value: f64,
}

struct Term {
    case: usize,
    channel: Mnemonic,
    a: usize,
    b: usize,
}

pub fn consistency_score(cases: &[Case<'_>], cfg: &ConsistencyConfig) -> Result<ConsistencyScore> {
    let mut terms = Vec::new();
    for (ci, case) in cases.iter().enumerate() {
        for w in 0..case.moments.len().saturating_sub(1) {
            for ch in &case.moments[w].highlights.channels {
                if case.moments[w + 1].highlights.channel(ch.channel).is_some() {
                    terms.push(Term {
                        case: ci,
                        channel: ch.channel,
                        a: w,
                        b: w + 1,
                    });
                }
            }
        }
    }
    if terms.is_empty() {
        return Err(Error::Evaluation(
            "no channel is highlighted at two neighboring moments".into(),
        ));
    }
    let starts = |case: &Case, w: usize, m: Mnemonic| -> Vec<usize> {
        case.moments[w].highlights.channel(m).map(|c| c.tau_starts.clone()).unwrap_or_default()
    };
    let observed: Vec<f64> = terms
        .iter()
        .map(|t| {
            let case = &cases[t.case];
            let (ea, eb) = (case.moments[t.a].end, case.moments[t.b].end);
            euclid(
                &case.centroid(t.channel, ea, &starts(case, t.a, t.channel)),
                &case.centroid(t.channel, eb, &starts(case, t.b, t.channel)),
            )
        })
        .collect();

    let mut null_terms = vec![vec![0.0; terms.len()]; cfg.null_draws];
    for (draw, out) in null_terms.iter_mut().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(draw as u64 + 1);
        for (t, slot) in terms.iter().zip(out.iter_mut()) {
            let case = &cases[t.case];
            let bof = case.codebooks.config();
            let count = bof.taus_per_channel();
            let mut pick = |k: usize| -> Vec<usize> {
                let mut v: Vec<usize> = index::sample(&mut rng, count, k.min(count))
                    .into_iter()
                    .map(|j| j * bof.stride)
                    .collect();
                v.sort_unstable();
                v
            };
            let sa = pick(starts(case, t.a, t.channel).len());
            let sb = pick(starts(case, t.b, t.channel).len());
            *slot = euclid(
                &case.centroid(t.channel, case.moments[t.a].end, &sa),
                &case.centroid(t.channel, case.moments[t.b].end, &sb),
            );
        }
    }

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let channels_used: BTreeSet<Mnemonic> = terms.iter().map(|t| t.channel).collect();
    let channels = channels_used
        .into_iter()
        .map(|m| {
            let ids: Vec<usize> = (0..terms.len()).filter(|&i| terms[i].channel == m).collect();
            let drift = ids.iter().map(|&i| observed[i]).sum::<f64>() / ids.len() as f64;
            let null_mean = if cfg.null_draws == 0 {
                f64::NAN
            } else {
                null_terms
                    .iter()
                    .map(|d| ids.iter().map(|&i| d[i]).sum::<f64>() / ids.len() as f64)
                    .sum::<f64>()
                    / cfg.null_draws as f64
            };
            ChannelDrift {
                channel: m,
                pairs: ids.len(),
                drift,
                null_mean,
                ratio: drift / null_mean,
            }
        })
        .collect();
    let drift = mean(&observed);
    let null: Vec<f64> = null_terms.iter().map(|d| mean(d)).collect();
    let (null_mean, null_std) = if null.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let m = mean(&null);
        (m, (null.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / null.len() as f64).sqrt())
    };
    let below = null.iter().filter(|&&x| x <= drift).count();
    Ok(ConsistencyScore {
        channels,
        pairs: terms.len(),
        drift,
        ratio: drift / null_mean,
        p_value: (1 + below) as f64 / (null.len() + 1) as f64,
        null,
        null_mean,
        null_std,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelEmbedding {
    pub channel: Mnemonic,
    pub labels: Vec<PointLabel>,
    pub embedding: Embedding2D,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyReport {
    pub embeddings: Vec<ChannelEmbedding>,
    pub score: Option<ConsistencyScore>,
    pub svg: String,
}

/// Normalized tau-segments of a codebook corpus, grouped by channel, in
/// the layout `consistency_report` takes as its codebook sample.
pub fn corpus_taus(corpus: &[Segment<'_>], codebooks: &Codebooks) -> Vec<Vec<Vec<f64>>> {
    let bof = codebooks.config();
    Mnemonic::ALL
        .iter()
        .map(|&m| {
            let book = codebooks.get(m);
            let mut out = Vec::new();
            for seg in corpus {
                let values = seg.channel(m);
                let mut s = 0;
                while s + bof.tau_len <= values.len() {
                    out.push(book.normalize(&values[s..s + bof.tau_len]));
                    s += bof.stride;
                }
            }
            out
        })
        .collect()
}

/// t-SNE view of each highlighted channel of one accident: highlighted
/// tau-segments of all moments, a sample of codebook-training
/// tau-segments (`codebook_sample[channel]`, already normalized) and the
/// tau-segments lying inside the channel's reference intervals.
pub fn consistency_report(
    case: &Case<'_>,
    references: &[ReferenceInterval],
    codebook_sample: &[Vec<Vec<f64>>],
    cfg: &ConsistencyConfig,
) -> Result<ConsistencyReport> {
    if case.moments.is_empty() {
        return Err(Error::Usage("a consistency report needs alarm moments".into()));
    }
    let bof = case.codebooks.config();
    let log = case.log;
    let mut embeddings = Vec::new();
    for m in Mnemonic::ALL {
        if !case.moments.iter().any(|mo| mo.highlights.channel(m).is_some()) {
            continue;
        }
        let mut points = Vec::new();
        let mut labels = Vec::new();
        let mut seen = BTreeSet::new();
        for (w, mo) in case.moments.iter().enumerate() {
            if let Some(ch) = mo.highlights.channel(m) {
                for &s in &ch.tau_starts {
                    if seen.insert(mo.end - SEGMENT_LEN + s) {
                        points.push(case.tau(m, mo.end, s));
                        labels.push(PointLabel {
                            group: Group::Highlighted,
                            moment: Some(w),
                        });
                    }
                }
            }
        }
        let sample = codebook_sample.get(m.index()).map(Vec::as_slice).unwrap_or(&[]);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(m.index() as u64 + 1);
        let mut picked: Vec<usize> =
            index::sample(&mut rng, sample.len(), sample.len().min(cfg.max_codebook_points)).into_vec();
        picked.sort_unstable();
        for i in picked {
            points.push(sample[i].clone());
            labels.push(PointLabel {
                group: Group::Codebook,
                moment: None,
            });
        }
        // Expert tau-segments on the stride grid of the last moment.
        let last = case.moments.last().unwrap().end;
        let phase = (last - SEGMENT_LEN) % bof.stride;
        for r in references.iter().filter(|r| r.channel == m && r.well_id == log.well_id()) {
            let mut s = phase;
            while s + bof.tau_len <= log.len() {
                let (t0, t1) = (log.time_at(s), log.time_at(s) + bof.tau_len as i64 * log.step());
                if t0 >= r.start && t1 <= r.end {
                    let len = bof.tau_len;
                    points.push(case.codebooks.get(m).normalize(&log.channel(m)[s..s + len]));
                    labels.push(PointLabel {
                        group: Group::Expert,
                        moment: None,
                    });
                }
                s += bof.stride;
            }
        }
        let dist = DistanceMatrix::from_points(&points, labels.clone())?;
        let mut tcfg = cfg.tsne.clone();
        // Small channels get the largest perplexity they can support.
        tcfg.perplexity = tcfg.perplexity.min((dist.len().saturating_sub(1)) as f64 / 3.0);
        if tcfg.perplexity < 2.0 || dist.values().iter().all(|&d| d == 0.0) {
            continue;
        }
        let embedding = tsne(&dist, &tcfg)?;
        embeddings.push(ChannelEmbedding {
            channel: m,
            labels,
            embedding,
        });
    }
    let score = if case.moments.len() >= 2 {
        consistency_score(std::slice::from_ref(case), cfg).ok()
    } else {
        None
    };
    let svg = render_svg(&embeddings);
    Ok(ConsistencyReport {
        embeddings,
        score,
        svg,
    })
}

/// Scatter panels, one per channel, colored by group.
pub fn render_svg(embeddings: &[ChannelEmbedding]) -> String {
    const PANEL: f64 = 260.0;
    const PAD: f64 = 16.0;
    const HEAD: f64 = 22.0;
    let cols = embeddings.len().clamp(1, 3);
    let rows = embeddings.len().div_ceil(cols).max(1);
    let width = cols as f64 * (PANEL + PAD) + PAD;
    let height = rows as f64 * (PANEL + HEAD + PAD) + PAD + 24.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let mut x = PAD;
    for g in [Group::Highlighted, Group::Codebook, Group::Expert] {
        let name = format!("{g:?}").to_lowercase();
        let _ = writeln!(
            s,
            r#"<circle cx="{}" cy="14" r="4" fill="{}"/><text x="{}" y="18">{name}</text>"#,
            x + 4.0,
            g.color(),
            x + 12.0
        );
        x += 110.0;
    }
    for (k, ce) in embeddings.iter().enumerate() {
        let ox = PAD + (k % cols) as f64 * (PANEL + PAD);
        let oy = 24.0 + PAD + (k / cols) as f64 * (PANEL + HEAD + PAD);
        let _ = writeln!(
            s,
            r#"<g class="channel" data-channel="{}"><text x="{ox}" y="{}" font-weight="bold">{}</text>"#,
            ce.channel,
            oy + 14.0,
            ce.channel
        );
        let _ = writeln!(
            s,
            r##"<rect x="{ox}" y="{}" width="{PANEL}" height="{PANEL}" fill="none" stroke="#999999"/>"##,
            oy + HEAD
        );
        let pts = &ce.embedding.points;
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in pts {
            x0 = x0.min(p[0]);
            x1 = x1.max(p[0]);
            y0 = y0.min(p[1]);
            y1 = y1.max(p[1]);
        }
        let sx = (PANEL - 16.0) / (x1 - x0).max(1e-12);
        let sy = (PANEL - 16.0) / (y1 - y0).max(1e-12);
        // Highlighted points last so they stay visible.
        for g in [Group::Codebook, Group::Expert, Group::Highlighted] {
            for (p, l) in pts.iter().zip(&ce.labels) {
                if l.group != g {
                    continue;
                }
                let _ = writeln!(
                    s,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}" fill-opacity="0.8"/>"#,
                    ox + 8.0 + (p[0] - x0) * sx,
                    oy + HEAD + 8.0 + (p[1] - y0) * sy,
                    g.color()
                );
            }
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bag_of_features::{BofConfig, Codebook};
    use crate::shap::{highlight, ChannelHighlight};
    use crate::telemetry::N_CHANNELS;

    fn books(tau_len: usize) -> Codebooks {
        let cfg = BofConfig {
            tau_len,
            clusters: 2,
            ..BofConfig::default()
        };
        let b = Mnemonic::ALL
            .iter()
            .map(|&m| Codebook::new(m, 0.0, 1.0, vec![vec![0.0; tau_len], vec![1.0; tau_len]]).unwrap())
            .collect();
        Codebooks::new(cfg, 0, b).unwrap()
    }

    fn log(n: usize) -> TelemetryLog {
        let channels = (0..N_CHANNELS)
            .map(|c| (0..n).map(|i| ((i * (c + 3)) % 17) as f64).collect())
            .collect();
        TelemetryLog::from_channels("w", 0, 10, channels).unwrap()
    }

    fn hs(m: Mnemonic, starts: &[usize]) -> HighlightSet {
        HighlightSet {
            tau_len: 30,
            channels: vec![ChannelHighlight {
                channel: m,
                intervals: vec![],
                tau_starts: starts.to_vec(),
            }],
            features: vec![],
        }
    }

    #[test]
    fn distance_arithmetic() {
        let d = DistanceMatrix::from_points(&[vec![0.0, 0.0], vec![3.0, 4.0], vec![0.0, 0.0]], vec![]).unwrap();
        assert_eq!(d.get(0, 1), 25.0);
        assert_eq!(d.get(0, 2), 0.0);
        for i in 0..3 {
            assert_eq!(d.get(i, i), 0.0);
            for j in 0..3 {
                assert_eq!(d.get(i, j), d.get(j, i));
            }
        }
    }

    #[test]
    fn mixed_channels_rejected() {
        let t = |channel| TauSegment {
            channel,
            start: 0,
            values: vec![0.0; 30],
        };
        assert!(matches!(
            pairwise_distances(&[t(Mnemonic::Hkla), t(Mnemonic::Tqa)], &books(30)),
            Err(Error::Usage(_))
        ));
        assert_eq!(pairwise_distances(&[t(Mnemonic::Hkla), t(Mnemonic::Hkla)], &books(30)).unwrap().get(0, 1), 0.0);
    }

    #[test]
    fn duplicated_moment_has_zero_drift() {
        let (l, b) = (log(800), books(30));
        let mo = Moment {
            end: 500,
            highlights: hs(Mnemonic::Tqa, &[0, 60, 120]),
        };
        let case = Case {
            log: &l,
            codebooks: &b,
            moments: vec![mo.clone(), mo],
        };
        let s = consistency_score(&[case], &ConsistencyConfig::default()).unwrap();
        assert_eq!(s.drift, 0.0);
        assert_eq!(s.null.len(), 20);
        assert!(s.null.iter().all(|&x| x >= 0.0));
        assert_eq!(s.p_value, 1.0 / 21.0);
    }

    #[test]
    fn random_highlights_look_like_the_null() {
        let (l, b) = (log(2000), books(30));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let moments: Vec<Moment> = (0..30)
            .map(|w| {
                let mut starts: Vec<usize> = index::sample(&mut rng, 56, 12).into_iter().map(|j| j * 6).collect();
                starts.sort_unstable();
                Moment {
                    end: 400 + 6 * w,
                    highlights: hs(Mnemonic::Hkla, &starts),
                }
            })
            .collect();
        let case = Case {
            log: &l,
            codebooks: &b,
            moments,
        };
        let s = consistency_score(&[case], &ConsistencyConfig::default()).unwrap();
        assert!((s.ratio - 1.0).abs() < 4.0 * s.null_std / s.null_mean + 0.05, "{s:?}");
    }

    #[test]
    fn report_skips_unhighlighted_channels() {
        let (l, b) = (log(1200), books(30));
        let idx = crate::bag_of_features::SegmentIndex::new(30, 6, {
            let mut e = vec![Vec::new(); crate::bag_of_features::N_FEATURES];
            e[0] = (0..40u16).map(|j| j * 6).collect();
            e
        })
        .unwrap();
        let h = highlight(&[0], &idx).unwrap();
        let case = Case {
            log: &l,
            codebooks: &b,
            moments: vec![
                Moment { end: 600, highlights: h.clone() },
                Moment { end: 606, highlights: h },
            ],
        };
        let cfg = ConsistencyConfig {
            tsne: TsneConfig {
                perplexity: 5.0,
                iterations: 200,
                ..TsneConfig::default()
            },
            ..ConsistencyConfig::default()
        };
        let r = consistency_report(&case, &[], &[], &cfg).unwrap();
        assert_eq!(r.embeddings.len(), 1);
        assert_eq!(r.embeddings[0].channel, Mnemonic::Hkla);
        assert!(r.svg.contains(r#"data-channel="HKLA""#));
        assert!(!r.svg.contains(r#"data-channel="TQA""#));
    }
}
