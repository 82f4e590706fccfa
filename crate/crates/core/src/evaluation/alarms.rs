use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::telemetry::{AccidentEvent, AccidentType, STEP_SECONDS};

const SECONDS_PER_DAY: f64 = 86_400.0;

/// Alarm probabilities of one accident-type model over one well, one value
/// per evaluated moment (end time of the trailing one-hour window).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbSeries {
    pub well_id: String,
    pub kind: AccidentType,
    pub times: Vec<i64>,
    pub probs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlarmStats {
    pub kind: AccidentType,
    pub threshold: f64,
    /// Accidents with at least one evaluated moment inside their region.
    pub evaluable: usize,
    pub covered: usize,
    pub coverage: f64,
    /// Distinct out-of-region minutes containing an alarm.
    pub false_alarms: usize,
    pub evaluated_days: f64,
    pub false_alarms_per_day: f64,
}

/// Coverage target per type at which thresholds are set.
pub fn default_coverage_target(kind: AccidentType) -> f64 {
    match kind {
        AccidentType::KickFlow => 0.70,
        AccidentType::Stuck | AccidentType::Washout => 0.60,
        AccidentType::Mudloss => 0.55,
    }
}

fn relevant<'a>(
    series: &'a [ProbSeries],
    events: &'a [AccidentEvent],
    kind: AccidentType,
) -> impl Iterator<Item = (&'a AccidentEvent, Option<&'a ProbSeries>)> {
    events.iter().filter(move |e| e.kind == kind).map(move |e| {
        (
            e,
            series.iter().find(|s| s.kind == kind && s.well_id == e.well_id),
        )
    })
}

/// Highest probability inside the event's region, if any moment falls there.
fn region_max(event: &AccidentEvent, s: &ProbSeries) -> Option<f64> {
    s.times
        .iter()
        .zip(&s.probs)
        .filter(|(&t, _)| event.region_contains(t))
        .map(|(_, &p)| p)
        .reduce(f64::max)
}

/// Covered accidents and false alarms of `kind` at `threshold`.
///
/// An accident is covered when any moment inside its region reaches the
/// threshold. Alarm moments outside every region of the same type count as
/// false alarms, at most once per minute.
pub fn alarm_eval(
    series: &[ProbSeries],
    events: &[AccidentEvent],
    kind: AccidentType,
    threshold: f64,
) -> AlarmStats {
    let mut evaluable = 0;
    let mut covered = 0;
    for (e, s) in relevant(series, events, kind) {
        if let Some(max) = s.and_then(|s| region_max(e, s)) {
            evaluable += 1;
            if max >= threshold {
                covered += 1;
            }
        }
    }
    let mut false_alarms = 0;
    let mut moments = 0usize;
    for s in series.iter().filter(|s| s.kind == kind) {
        moments += s.times.len();
        let regions: Vec<&AccidentEvent> = events
            .iter()
            .filter(|e| e.kind == kind && e.well_id == s.well_id)
            .collect();
        let minutes: BTreeSet<i64> = s
            .times
            .iter()
            .zip(&s.probs)
            .filter(|(&t, &p)| p >= threshold && !regions.iter().any(|e| e.region_contains(t)))
            .map(|(&t, _)| t.div_euclid(60))
            .collect();
        false_alarms += minutes.len();
    }
    let evaluated_days = moments as f64 * STEP_SECONDS as f64 / SECONDS_PER_DAY;
    AlarmStats {
        kind,
        threshold,
        evaluable,
        covered,
        coverage: if evaluable > 0 {
            covered as f64 / evaluable as f64
        } else {
            0.0
        },
        false_alarms,
        evaluated_days,
        false_alarms_per_day: if evaluated_days > 0.0 {
            false_alarms as f64 / evaluated_days
        } else {
            0.0
        },
    }
}

/// The highest threshold whose coverage reaches `target`: the
/// `ceil(target * N)`-th largest in-region maximum.
pub fn choose_threshold(
    series: &[ProbSeries],
    events: &[AccidentEvent],
    kind: AccidentType,
    target: f64,
) -> Result<f64> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::Config(format!("coverage target {target} outside (0, 1]")));
    }
    let mut maxima: Vec<f64> = relevant(series, events, kind)
        .filter_map(|(e, s)| s.and_then(|s| region_max(e, s)))
        .collect();
    if maxima.is_empty() {
        return Err(Error::Evaluation(format!(
            "no evaluable {kind} accidents to set a threshold on"
        )));
    }
    maxima.sort_by(|a, b| b.total_cmp(a));
    let need = ((target * maxima.len() as f64).ceil() as usize).clamp(1, maxima.len());
    Ok(maxima[need - 1])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEntry {
    pub kind: AccidentType,
    pub target_coverage: f64,
    pub stats: AlarmStats,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub entries: Vec<ThresholdEntry>,
}

impl ThresholdTable {
    pub fn threshold(&self, kind: AccidentType) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.kind == kind)
            .map(|e| e.stats.threshold)
    }

    /// Sets each type's threshold at its default coverage target.
    pub fn fit(series: &[ProbSeries], events: &[AccidentEvent]) -> Result<Self> {
        let mut entries = Vec::new();
        for kind in AccidentType::ALL {
            if !events.iter().any(|e| e.kind == kind) {
                continue;
            }
            let target = default_coverage_target(kind);
            let threshold = choose_threshold(series, events, kind, target)?;
            entries.push(ThresholdEntry {
                kind,
                target_coverage: target,
                stats: alarm_eval(series, events, kind, threshold),
            });
        }
        Ok(ThresholdTable { entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn event(kind: AccidentType, start: i64, end: i64) -> AccidentEvent {
        AccidentEvent {
            well_id: "w".into(),
            kind,
            event_time: end,
            region_start: start,
            region_end: end,
        }
    }

    fn series(kind: AccidentType, n: usize, alarms: &[usize]) -> ProbSeries {
        let times: Vec<i64> = (0..n as i64).map(|i| i * STEP_SECONDS).collect();
        let mut probs = vec![0.1; n];
        for &a in alarms {
            probs[a] = 0.9;
        }
        ProbSeries {
            well_id: "w".into(),
            kind,
            times,
            probs,
        }
    }

    #[test]
    fn covered_inside_region() {
        let ev = [event(AccidentType::Stuck, 100, 200)];
        let st = alarm_eval(&[series(AccidentType::Stuck, 100, &[15])], &ev, AccidentType::Stuck, 0.5);
        assert_eq!((st.covered, st.false_alarms), (1, 0));
    }

    #[test]
    fn wrong_type_is_false_alarm() {
        let ev = [event(AccidentType::Mudloss, 100, 200)];
        let s = [series(AccidentType::Stuck, 100, &[15])];
        let st = alarm_eval(&s, &ev, AccidentType::Stuck, 0.5);
        assert_eq!((st.covered, st.false_alarms), (0, 1));
    }

    #[test]
    fn false_alarm_rate_per_day() {
        // 1.5 days of 10-s moments, three alarms in distinct minutes.
        let n = (1.5 * SECONDS_PER_DAY) as usize / STEP_SECONDS as usize;
        let s = [series(AccidentType::KickFlow, n, &[10, 500, 9000])];
        let st = alarm_eval(&s, &[], AccidentType::KickFlow, 0.5);
        assert!((st.evaluated_days - 1.5).abs() < 1e-12);
        assert!((st.false_alarms_per_day - 2.0).abs() < 1e-12);
    }

    #[test]
    fn alarms_debounced_per_minute() {
        let s = [series(AccidentType::KickFlow, 100, &[6, 7, 8, 11, 12])];
        assert_eq!(alarm_eval(&s, &[], AccidentType::KickFlow, 0.5).false_alarms, 2);
    }

    #[test]
    fn threshold_hits_target() {
        let mut events = Vec::new();
        let mut probs = Vec::new();
        let mut times = Vec::new();
        for (i, p) in [0.9, 0.8, 0.7, 0.6, 0.5].iter().enumerate() {
            let t = 1000 * i as i64;
            events.push(event(AccidentType::Stuck, t, t + 10));
            times.push(t);
            probs.push(*p);
        }
        let s = [ProbSeries {
            well_id: "w".into(),
            kind: AccidentType::Stuck,
            times,
            probs,
        }];
        let thr = choose_threshold(&s, &events, AccidentType::Stuck, 0.6).unwrap();
        assert_eq!(thr, 0.7);
        assert_eq!(alarm_eval(&s, &events, AccidentType::Stuck, thr).covered, 3);
    }
}
