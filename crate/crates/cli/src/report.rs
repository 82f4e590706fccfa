//! SVG figures and the HTML report.

use std::fmt::Write as _;

use bofex::evaluation::experiment::{ExplainedCase, Metrics, EXPLAINERS};
use bofex::evaluation::PrMode;
use bofex::telemetry::{Mnemonic, ReferenceInterval, TelemetryLog, SEGMENT_LEN};

const WIDTH: f64 = 960.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 12.0;
const TOP: f64 = 34.0;
const ROW: f64 = 40.0;
const GAP: f64 = 8.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Per-channel telemetry over the explained window with highlighted
/// spans (yellow), reference spans (red) and the alarm probability track
/// in the bottom row.
pub fn case_figure(
    log: &TelemetryLog,
    case: &ExplainedCase,
    moment: usize,
    track: &[(i64, f64)],
    references: &[ReferenceInterval],
) -> String {
    let m = &case.moments[moment];
    let start_idx = m.end - SEGMENT_LEN;
    let t0 = log.time_at(start_idx);
    let t1 = log.time_at(m.end);
    let span = (t1 - t0).max(1) as f64;
    let plot_w = WIDTH - LEFT - RIGHT;
    let x_of = |t: i64| LEFT + ((t - t0) as f64 / span).clamp(0.0, 1.0) * plot_w;
    let rows = Mnemonic::ALL.len() + 1;
    let height = TOP + rows as f64 * (ROW + GAP) + 20.0;

    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = write!(
        s,
        r#"<text x="{LEFT}" y="18" font-size="13">{} {} at {} (p = {:.3}, threshold {:.3})</text>"#,
        escape(&case.event.well_id),
        case.event.kind,
        fmt_time(m.time),
        m.probability,
        case.threshold
    );

    let intervals = m.shap.time_intervals(t0, log.step());
    for (row, ch) in Mnemonic::ALL.iter().enumerate() {
        let y = TOP + row as f64 * (ROW + GAP);
        let _ = write!(
            s,
            r##"<rect x="{LEFT}" y="{y}" width="{plot_w}" height="{ROW}" fill="#fafafa" stroke="#ccc"/>"##
        );
        for r in references
            .iter()
            .filter(|r| r.channel == *ch && r.belongs_to(&case.event) && r.end > t0 && r.start < t1)
        {
            let (a, b) = (x_of(r.start), x_of(r.end));
            let _ = write!(
                s,
                r##"<rect class="reference" data-channel="{ch}" x="{a:.1}" y="{y}" width="{:.1}" height="{ROW}" fill="#e53935" fill-opacity="0.25"/>"##,
                (b - a).max(0.5)
            );
        }
        let spans: Vec<_> = intervals.iter().filter(|iv| iv.0 == *ch).collect();
        if !spans.is_empty() {
            let _ = write!(s, r#"<g class="highlights" data-channel="{ch}">"#);
            for &&(_, a, b) in &spans {
                let (xa, xb) = (x_of(a), x_of(b));
                let _ = write!(
                    s,
                    r##"<rect x="{xa:.1}" y="{y}" width="{:.1}" height="{ROW}" fill="#fdd835" fill-opacity="0.55"/>"##,
                    (xb - xa).max(0.5)
                );
            }
            s.push_str("</g>");
        }
        let values = &log.channel(*ch)[start_idx..m.end];
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = if hi > lo { hi - lo } else { 1.0 };
        let mut pts = String::new();
        for (i, v) in values.iter().enumerate() {
            let x = x_of(log.time_at(start_idx + i));
            let yy = y + ROW - 3.0 - (v - lo) / range * (ROW - 6.0);
            let _ = write!(pts, "{x:.1},{yy:.1} ");
        }
        let _ = write!(
            s,
            r##"<polyline class="signal" data-channel="{ch}" points="{}" fill="none" stroke="#1e3a8a" stroke-width="1"/>"##,
            pts.trim_end()
        );
        let _ = write!(s, r#"<text x="6" y="{:.1}">{ch}</text>"#, y + ROW / 2.0 + 4.0);
    }

    let y = TOP + Mnemonic::ALL.len() as f64 * (ROW + GAP);
    let _ = write!(
        s,
        r##"<rect x="{LEFT}" y="{y}" width="{plot_w}" height="{ROW}" fill="#fafafa" stroke="#ccc"/>"##
    );
    let y_of = |p: f64| y + ROW - p.clamp(0.0, 1.0) * ROW;
    let mut pts = String::new();
    for &(t, p) in track.iter().filter(|(t, _)| *t >= t0 && *t <= t1) {
        let _ = write!(pts, "{:.1},{:.1} ", x_of(t), y_of(p));
    }
    let _ = write!(
        s,
        r##"<polyline class="probability" points="{}" fill="none" stroke="#111" stroke-width="1.5"/>"##,
        pts.trim_end()
    );
    let ty = y_of(case.threshold);
    let _ = write!(
        s,
        r##"<line class="threshold" x1="{LEFT}" x2="{:.1}" y1="{ty:.1}" y2="{ty:.1}" stroke="#e53935" stroke-dasharray="4 3"/>"##,
        LEFT + plot_w
    );
    let _ = write!(s, r#"<text x="6" y="{:.1}">P(alarm)</text>"#, y + ROW / 2.0 + 4.0);
    let _ = write!(
        s,
        r#"<text x="{LEFT}" y="{:.1}">{}</text><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
        height - 6.0,
        fmt_time(t0),
        LEFT + plot_w,
        height - 6.0,
        fmt_time(t1)
    );
    s.push_str("</svg>");
    s
}

pub fn fmt_time(t: i64) -> String {
    chrono::DateTime::from_timestamp(t, 0)
        .map(|d| d.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_else(|| t.to_string())
}

/// Plain-text metric tables: detection quality, thresholds, and explainer
/// precision / recall in both matching modes.
pub fn metrics_text(m: &Metrics) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "wells {}  accidents {}  folds {}  scored moments {}", m.wells, m.events, m.folds, m.scored_moments);
    let _ = writeln!(s, "ROC AUC (micro)      {:.4}", m.auc_micro);
    for (k, v) in &m.auc_per_type {
        let _ = writeln!(s, "ROC AUC {:<12} {v:.4}", k.as_str());
    }
    let _ = writeln!(s, "FCMH ROC AUC (micro) {:.4}", m.fcmh_auc_micro);
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<10} {:>9} {:>9} {:>9} {:>12}", "type", "threshold", "target", "coverage", "alarms/day");
    for e in &m.thresholds.entries {
        let _ = writeln!(
            s,
            "{:<10} {:>9.4} {:>9.2} {:>9.2} {:>12.2}",
            e.kind.as_str(),
            e.stats.threshold,
            e.target_coverage,
            e.stats.coverage,
            e.stats.false_alarms_per_day
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "explained cases {}  moments {}  max local-accuracy error {:.2e}",
        m.explained_cases, m.explained_moments, m.local_accuracy_max_error
    );
    let _ = writeln!(
        s,
        "{:<9} {:>9} {:>9} {:>9} {:>9}",
        "method", "strict P", "strict R", "ext. P", "ext. R"
    );
    for name in EXPLAINERS {
        let cell = |mode| m.pr(name, mode).map(|c| (c.precision(), c.recall()));
        let (sp, sr) = cell(PrMode::Strict).unwrap_or((f64::NAN, f64::NAN));
        let (ep, er) = cell(PrMode::Extended).unwrap_or((f64::NAN, f64::NAN));
        let _ = writeln!(s, "{name:<9} {sp:>9.3} {sr:>9.3} {ep:>9.3} {er:>9.3}");
    }
    if let Some(c) = &m.consistency {
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "consistency ({} cases of {}): drift {:.4}, random sets {:.4} +- {:.4}, p = {:.3}; random explainer drift {:.4}",
            c.cases, c.kind, c.shap.drift, c.shap.null_mean, c.shap.null_std, c.shap.p_value, c.random_explainer_drift
        );
    }
    s
}

fn metrics_html(m: &Metrics) -> String {
    let mut s = String::new();
    s.push_str("<h2>Alarm quality</h2><table><tr><th>model</th><th>ROC AUC</th></tr>");
    let _ = write!(s, "<tr><td>GBM, all types</td><td>{:.4}</td></tr>", m.auc_micro);
    for (k, v) in &m.auc_per_type {
        let _ = write!(s, "<tr><td>GBM, {k}</td><td>{v:.4}</td></tr>");
    }
    let _ = write!(s, "<tr><td>FCMH, all types</td><td>{:.4}</td></tr></table>", m.fcmh_auc_micro);
    s.push_str("<table><tr><th>type</th><th>threshold</th><th>target coverage</th><th>coverage</th><th>false alarms / day</th></tr>");
    for e in &m.thresholds.entries {
        let _ = write!(
            s,
            "<tr><td>{}</td><td>{:.4}</td><td>{:.2}</td><td>{:.2}</td><td>{:.2}</td></tr>",
            e.kind, e.stats.threshold, e.target_coverage, e.stats.coverage, e.stats.false_alarms_per_day
        );
    }
    s.push_str("</table><h2>Explanations</h2>");
    s.push_str("<table><tr><th rowspan=\"2\">method</th><th colspan=\"2\">strict</th><th colspan=\"2\">extended</th></tr><tr><th>precision</th><th>recall</th><th>precision</th><th>recall</th></tr>");
    for name in EXPLAINERS {
        let _ = write!(s, "<tr><td>{name}</td>");
        for mode in PrMode::ALL {
            match m.pr(name, mode) {
                Some(c) => {
                    let _ = write!(s, "<td>{:.3}</td><td>{:.3}</td>", c.precision(), c.recall());
                }
                None => s.push_str("<td>-</td><td>-</td>"),
            }
        }
        s.push_str("</tr>");
    }
    s.push_str("</table>");
    s
}

pub struct Figure {
    pub title: String,
    pub svg: String,
}

pub fn html_report(metrics: &Metrics, cases: &[Figure], tsne: Option<&Figure>) -> String {
    let mut s = String::from(
        "<!DOCTYPE html><html><head><meta charset=\"utf-8\"><title>bofex report</title><style>\
         body{font-family:sans-serif;margin:24px;max-width:1000px}\
         table{border-collapse:collapse;margin:12px 0}td,th{border:1px solid #bbb;padding:3px 8px;text-align:right}\
         pre{background:#f4f4f4;padding:8px}</style></head><body><h1>Accident alarm report</h1>",
    );
    s.push_str(&metrics_html(metrics));
    let _ = write!(s, "<pre>{}</pre>", escape(&metrics_text(metrics)));
    s.push_str("<h2>Explained accidents</h2>");
    for f in cases {
        let _ = write!(s, "<h3>{}</h3><div class=\"figure\">{}</div>", escape(&f.title), f.svg);
    }
    if let Some(f) = tsne {
        let _ = write!(s, "<h2>Consistency</h2><h3>{}</h3><div class=\"figure\">{}</div>", escape(&f.title), f.svg);
    }
    s.push_str("</body></html>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use bofex::evaluation::experiment::ExplainedMoment;
    use bofex::shap::{ChannelHighlight, HighlightSet, Interval};
    use bofex::telemetry::{AccidentEvent, AccidentType, N_CHANNELS};

    fn highlight(channel: Mnemonic, start: usize) -> ChannelHighlight {
        ChannelHighlight {
            channel,
            intervals: vec![Interval { start, end: start + 30 }],
            tau_starts: vec![start],
        }
    }

    #[test]
    fn figure_has_probability_track_and_one_layer_per_highlighted_channel() {
        let n = 720;
        let channels = (0..N_CHANNELS).map(|c| (0..n).map(|i| (c * i) as f64).collect()).collect();
        let log = TelemetryLog::from_channels("w", 0, 10, channels).unwrap();
        let event = AccidentEvent {
            well_id: "w".into(),
            kind: AccidentType::Stuck,
            event_time: 7000,
            region_start: 5000,
            region_end: 7000,
        };
        let case = ExplainedCase {
            event: event.clone(),
            fold: 0,
            threshold: 0.5,
            moments: vec![ExplainedMoment {
                end: 700,
                time: 7000,
                probability: 0.9,
                shap: HighlightSet {
                    tau_len: 30,
                    channels: vec![highlight(Mnemonic::Hkla, 300), highlight(Mnemonic::Tqa, 120)],
                    features: vec![3, 1004],
                },
                fcmh: HighlightSet::default(),
            }],
        };
        let track: Vec<(i64, f64)> = (340..=700).map(|i| (i * 10, 0.4)).collect();
        let refs = vec![ReferenceInterval {
            well_id: "w".into(),
            event_time: 7000,
            channel: Mnemonic::Hkla,
            start: 5000,
            end: 7000,
        }];
        let svg = case_figure(&log, &case, 0, &track, &refs);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>"));
        assert_eq!(svg.matches("class=\"probability\"").count(), 1);
        assert_eq!(svg.matches("class=\"highlights\"").count(), 2);
        assert!(svg.contains("class=\"highlights\" data-channel=\"HKLA\""));
        assert!(svg.contains("class=\"highlights\" data-channel=\"TQA\""));
        assert_eq!(svg.matches("class=\"reference\"").count(), 1);
        assert_eq!(svg.matches("class=\"signal\"").count(), N_CHANNELS);
    }
}
