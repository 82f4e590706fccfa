//! Drilling telemetry: parsing, cleaning onto the 10-second grid, and
//! one-hour windowing.
//!
//! Cleaning treats out-of-range samples as missing and then carries the last
//! valid observation forward onto a uniform grid.

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid step in seconds.
pub const STEP_SECONDS: i64 = 10;
/// Samples in a one-hour segment on the 10-second grid.
pub const SEGMENT_LEN: usize = 360;
pub const N_CHANNELS: usize = 12;

/// WITSML channel mnemonics consumed by the model, in canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mnemonic {
    Hkla,
    Wob,
    Bpos,
    Dbtm,
    Dmea,
    Tqa,
    Rpma,
    Sppa,
    Mfia,
    Mfoa,
    Tvt,
    Gasa,
}

impl Mnemonic {
    pub const ALL: [Mnemonic; N_CHANNELS] = [
        Mnemonic::Hkla,
        Mnemonic::Wob,
        Mnemonic::Bpos,
        Mnemonic::Dbtm,
        Mnemonic::Dmea,
        Mnemonic::Tqa,
        Mnemonic::Rpma,
        Mnemonic::Sppa,
        Mnemonic::Mfia,
        Mnemonic::Mfoa,
        Mnemonic::Tvt,
        Mnemonic::Gasa,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Mnemonic> {
        Mnemonic::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mnemonic::Hkla => "HKLA",
            Mnemonic::Wob => "WOB",
            Mnemonic::Bpos => "BPOS",
            Mnemonic::Dbtm => "DBTM",
            Mnemonic::Dmea => "DMEA",
            Mnemonic::Tqa => "TQA",
            Mnemonic::Rpma => "RPMA",
            Mnemonic::Sppa => "SPPA",
            Mnemonic::Mfia => "MFIA",
            Mnemonic::Mfoa => "MFOA",
            Mnemonic::Tvt => "TVT",
            Mnemonic::Gasa => "GASA",
        }
    }
}

impl fmt::Display for Mnemonic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mnemonic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Mnemonic::ALL
            .iter()
            .copied()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Schema(format!("unknown mnemonic `{s}`")))
    }
}

/// Accident classes with their own binary alarm model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AccidentType {
    Stuck,
    Mudloss,
    KickFlow,
    Washout,
}

impl AccidentType {
    pub const ALL: [AccidentType; 4] = [
        AccidentType::Stuck,
        AccidentType::Mudloss,
        AccidentType::KickFlow,
        AccidentType::Washout,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AccidentType::Stuck => "Stuck",
            AccidentType::Mudloss => "Mudloss",
            AccidentType::KickFlow => "KickFlow",
            AccidentType::Washout => "Washout",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for AccidentType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AccidentType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "stuck" => Ok(AccidentType::Stuck),
            "mudloss" => Ok(AccidentType::Mudloss),
            "kickflow" | "kick" => Ok(AccidentType::KickFlow),
            "washout" => Ok(AccidentType::Washout),
            _ => Err(Error::Format(format!("unknown accident type `{s}`"))),
        }
    }
}

/// Irregular, possibly dirty samples for one well as read from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct RawLog {
    pub well_id: String,
    /// `(epoch seconds, value)` pairs per channel, indexed by [`Mnemonic::index`].
    pub channels: Vec<Vec<(i64, f64)>>,
}

impl RawLog {
    pub fn new(well_id: impl Into<String>) -> Self {
        RawLog {
            well_id: well_id.into(),
            channels: vec![Vec::new(); N_CHANNELS],
        }
    }

    pub fn channel(&self, m: Mnemonic) -> &[(i64, f64)] {
        &self.channels[m.index()]
    }
}

/// A cleaned log on a uniform grid: every channel has the same length and no
/// gaps.
#[derive(Clone, Debug, PartialEq)]
pub struct TelemetryLog {
    well_id: String,
    start: i64,
    step: i64,
    channels: Vec<Vec<f64>>,
}

impl TelemetryLog {
    /// Builds a log from already-gridded channels.
    pub fn from_channels(
        well_id: impl Into<String>,
        start: i64,
        step: i64,
        channels: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if channels.len() != N_CHANNELS {
            return Err(Error::Schema(format!(
                "expected {N_CHANNELS} channels, got {}",
                channels.len()
            )));
        }
        if step <= 0 {
            return Err(Error::Config("grid step must be positive".into()));
        }
        let n = channels[0].len();
        if let Some((i, c)) = channels.iter().enumerate().find(|(_, c)| c.len() != n) {
            return Err(Error::Schema(format!(
                "channel {} has {} samples, expected {n}",
                Mnemonic::ALL[i],
                c.len()
            )));
        }
        Ok(TelemetryLog {
            well_id: well_id.into(),
            start,
            step,
            channels,
        })
    }

    pub fn well_id(&self) -> &str {
        &self.well_id
    }

    pub fn start(&self) -> i64 {
        self.start
    }

    pub fn step(&self) -> i64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Exclusive end time: `start + len * step`.
    pub fn end(&self) -> i64 {
        self.start + self.len() as i64 * self.step
    }

    pub fn time_at(&self, index: usize) -> i64 {
        self.start + index as i64 * self.step
    }

    pub fn channel(&self, m: Mnemonic) -> &[f64] {
        &self.channels[m.index()]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    /// Every sample re-expressed as a raw log, used to re-clean or re-export.
    pub fn to_raw(&self) -> RawLog {
        let mut raw = RawLog::new(self.well_id.clone());
        for (c, values) in self.channels.iter().enumerate() {
            raw.channels[c] = values
                .iter()
                .enumerate()
                .map(|(i, &v)| (self.time_at(i), v))
                .collect();
        }
        raw
    }
}

/// Per-channel `[min, max]` validity bounds. Samples outside are anomalies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidityLimits {
    limits: Vec<(f64, f64)>,
}

#[derive(Deserialize)]
struct LimitEntry {
    min: f64,
    max: f64,
}

impl Default for ValidityLimits {
    /// Repository defaults, in the synthetic generator's units (t, m, kN*m,
    /// rpm, bar, l/s, m3, %). These are plausible physical bounds, not field
    /// calibrated values.
    fn default() -> Self {
        let table = [
            (Mnemonic::Hkla, 0.0, 400.0),
            (Mnemonic::Wob, 0.0, 100.0),
            (Mnemonic::Bpos, -5.0, 60.0),
            (Mnemonic::Dbtm, 0.0, 10_000.0),
            (Mnemonic::Dmea, 0.0, 10_000.0),
            (Mnemonic::Tqa, 0.0, 100.0),
            (Mnemonic::Rpma, 0.0, 400.0),
            (Mnemonic::Sppa, 0.0, 500.0),
            (Mnemonic::Mfia, 0.0, 100.0),
            (Mnemonic::Mfoa, 0.0, 100.0),
            (Mnemonic::Tvt, 0.0, 500.0),
            (Mnemonic::Gasa, 0.0, 100.0),
        ];
        let mut limits = vec![(0.0, 0.0); N_CHANNELS];
        for (m, lo, hi) in table {
            limits[m.index()] = (lo, hi);
        }
        ValidityLimits { limits }
    }
}

impl ValidityLimits {
    pub fn new(limits: Vec<(f64, f64)>) -> Result<Self> {
        if limits.len() != N_CHANNELS {
            return Err(Error::Config(format!(
                "limits must cover {N_CHANNELS} channels, got {}",
                limits.len()
            )));
        }
        for (i, &(lo, hi)) in limits.iter().enumerate() {
            if !(lo < hi) {
                return Err(Error::Config(format!(
                    "limits for {} must satisfy min < max (got {lo}, {hi})",
                    Mnemonic::ALL[i]
                )));
            }
        }
        Ok(ValidityLimits { limits })
    }

    /// Parses a TOML table keyed by mnemonic: `HKLA = { min = 0, max = 400 }`.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: std::collections::BTreeMap<String, LimitEntry> = toml::from_str(text)?;
        let mut limits = vec![None; N_CHANNELS];
        for (key, entry) in table {
            let m: Mnemonic = key.parse()?;
            limits[m.index()] = Some((entry.min, entry.max));
        }
        let limits = limits
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                l.ok_or_else(|| {
                    Error::Schema(format!("limits file is missing {}", Mnemonic::ALL[i]))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ValidityLimits::new(limits)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ValidityLimits::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        let mut out = String::new();
        for m in Mnemonic::ALL {
            let (lo, hi) = self.get(m);
            out.push_str(&format!("{m} = {{ min = {lo:?}, max = {hi:?} }}\n"));
        }
        out
    }

    pub fn get(&self, m: Mnemonic) -> (f64, f64) {
        self.limits[m.index()]
    }

    pub fn contains(&self, m: Mnemonic, value: f64) -> bool {
        let (lo, hi) = self.get(m);
        value.is_finite() && value >= lo && value <= hi
    }
}

/// A one-hour window of a cleaned log: samples `end - 360 .. end`.
#[derive(Clone, Copy, Debug)]
pub struct Segment<'a> {
    log: &'a TelemetryLog,
    end: usize,
}

impl<'a> Segment<'a> {
    /// Window ending (exclusively) at grid index `end`.
    pub fn at_index(log: &'a TelemetryLog, end: usize) -> Result<Self> {
        if end < SEGMENT_LEN {
            return Err(Error::Window(format!(
                "segment ending at index {end} needs {SEGMENT_LEN} samples of history"
            )));
        }
        if end > log.len() {
            return Err(Error::Window(format!(
                "segment end {end} is past the log end {}",
                log.len()
            )));
        }
        Ok(Segment { log, end })
    }

    pub fn log(&self) -> &'a TelemetryLog {
        self.log
    }

    /// Exclusive end index in the log.
    pub fn end_index(&self) -> usize {
        self.end
    }

    pub fn start_index(&self) -> usize {
        self.end - SEGMENT_LEN
    }

    pub fn start_time(&self) -> i64 {
        self.log.time_at(self.start_index())
    }

    /// Exclusive end time.
    pub fn end_time(&self) -> i64 {
        self.log.time_at(self.end)
    }

    pub fn channel(&self, m: Mnemonic) -> &'a [f64] {
        &self.log.channel(m)[self.start_index()..self.end]
    }
}

/// Returns the one-hour segment covering `[end_time - 1h, end_time)`, with
/// `end_time` rounded down to the grid.
pub fn window(log: &TelemetryLog, end_time: i64) -> Result<Segment<'_>> {
    let offset = end_time - log.start();
    if offset < SEGMENT_LEN as i64 * log.step() {
        return Err(Error::Window(format!(
            "end time {end_time} leaves less than one hour after log start {}",
            log.start()
        )));
    }
    let end = (offset / log.step()) as usize;
    Segment::at_index(log, end)
}

/// A labeled accident with the interval in which an alarm of the same type
/// counts as a correct forecast.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccidentEvent {
    pub well_id: String,
    pub kind: AccidentType,
    pub event_time: i64,
    pub region_start: i64,
    pub region_end: i64,
}

impl AccidentEvent {
    pub fn region_contains(&self, t: i64) -> bool {
        t >= self.region_start && t <= self.region_end
    }
}

/// Expert-style annotation: a channel showing abnormal behavior before an
/// accident, identified by `(well_id, event_time)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceInterval {
    pub well_id: String,
    pub event_time: i64,
    pub channel: Mnemonic,
    /// Inclusive start, exclusive end, epoch seconds.
    pub start: i64,
    pub end: i64,
}

impl ReferenceInterval {
    pub fn belongs_to(&self, event: &AccidentEvent) -> bool {
        self.well_id == event.well_id && self.event_time == event.event_time
    }
}

/// Parses a time cell: integer or decimal epoch seconds, or ISO-8601.
pub fn parse_time(cell: &str) -> Result<i64> {
    let cell = cell.trim();
    if let Ok(v) = cell.parse::<i64>() {
        return Ok(v);
    }
    if let Ok(v) = cell.parse::<f64>() {
        if v.is_finite() {
            return Ok(v.round() as i64);
        }
    }
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(cell) {
        return Ok(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(dt) = chrono::NaiveDateTime::parse_from_str(cell, fmt) {
            return Ok(dt.and_utc().timestamp());
        }
    }
    Err(Error::Format(format!("unparseable time `{cell}`")))
}

/// Reads a telemetry CSV. The well id is the file stem.
pub fn parse_csv(path: &Path) -> Result<RawLog> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let well_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_csv_reader(well_id, file)
}

pub fn parse_csv_reader<R: Read>(well_id: impl Into<String>, reader: R) -> Result<RawLog> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let time_col = find("time").ok_or_else(|| Error::Schema("missing column `time`".into()))?;
    let mut cols = [0usize; N_CHANNELS];
    for m in Mnemonic::ALL {
        cols[m.index()] =
            find(m.as_str()).ok_or_else(|| Error::Schema(format!("missing column `{m}`")))?;
    }

    let mut raw = RawLog::new(well_id);
    let mut last_time: Option<i64> = None;
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let t = parse_time(record.get(time_col).unwrap_or(""))?;
        if let Some(prev) = last_time {
            if t <= prev {
                return Err(Error::Format(format!(
                    "timestamps not strictly increasing at data row {}: {t} after {prev}",
                    row + 1
                )));
            }
        }
        last_time = Some(t);
        for m in Mnemonic::ALL {
            let cell = record.get(cols[m.index()]).unwrap_or("");
            if let Ok(v) = cell.parse::<f64>() {
                raw.channels[m.index()].push((t, v));
            }
        }
    }
    Ok(raw)
}

/// Writes a cleaned log with epoch-second times. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_csv<W: Write>(log: &TelemetryLog, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["time".to_string()];
    header.extend(Mnemonic::ALL.iter().map(|m| m.as_str().to_string()));
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(N_CHANNELS + 1);
    for i in 0..log.len() {
        row.clear();
        row.push(log.time_at(i).to_string());
        for m in Mnemonic::ALL {
            row.push(format!("{:?}", log.channel(m)[i]));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

pub fn save_csv(log: &TelemetryLog, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(log, std::io::BufWriter::new(file))
}

/// Resamples onto the step grid with last-observation-carried-forward after
/// discarding out-of-range samples.
///
/// The grid starts at the first step-aligned time at which every channel has
/// a valid observation and ends at the last step-aligned time not after the
/// final sample.
pub fn clean(raw: &RawLog, limits: &ValidityLimits, step: i64) -> Result<TelemetryLog> {
    if step <= 0 {
        return Err(Error::Config("grid step must be positive".into()));
    }
    let valid = valid_samples(raw, limits);
    let mut first_valid = i64::MIN;
    for (c, samples) in valid.iter().enumerate() {
        let first = samples.first().map(|s| s.0).ok_or_else(|| {
            Error::Gap(format!(
                "channel {} has no valid sample in well {}",
                Mnemonic::ALL[c],
                raw.well_id
            ))
        })?;
        first_valid = first_valid.max(first);
    }
    let grid_start = ceil_to(first_valid, step);
    clean_on_grid(raw, &valid, step, grid_start)
}

/// Like [`clean`] but with an explicit grid start.
pub fn clean_from(
    raw: &RawLog,
    limits: &ValidityLimits,
    step: i64,
    grid_start: i64,
) -> Result<TelemetryLog> {
    if step <= 0 {
        return Err(Error::Config("grid step must be positive".into()));
    }
    let valid = valid_samples(raw, limits);
    clean_on_grid(raw, &valid, step, grid_start)
}

fn valid_samples(raw: &RawLog, limits: &ValidityLimits) -> Vec<Vec<(i64, f64)>> {
    Mnemonic::ALL
        .iter()
        .map(|&m| {
            raw.channel(m)
                .iter()
                .copied()
                .filter(|&(_, v)| limits.contains(m, v))
                .collect()
        })
        .collect()
}

fn clean_on_grid(
    raw: &RawLog,
    valid: &[Vec<(i64, f64)>],
    step: i64,
    grid_start: i64,
) -> Result<TelemetryLog> {
    let last_time = raw
        .channels
        .iter()
        .filter_map(|c| c.last().map(|s| s.0))
        .max()
        .ok_or_else(|| Error::Gap(format!("well {} has no samples", raw.well_id)))?;
    if last_time < grid_start {
        return Err(Error::Gap(format!(
            "well {}: no samples at or after grid start {grid_start}",
            raw.well_id
        )));
    }
    let n = ((last_time - grid_start) / step) as usize + 1;

    let mut channels = Vec::with_capacity(N_CHANNELS);
    for (c, samples) in valid.iter().enumerate() {
        // Index of the first sample strictly after the grid point.
        let mut next = samples.partition_point(|s| s.0 <= grid_start);
        if next == 0 {
            return Err(Error::Gap(format!(
                "channel {} of well {} has no valid sample at or before {grid_start}",
                Mnemonic::ALL[c],
                raw.well_id
            )));
        }
        let mut current = samples[next - 1].1;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let t = grid_start + i as i64 * step;
            while next < samples.len() && samples[next].0 <= t {
                current = samples[next].1;
                next += 1;
            }
            out.push(current);
        }
        channels.push(out);
    }
    TelemetryLog::from_channels(raw.well_id.clone(), grid_start, step, channels)
}

fn ceil_to(t: i64, step: i64) -> i64 {
    let r = t.rem_euclid(step);
    if r == 0 {
        t
    } else {
        t + (step - r)
    }
}

#[derive(Serialize, Deserialize)]
struct EventRow {
    well_id: String,
    #[serde(rename = "type")]
    kind: String,
    event_time: i64,
    region_start: i64,
    region_end: i64,
}

/// Reads the events CSV (`well_id,type,event_time,region_start,region_end`).
pub fn read_events<R: Read>(reader: R) -> Result<Vec<AccidentEvent>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize::<EventRow>() {
        let row = row?;
        let event = AccidentEvent {
            well_id: row.well_id,
            kind: row.kind.parse()?,
            event_time: row.event_time,
            region_start: row.region_start,
            region_end: row.region_end,
        };
        if !(event.region_start <= event.event_time && event.event_time <= event.region_end) {
            return Err(Error::Format(format!(
                "event at {} in well {} lies outside its reference region",
                event.event_time, event.well_id
            )));
        }
        out.push(event);
    }
    Ok(out)
}

pub fn write_events<W: Write>(events: &[AccidentEvent], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for e in events {
        w.serialize(EventRow {
            well_id: e.well_id.clone(),
            kind: e.kind.as_str().to_string(),
            event_time: e.event_time,
            region_start: e.region_start,
            region_end: e.region_end,
        })?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ReferenceRow {
    well_id: String,
    event_time: i64,
    channel: String,
    start: i64,
    end: i64,
}

/// Reads the reference-interval CSV (`well_id,event_time,channel,start,end`).
pub fn read_references<R: Read>(reader: R) -> Result<Vec<ReferenceInterval>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize::<ReferenceRow>() {
        let row = row?;
        if row.end <= row.start {
            return Err(Error::Format(format!(
                "empty reference interval [{}, {}) in well {}",
                row.start, row.end, row.well_id
            )));
        }
        out.push(ReferenceInterval {
            well_id: row.well_id,
            event_time: row.event_time,
            channel: row.channel.parse()?,
            start: row.start,
            end: row.end,
        });
    }
    Ok(out)
}

pub fn write_references<W: Write>(refs: &[ReferenceInterval], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in refs {
        w.serialize(ReferenceRow {
            well_id: r.well_id.clone(),
            event_time: r.event_time,
            channel: r.channel.as_str().to_string(),
            start: r.start,
            end: r.end,
        })?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

/// Cleaned wells plus their accident labels and reference annotations.
///
/// On disk: `wells/<id>.csv`, `events.csv` and `references.csv` under one
/// directory. The label files are optional when loading.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub logs: Vec<TelemetryLog>,
    pub events: Vec<AccidentEvent>,
    pub references: Vec<ReferenceInterval>,
}

impl Dataset {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let wells = dir.join("wells");
        std::fs::create_dir_all(&wells).map_err(|e| Error::io(&wells, e))?;
        for log in &self.logs {
            save_csv(log, &wells.join(format!("{}.csv", log.well_id())))?;
        }
        let path = dir.join("events.csv");
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_events(&self.events, f)?;
        let path = dir.join("references.csv");
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_references(&self.references, f)?;
        Ok(())
    }

    pub fn load(dir: &Path, limits: &ValidityLimits) -> Result<Self> {
        let wells = dir.join("wells");
        let mut paths: Vec<_> = std::fs::read_dir(&wells)
            .map_err(|e| Error::io(&wells, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::Schema(format!("no well CSV files in {}", wells.display())));
        }
        let logs = paths
            .iter()
            .map(|p| clean(&parse_csv(p)?, limits, STEP_SECONDS))
            .collect::<Result<Vec<_>>>()?;
        let read_opt = |name: &str| -> Result<Option<File>> {
            let path = dir.join(name);
            match File::open(&path) {
                Ok(f) => Ok(Some(f)),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
                Err(e) => Err(Error::io(&path, e)),
            }
        };
        let events = match read_opt("events.csv")? {
            Some(f) => read_events(f)?,
            None => Vec::new(),
        };
        let references = match read_opt("references.csv")? {
            Some(f) => read_references(f)?,
            None => Vec::new(),
        };
        Ok(Dataset {
            logs,
            events,
            references,
        })
    }

    pub fn log(&self, well_id: &str) -> Option<&TelemetryLog> {
        self.logs.iter().find(|l| l.well_id() == well_id)
    }

    pub fn well_ids(&self) -> Vec<String> {
        self.logs.iter().map(|l| l.well_id().to_string()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> String {
        let mut h = "time".to_string();
        for m in Mnemonic::ALL {
            h.push(',');
            h.push_str(m.as_str());
        }
        h
    }

    fn row(t: i64, v: f64) -> String {
        let mut r = t.to_string();
        for _ in 0..N_CHANNELS {
            r.push_str(&format!(",{v}"));
        }
        r
    }

    fn constant_raw(n: usize, value: f64) -> RawLog {
        let mut raw = RawLog::new("w");
        for c in 0..N_CHANNELS {
            raw.channels[c] = (0..n).map(|i| (i as i64 * 10, value)).collect();
        }
        raw
    }

    #[test]
    fn parses_three_rows() {
        let text = format!("{}\n{}\n{}\n{}\n", header(), row(0, 1.0), row(10, 2.0), row(20, 3.0));
        let raw = parse_csv_reader("w1", text.as_bytes()).unwrap();
        for m in Mnemonic::ALL {
            assert_eq!(raw.channel(m).len(), 3);
        }
        assert_eq!(raw.channel(Mnemonic::Tqa)[2], (20, 3.0));
    }

    #[test]
    fn missing_column_names_it() {
        let h = header().replace(",GASA", "");
        let text = format!("{h}\n0,1,1,1,1,1,1,1,1,1,1,1\n");
        match parse_csv_reader("w", text.as_bytes()) {
            Err(Error::Schema(msg)) => assert!(msg.contains("GASA"), "{msg}"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn empty_cell_is_missing_sample() {
        let mut middle = row(10, 2.0);
        // Blank out HKLA, the first channel column.
        middle = middle.replacen(",2", ",", 1);
        let text = format!("{}\n{}\n{}\n{}\n", header(), row(0, 1.0), middle, row(20, 3.0));
        let raw = parse_csv_reader("w", text.as_bytes()).unwrap();
        assert_eq!(raw.channel(Mnemonic::Hkla).len(), 2);
        for m in &Mnemonic::ALL[1..] {
            assert_eq!(raw.channel(*m).len(), 3);
        }
    }

    #[test]
    fn non_monotonic_time_rejected() {
        let text = format!("{}\n{}\n{}\n", header(), row(10, 1.0), row(10, 2.0));
        assert!(matches!(
            parse_csv_reader("w", text.as_bytes()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn iso_times_accepted() {
        assert_eq!(parse_time("1970-01-01T00:01:40Z").unwrap(), 100);
        assert_eq!(parse_time("1970-01-01 00:01:40").unwrap(), 100);
        assert_eq!(parse_time("100").unwrap(), 100);
        assert!(parse_time("yesterday").is_err());
    }

    #[test]
    fn clean_constant_is_identity() {
        let raw = constant_raw(5, 42.0);
        let log = clean(&raw, &ValidityLimits::default(), STEP_SECONDS).unwrap();
        assert_eq!(log.len(), 5);
        for m in Mnemonic::ALL {
            assert!(log.channel(m).iter().all(|&v| v == 42.0));
        }
    }

    #[test]
    fn clean_replaces_anomaly_with_previous_valid() {
        let mut raw = constant_raw(3, 5.0);
        let mut limits = ValidityLimits::default().limits;
        limits[Mnemonic::Wob.index()] = (0.0, 1000.0);
        let limits = ValidityLimits::new(limits).unwrap();
        raw.channels[Mnemonic::Wob.index()] = vec![(0, 5.0), (10, 999_999.0), (20, 7.0)];
        let log = clean(&raw, &limits, STEP_SECONDS).unwrap();
        assert_eq!(log.channel(Mnemonic::Wob), &[5.0, 5.0, 7.0]);
    }

    #[test]
    fn clean_carries_forward_over_gaps() {
        let mut raw = constant_raw(3, 1.0);
        raw.channels[Mnemonic::Tvt.index()] = vec![(0, 3.0), (25, 9.0)];
        let log = clean(&raw, &ValidityLimits::default(), STEP_SECONDS).unwrap();
        assert_eq!(log.len(), 3);
        assert_eq!(log.channel(Mnemonic::Tvt), &[3.0, 3.0, 3.0]);
    }

    #[test]
    fn clean_without_valid_history_is_gap_error() {
        let mut raw = constant_raw(3, 1.0);
        raw.channels[Mnemonic::Gasa.index()] = vec![(20, 1.0)];
        assert!(matches!(
            clean_from(&raw, &ValidityLimits::default(), STEP_SECONDS, 0),
            Err(Error::Gap(_))
        ));
        raw.channels[Mnemonic::Gasa.index()] = vec![(0, 1e9)];
        assert!(matches!(
            clean(&raw, &ValidityLimits::default(), STEP_SECONDS),
            Err(Error::Gap(_))
        ));
    }

    #[test]
    fn window_arithmetic() {
        let log = clean(&constant_raw(720, 1.0), &ValidityLimits::default(), 10).unwrap();
        let seg = window(&log, 90 * 60).unwrap();
        assert_eq!(seg.start_index(), 180);
        assert_eq!(seg.end_index(), 540);
        assert_eq!(seg.channel(Mnemonic::Hkla).len(), SEGMENT_LEN);
        assert!(matches!(window(&log, 30 * 60), Err(Error::Window(_))));

        let hour = clean(&constant_raw(360, 1.0), &ValidityLimits::default(), 10).unwrap();
        let seg = window(&hour, hour.end()).unwrap();
        assert_eq!((seg.start_index(), seg.end_index()), (0, 360));
    }

    #[test]
    fn limits_toml_round_trip() {
        let limits = ValidityLimits::default();
        let back = ValidityLimits::from_toml_str(&limits.to_toml_string()).unwrap();
        assert_eq!(limits, back);
        assert!(ValidityLimits::from_toml_str("HKLA = { min = 1, max = 0 }").is_err());
    }

    #[test]
    fn events_round_trip_and_validation() {
        let events = vec![AccidentEvent {
            well_id: "w1".into(),
            kind: AccidentType::KickFlow,
            event_time: 500,
            region_start: 100,
            region_end: 500,
        }];
        let mut buf = Vec::new();
        write_events(&events, &mut buf).unwrap();
        assert_eq!(read_events(buf.as_slice()).unwrap(), events);
        let bad = "well_id,type,event_time,region_start,region_end\nw,Stuck,50,100,200\n";
        assert!(read_events(bad.as_bytes()).is_err());
    }
}
