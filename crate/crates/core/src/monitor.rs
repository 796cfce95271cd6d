//! Online classification of border-angle frames against offline thresholds.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::io::{BufRead, Write};

use crate::area::{weighted_sum, Area, WeightVector, OMITTABLE_WEIGHT};
use crate::error::{Error, Result};
use crate::grid::{solve_dc, BranchId, BusId, GridModel};
use crate::thresholds::{join_ids, SweepRow, ThresholdSet};
use crate::transfer::{set_transfer_level, InjectionPattern};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quality {
    Good,
    Stale,
    Missing,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MeasurementFrame {
    pub timestamp_ms: u64,
    /// Degrees.
    pub angles: BTreeMap<BusId, f64>,
    /// Buses absent here count as good when they have an angle, missing otherwise.
    pub quality: BTreeMap<BusId, Quality>,
}

impl MeasurementFrame {
    pub fn quality(&self, bus: BusId) -> Quality {
        match (self.quality.get(&bus), self.angles.contains_key(&bus)) {
            (Some(q), true) => *q,
            (_, false) => Quality::Missing,
            (None, true) => Quality::Good,
        }
    }
}

/// Branches reported out of service by an external status channel.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StatusFeed {
    pub outaged: BTreeSet<BranchId>,
}

/// A frame together with the status report that came with it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StreamRecord {
    pub frame: MeasurementFrame,
    pub status: StatusFeed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum State {
    Safe,
    Alarm,
    Emergency,
    LocalProblem,
    Degraded,
}

impl State {
    pub fn label(self) -> &'static str {
        match self {
            State::Safe => "Safe",
            State::Alarm => "Alarm",
            State::Emergency => "Emergency",
            State::LocalProblem => "LocalProblem",
            State::Degraded => "Degraded",
        }
    }

    /// States that make a bounded replay exit nonzero.
    pub fn is_alert(self) -> bool {
        matches!(self, State::Emergency | State::LocalProblem)
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    pub timestamp_ms: u64,
    /// Degrees. Tentative when the state is degraded.
    pub theta_area: Option<f64>,
    pub state: State,
    pub cause: String,
}

/// Angle-only state: Emergency above theta_emergency, Alarm above theta_alarm, Safe otherwise.
pub fn angle_state(theta: f64, t: &ThresholdSet) -> State {
    if theta > t.theta_emergency {
        State::Emergency
    } else if theta > t.theta_alarm {
        State::Alarm
    } else {
        State::Safe
    }
}

/// State the offline table implies for a row, None for islanding rows.
pub fn implied_state(row: &SweepRow, t: &ThresholdSet) -> Option<State> {
    if row.outages.iter().any(|b| t.exceptional.contains(*b)) {
        return Some(State::LocalProblem);
    }
    row.theta_area.map(|theta| angle_state(theta, t))
}

fn decide(
    timestamp_ms: u64,
    theta: Option<f64>,
    lost: &[BusId],
    notes: &[String],
    t: &ThresholdSet,
    status: &StatusFeed,
) -> Classification {
    let active: Vec<BranchId> = status.outaged.iter().copied().filter(|b| t.exceptional.contains(*b)).collect();
    let mut cause = Vec::new();
    let state = if !active.is_empty() {
        cause.push(format!("exceptional outage {}", join_ids(&active)));
        State::LocalProblem
    } else {
        match theta {
            Some(theta) => {
                let s = angle_state(theta, t);
                if lost.is_empty() {
                    s
                } else if s == State::Emergency {
                    cause.push("above emergency threshold".into());
                    State::Emergency
                } else {
                    State::Degraded
                }
            }
            None => State::Degraded,
        }
    };
    if !lost.is_empty() {
        let ids: Vec<String> = lost.iter().map(|b| b.to_string()).collect();
        cause.push(format!("degraded: no usable angle for buses {}", ids.join(";")));
    }
    if cause.is_empty() {
        match state {
            State::Emergency => cause.push("above emergency threshold".into()),
            State::Alarm => cause.push("above alarm threshold".into()),
            _ => {}
        }
    }
    cause.extend(notes.iter().cloned());
    Classification { timestamp_ms, theta_area: theta, state, cause: cause.join("; ") }
}

/// Stateless classification of one frame. Stale or missing buses with small weight are
/// left out with a note; any other stale or missing bus degrades the result.
pub fn ingest_frame(
    frame: &MeasurementFrame,
    weights: &WeightVector,
    t: &ThresholdSet,
    status: &StatusFeed,
) -> Classification {
    let mut lost = Vec::new();
    let mut notes = Vec::new();
    let mut used = BTreeMap::new();
    for &(bus, _, w) in &weights.entries {
        match frame.quality(bus) {
            Quality::Good => {
                used.insert(bus, frame.angles[&bus]);
            }
            _ if w.abs() < OMITTABLE_WEIGHT => notes.push(format!("omitted small-weight bus {bus}")),
            _ => lost.push(bus),
        }
    }
    let theta = weighted_sum(weights, |b| used.get(&b).copied().unwrap_or(0.0));
    decide(frame.timestamp_ms, Some(theta), &lost, &notes, t, status)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonitorConfig {
    /// How long a last good reading may stand in for a stale or missing one.
    pub staleness_ms: u64,
    /// Moving-average length over frames; 1 disables smoothing.
    pub smoothing: usize,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig { staleness_ms: 5_000, smoothing: 1 }
    }
}

/// Stream classifier. Its only memory is last good readings and the smoothing window.
pub struct Monitor {
    weights: WeightVector,
    thresholds: ThresholdSet,
    config: MonitorConfig,
    last_good: BTreeMap<BusId, (u64, f64)>,
    window: VecDeque<f64>,
}

impl Monitor {
    pub fn new(weights: WeightVector, thresholds: ThresholdSet, config: MonitorConfig) -> Self {
        Monitor { weights, thresholds, config, last_good: BTreeMap::new(), window: VecDeque::new() }
    }

    pub fn thresholds(&self) -> &ThresholdSet {
        &self.thresholds
    }

    pub fn ingest(&mut self, frame: &MeasurementFrame, status: &StatusFeed) -> Classification {
        let ts = frame.timestamp_ms;
        let mut lost = Vec::new();
        let mut notes = Vec::new();
        let mut used = BTreeMap::new();
        for &(bus, _, w) in &self.weights.entries {
            if frame.quality(bus) == Quality::Good {
                let v = frame.angles[&bus];
                self.last_good.insert(bus, (ts, v));
                used.insert(bus, v);
                continue;
            }
            match self.last_good.get(&bus) {
                Some(&(at, v)) if ts.saturating_sub(at) <= self.config.staleness_ms => {
                    used.insert(bus, v);
                }
                last if w.abs() < OMITTABLE_WEIGHT => {
                    // fall back to whatever is known, or leave it out
                    if let Some(v) = frame.angles.get(&bus).copied().or(last.map(|l| l.1)) {
                        used.insert(bus, v);
                        notes.push(format!("small-weight bus {bus} uses an old reading"));
                    } else {
                        notes.push(format!("omitted small-weight bus {bus}"));
                    }
                }
                _ => lost.push(bus),
            }
        }
        let raw = weighted_sum(&self.weights, |b| used.get(&b).copied().unwrap_or(0.0));
        let theta = if lost.is_empty() && self.config.smoothing > 1 {
            self.window.push_back(raw);
            while self.window.len() > self.config.smoothing {
                self.window.pop_front();
            }
            self.window.iter().sum::<f64>() / self.window.len() as f64
        } else {
            if lost.is_empty() {
                self.window.clear();
                self.window.push_back(raw);
            }
            raw
        };
        decide(ts, Some(theta), &lost, &notes, &self.thresholds, status)
    }
}

/// Parses one stream line: `ts,bus:deg[:stale];...[,status:id;id]`.
pub fn parse_record(line: &str, index: usize) -> Result<StreamRecord> {
    let err = |message: String| Error::StreamFormat { frame: index, message };
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() < 2 || fields.len() > 3 {
        return Err(err(format!("expected 2 or 3 fields, got {}", fields.len())));
    }
    let timestamp_ms = fields[0].parse().map_err(|_| err(format!("bad timestamp `{}`", fields[0])))?;
    let mut frame = MeasurementFrame { timestamp_ms, ..Default::default() };
    for item in fields[1].split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let parts: Vec<&str> = item.split(':').collect();
        let bus: BusId = parts[0].parse().map_err(|_| err(format!("bad bus id in `{item}`")))?;
        if frame.quality.contains_key(&bus) {
            return Err(err(format!("bus {bus} listed twice")));
        }
        match parts[1..] {
            ["missing"] | ["-"] => {
                frame.quality.insert(bus, Quality::Missing);
            }
            [v] | [v, "good"] => {
                frame.angles.insert(bus, v.parse().map_err(|_| err(format!("bad angle in `{item}`")))?);
                frame.quality.insert(bus, Quality::Good);
            }
            [v, "stale"] => {
                frame.angles.insert(bus, v.parse().map_err(|_| err(format!("bad angle in `{item}`")))?);
                frame.quality.insert(bus, Quality::Stale);
            }
            _ => return Err(err(format!("bad measurement `{item}`"))),
        }
    }
    let mut status = StatusFeed::default();
    if let Some(s) = fields.get(2) {
        let ids = s.strip_prefix("status:").ok_or_else(|| err("third field must start with `status:`".into()))?;
        for id in ids.split(';').map(str::trim).filter(|s| !s.is_empty()) {
            status.outaged.insert(id.parse().map_err(|_| err(format!("bad branch id `{id}`")))?);
        }
    }
    Ok(StreamRecord { frame, status })
}

pub fn format_record(r: &StreamRecord) -> String {
    let mut items = Vec::new();
    let buses: BTreeSet<BusId> = r.frame.angles.keys().chain(r.frame.quality.keys()).copied().collect();
    for bus in buses {
        match (r.frame.quality(bus), r.frame.angles.get(&bus)) {
            (Quality::Stale, Some(v)) => items.push(format!("{bus}:{v}:stale")),
            (Quality::Good, Some(v)) => items.push(format!("{bus}:{v}")),
            _ => items.push(format!("{bus}:missing")),
        }
    }
    let status: Vec<BranchId> = r.status.outaged.iter().copied().collect();
    format!("{},{},status:{}", r.frame.timestamp_ms, items.join(";"), join_ids(&status))
}

/// Reads a whole stream, skipping blank and `#` lines and enforcing increasing timestamps.
pub fn read_stream<R: BufRead>(input: R) -> Result<Vec<StreamRecord>> {
    let mut out: Vec<StreamRecord> = Vec::new();
    for line in input.lines() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let index = out.len();
        let rec = parse_record(trimmed, index)?;
        if let Some(prev) = out.last() {
            if rec.frame.timestamp_ms <= prev.frame.timestamp_ms {
                return Err(Error::StreamFormat {
                    frame: index,
                    message: format!("timestamp {} does not increase", rec.frame.timestamp_ms),
                });
            }
        }
        out.push(rec);
    }
    Ok(out)
}

/// Settled post-outage border angles (degrees) at the given transfer level, repeated `count` times.
/// The status of every frame reports the outaged branches.
#[allow(clippy::too_many_arguments)]
pub fn simulate_outage_frames(
    model: &GridModel,
    area: &Area,
    pattern: &InjectionPattern,
    outages: &[BranchId],
    transfer_level: f64,
    count: usize,
    start_ms: u64,
    period_ms: u64,
) -> Result<Vec<StreamRecord>> {
    let at_level = set_transfer_level(model, area, pattern, transfer_level)?;
    let sol = solve_dc(&at_level, outages)?;
    let angles: BTreeMap<BusId, f64> =
        area.border().iter().map(|(b, _)| (*b, sol.angle(*b).expect("border bus in model").to_degrees())).collect();
    let quality = angles.keys().map(|b| (*b, Quality::Good)).collect();
    let status = StatusFeed { outaged: outages.iter().copied().collect() };
    Ok((0..count)
        .map(|i| StreamRecord {
            frame: MeasurementFrame {
                timestamp_ms: start_ms + i as u64 * period_ms,
                angles: angles.clone(),
                quality: BTreeMap::clone(&quality),
            },
            status: status.clone(),
        })
        .collect())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MonitorSummary {
    pub frames: usize,
    pub events: usize,
    pub alerted: bool,
}

impl MonitorSummary {
    pub fn exit_code(&self) -> i32 {
        if self.alerted {
            2
        } else {
            0
        }
    }
}

fn write_classification<W: Write>(w: &mut csv::Writer<W>, c: &Classification) -> csv::Result<()> {
    w.write_record([
        c.timestamp_ms.to_string(),
        c.theta_area.map(|v| v.to_string()).unwrap_or_default(),
        c.state.label().to_string(),
        c.cause.clone(),
    ])
}

const LOG_HEADER: [&str; 4] = ["timestamp_ms", "theta_area_deg", "state", "cause"];

/// Classifies every frame into `log`; state changes also go to `events`.
pub fn run_monitor<R: BufRead, L: Write, E: Write>(
    monitor: &mut Monitor,
    input: R,
    log: L,
    events: Option<E>,
) -> Result<MonitorSummary> {
    let records = read_stream(input)?;
    let mut log = csv::Writer::from_writer(log);
    log.write_record(LOG_HEADER)?;
    let mut events = events.map(csv::Writer::from_writer);
    if let Some(e) = events.as_mut() {
        e.write_record(LOG_HEADER)?;
    }
    let mut summary = MonitorSummary::default();
    let mut last: Option<State> = None;
    for rec in &records {
        let c = monitor.ingest(&rec.frame, &rec.status);
        write_classification(&mut log, &c)?;
        if last != Some(c.state) {
            summary.events += 1;
            if let Some(e) = events.as_mut() {
                write_classification(e, &c)?;
            }
            last = Some(c.state);
        }
        summary.alerted |= c.state.is_alert();
        summary.frames += 1;
    }
    log.flush()?;
    if let Some(e) = events.as_mut() {
        e.flush()?;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::area::Side;
    use crate::thresholds::{Diagnosis, ExceptionalEntry, ExceptionalSet};

    fn weights() -> WeightVector {
        WeightVector { entries: vec![(BusId(1), Side::A, 1.0), (BusId(2), Side::B, -1.0)], b_area: 30.0 }
    }

    fn thresholds() -> ThresholdSet {
        ThresholdSet {
            p_emergency: 2.0,
            p_alarm: 2.88,
            theta_emergency: 5.729577951308232,
            theta_alarm: 4.0,
            exceptional: ExceptionalSet {
                entries: vec![ExceptionalEntry {
                    branch: BranchId(9),
                    diagnosis: Diagnosis::Underestimates,
                    residual: -1.0,
                }],
            },
            provenance: vec![],
        }
    }

    fn frame(ts: u64, a: f64, b: f64) -> MeasurementFrame {
        MeasurementFrame { timestamp_ms: ts, angles: [(BusId(1), a), (BusId(2), b)].into(), quality: BTreeMap::new() }
    }

    #[test]
    fn states_by_angle() {
        let (w, t, s) = (weights(), thresholds(), StatusFeed::default());
        assert_eq!(ingest_frame(&frame(0, 3.0, 0.0), &w, &t, &s).state, State::Safe);
        assert_eq!(ingest_frame(&frame(0, 5.0, 0.0), &w, &t, &s).state, State::Alarm);
        assert_eq!(ingest_frame(&frame(0, 5.729577951308232, 0.0), &w, &t, &s).state, State::Alarm);
        assert_eq!(ingest_frame(&frame(0, 11.46, 0.0), &w, &t, &s).state, State::Emergency);
    }

    #[test]
    fn local_problem_dominates() {
        let s = StatusFeed { outaged: [BranchId(9)].into() };
        let c = ingest_frame(&frame(0, 20.0, 0.0), &weights(), &thresholds(), &s);
        assert_eq!(c.state, State::LocalProblem);
        assert!(c.cause.contains('9'));
    }

    #[test]
    fn missing_bus_degrades_but_emergency_still_alerts() {
        let (w, t, s) = (weights(), thresholds(), StatusFeed::default());
        let mut f = frame(0, 3.0, 0.0);
        f.angles.remove(&BusId(2));
        let c = ingest_frame(&f, &w, &t, &s);
        assert_eq!(c.state, State::Degraded);
        f.angles.insert(BusId(1), 30.0);
        let c = ingest_frame(&f, &w, &t, &s);
        assert_eq!(c.state, State::Emergency);
        assert!(c.cause.contains("degraded"));
    }

    #[test]
    fn last_good_reading_bridges_short_gaps() {
        let mut m = Monitor::new(weights(), thresholds(), MonitorConfig::default());
        let s = StatusFeed::default();
        assert_eq!(m.ingest(&frame(0, 3.0, 0.0), &s).state, State::Safe);
        let mut f = frame(4_000, 3.0, 0.0);
        f.quality.insert(BusId(2), Quality::Stale);
        assert_eq!(m.ingest(&f, &s).state, State::Safe);
        f.timestamp_ms = 6_000;
        assert_eq!(m.ingest(&f, &s).state, State::Degraded);
    }

    #[test]
    fn record_round_trip() {
        let rec = StreamRecord {
            frame: MeasurementFrame {
                timestamp_ms: 17,
                angles: [(BusId(1), 0.1 + 0.2), (BusId(3), -2.5)].into(),
                quality: [(BusId(1), Quality::Good), (BusId(2), Quality::Missing), (BusId(3), Quality::Stale)].into(),
            },
            status: StatusFeed { outaged: [BranchId(4), BranchId(2)].into() },
        };
        let line = format_record(&rec);
        assert_eq!(line, "17,1:0.30000000000000004;2:missing;3:-2.5:stale,status:2;4");
        assert_eq!(parse_record(&line, 0).unwrap(), rec);
    }

    #[test]
    fn timestamps_must_increase() {
        let text = "# header\n10,1:1;2:0\n\n10,1:1;2:0\n";
        match read_stream(text.as_bytes()) {
            Err(Error::StreamFormat { frame, .. }) => assert_eq!(frame, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ramp_emits_transitions_in_order() {
        let text = "0,1:1;2:0\n1,1:4.5;2:0\n2,1:5;2:0\n3,1:7;2:0\n";
        let mut m = Monitor::new(weights(), thresholds(), MonitorConfig::default());
        let mut log = Vec::new();
        let mut ev = Vec::new();
        let s = run_monitor(&mut m, text.as_bytes(), &mut log, Some(&mut ev)).unwrap();
        assert_eq!(s.frames, 4);
        assert_eq!(s.exit_code(), 2);
        let states: Vec<String> =
            String::from_utf8(ev).unwrap().lines().skip(1).map(|l| l.split(',').nth(2).unwrap().to_string()).collect();
        assert_eq!(states, ["Safe", "Alarm", "Emergency"]);
    }
}
