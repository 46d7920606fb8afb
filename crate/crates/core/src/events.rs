//! Detected events and the event file format.
//!
//! ```text
//! #lanequest-events v1
//! N <t> <laneCount>
//! E <t> <kind> <lat> <lon> [feature]
//! ```
//!
//! `N` records mark the lane count of the road from `t` onward. Motion
//! events use the kinds `left-change` / `right-change` with the peak delta as
//! feature. Untaken merge or exit lanes carry a `-passed` suffix.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::anchor::AnchorKind;
use crate::error::{Error, Result};
use crate::geo::LatLon;
use crate::trace::{num, Side};

pub const EVENTS_HEADER: &str = "#lanequest-events v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MotionKind {
    Left,
    Right,
    None,
}

impl MotionKind {
    pub fn mirrored(self) -> Self {
        match self {
            MotionKind::Left => MotionKind::Right,
            MotionKind::Right => MotionKind::Left,
            MotionKind::None => MotionKind::None,
        }
    }

    pub(crate) fn index(self) -> usize {
        match self {
            MotionKind::Left => 0,
            MotionKind::Right => 1,
            MotionKind::None => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionEvent {
    pub t: f64,
    pub kind: MotionKind,
    /// |max − min| of the paired peaks, m/s².
    pub peak_delta: f64,
    pub location: Option<LatLon>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ObservationKind {
    TurnLeft,
    TurnRight,
    UTurn,
    Merge { side: Side, taken: bool },
    Exit { side: Side, taken: bool },
    Stop,
    Curve,
    Tunnel,
    SurfaceAnomaly,
}

impl ObservationKind {
    pub fn token(self) -> String {
        match self {
            ObservationKind::TurnLeft => "turn-left".into(),
            ObservationKind::TurnRight => "turn-right".into(),
            ObservationKind::UTurn => "uturn".into(),
            ObservationKind::Merge { side, taken } => {
                format!("merge-{}{}", side.as_str(), if taken { "" } else { "-passed" })
            }
            ObservationKind::Exit { side, taken } => {
                format!("exit-{}{}", side.as_str(), if taken { "" } else { "-passed" })
            }
            ObservationKind::Stop => "stop".into(),
            ObservationKind::Curve => "curve".into(),
            ObservationKind::Tunnel => "tunnel".into(),
            ObservationKind::SurfaceAnomaly => "anomaly".into(),
        }
    }

    /// Anchor kinds an observation of this kind may be associated with.
    pub fn anchor_kinds(self) -> &'static [AnchorKind] {
        use AnchorKind as A;
        match self {
            ObservationKind::TurnLeft => &[A::TurnLeft],
            ObservationKind::TurnRight => &[A::TurnRight],
            ObservationKind::UTurn => &[A::UTurn],
            ObservationKind::Merge { side: Side::Left, .. } => &[A::Merge(Side::Left)],
            ObservationKind::Merge { side: Side::Right, .. } => &[A::Merge(Side::Right)],
            ObservationKind::Exit { side: Side::Left, .. } => &[A::Exit(Side::Left)],
            ObservationKind::Exit { side: Side::Right, .. } => &[A::Exit(Side::Right)],
            ObservationKind::Stop => &[A::Stop],
            ObservationKind::Curve => &[A::Curve],
            ObservationKind::Tunnel => &[A::Tunnel],
            ObservationKind::SurfaceAnomaly => &[A::Pothole, A::CalmingDevice],
        }
    }

    /// Primary anchor kind used when learning from this observation.
    pub fn learned_kind(self) -> AnchorKind {
        self.anchor_kinds()[0]
    }

    /// Passing a merge/exit lane without taking it.
    pub fn is_negative(self) -> bool {
        matches!(
            self,
            ObservationKind::Merge { taken: false, .. } | ObservationKind::Exit { taken: false, .. }
        )
    }

    pub fn has_feature(self) -> bool {
        matches!(
            self,
            ObservationKind::Curve | ObservationKind::Tunnel | ObservationKind::SurfaceAnomaly
        )
    }
}

impl FromStr for ObservationKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "turn-left" => ObservationKind::TurnLeft,
            "turn-right" => ObservationKind::TurnRight,
            "uturn" => ObservationKind::UTurn,
            "stop" => ObservationKind::Stop,
            "curve" => ObservationKind::Curve,
            "tunnel" => ObservationKind::Tunnel,
            "anomaly" => ObservationKind::SurfaceAnomaly,
            _ => {
                let (base, taken) = match s.strip_suffix("-passed") {
                    Some(b) => (b, false),
                    None => (s, true),
                };
                let (kind, side) = base.split_once('-').ok_or_else(|| format!("unknown event kind {s:?}"))?;
                let side: Side = side.parse()?;
                match kind {
                    "merge" => ObservationKind::Merge { side, taken },
                    "exit" => ObservationKind::Exit { side, taken },
                    _ => return Err(format!("unknown event kind {s:?}")),
                }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorObservation {
    pub t: f64,
    pub kind: ObservationKind,
    pub location: LatLon,
    /// Curve radius (m), tunnel x-magnetometer variance (µT²) or surface
    /// anomaly z-acceleration variance ((m/s²)²).
    pub feature: Option<f64>,
    /// Lane belief of the reporting car just before the observation.
    pub reporter_belief: Option<Vec<f64>>,
    /// Start and end of the underlying maneuver, when known.
    pub span: Option<(f64, f64)>,
}

impl AnchorObservation {
    pub fn new(t: f64, kind: ObservationKind, location: LatLon) -> Self {
        Self {
            t,
            kind,
            location,
            feature: None,
            reporter_belief: None,
            span: None,
        }
    }

    pub fn with_feature(mut self, f: f64) -> Self {
        self.feature = Some(f);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DetectedEvent {
    Motion(MotionEvent),
    Anchor(AnchorObservation),
    /// The car entered a road with a different lane count.
    RoadChange { t: f64, lane_count: u32 },
}

impl DetectedEvent {
    pub fn t(&self) -> f64 {
        match self {
            DetectedEvent::Motion(m) => m.t,
            DetectedEvent::Anchor(a) => a.t,
            DetectedEvent::RoadChange { t, .. } => *t,
        }
    }

    /// Whether the filter can update on this event (road changes are
    /// bookkeeping, not evidence).
    pub fn is_evidence(&self) -> bool {
        !matches!(self, DetectedEvent::RoadChange { .. })
    }
}

/// Stable sort by time; ties keep detection order.
pub fn sort_events(events: &mut [DetectedEvent]) {
    events.sort_by(|a, b| a.t().total_cmp(&b.t()));
}

pub fn events_to_text(events: &[DetectedEvent]) -> String {
    let mut out = String::from(EVENTS_HEADER);
    out.push('\n');
    let loc = |l: Option<LatLon>| match l {
        Some(p) => format!("{}\t{}", p.lat, p.lon),
        None => "-\t-".into(),
    };
    for e in events {
        match e {
            DetectedEvent::RoadChange { t, lane_count } => {
                writeln!(out, "N\t{t}\t{lane_count}").unwrap();
            }
            DetectedEvent::Motion(m) => {
                let kind = match m.kind {
                    MotionKind::Left => "left-change",
                    MotionKind::Right => "right-change",
                    MotionKind::None => "no-change",
                };
                writeln!(out, "E\t{}\t{kind}\t{}\t{}", m.t, loc(m.location), m.peak_delta).unwrap();
            }
            DetectedEvent::Anchor(a) => {
                write!(out, "E\t{}\t{}\t{}", a.t, a.kind.token(), loc(Some(a.location))).unwrap();
                if let Some(f) = a.feature {
                    write!(out, "\t{f}").unwrap();
                }
                out.push('\n');
            }
        }
    }
    out
}

pub fn events_from_text(text: &str) -> Result<Vec<DetectedEvent>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == EVENTS_HEADER => {}
        _ => return Err(Error::parse(1, format!("missing header {EVENTS_HEADER:?}"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        match f[0] {
            "N" if f.len() == 3 => out.push(DetectedEvent::RoadChange {
                t: num(f[1], lineno)?,
                lane_count: num(f[2], lineno)?,
            }),
            "E" if f.len() == 5 || f.len() == 6 => {
                let t: f64 = num(f[1], lineno)?;
                let location = if f[3] == "-" {
                    None
                } else {
                    Some(LatLon::new(num(f[3], lineno)?, num(f[4], lineno)?))
                };
                let feature = f.get(5).map(|s| num::<f64>(s, lineno)).transpose()?;
                let motion = match f[2] {
                    "left-change" => Some(MotionKind::Left),
                    "right-change" => Some(MotionKind::Right),
                    "no-change" => Some(MotionKind::None),
                    _ => None,
                };
                if let Some(kind) = motion {
                    out.push(DetectedEvent::Motion(MotionEvent {
                        t,
                        kind,
                        peak_delta: feature.unwrap_or(0.0),
                        location,
                    }));
                } else {
                    let kind: ObservationKind = f[2].parse().map_err(|e: String| Error::parse(lineno, e))?;
                    let location = location.ok_or_else(|| Error::parse(lineno, "anchor event needs a location"))?;
                    out.push(DetectedEvent::Anchor(AnchorObservation {
                        t,
                        kind,
                        location,
                        feature,
                        reporter_belief: None,
                        span: None,
                    }));
                }
            }
            other => return Err(Error::parse(lineno, format!("bad event record {other:?}"))),
        }
    }
    Ok(out)
}

pub fn write_events(events: &[DetectedEvent], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, events_to_text(events)).map_err(|e| Error::io(path, e))
}

pub fn read_events(path: impl AsRef<Path>) -> Result<Vec<DetectedEvent>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    events_from_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_tokens_parse_back() {
        let kinds = [
            ObservationKind::TurnLeft,
            ObservationKind::UTurn,
            ObservationKind::Exit { side: Side::Right, taken: false },
            ObservationKind::Merge { side: Side::Left, taken: true },
            ObservationKind::SurfaceAnomaly,
        ];
        for k in kinds {
            assert_eq!(k.token().parse::<ObservationKind>().unwrap(), k);
        }
    }

    #[test]
    fn event_file_round_trip() {
        let events = vec![
            DetectedEvent::RoadChange { t: 0.0, lane_count: 4 },
            DetectedEvent::Motion(MotionEvent {
                t: 11.02,
                kind: MotionKind::Left,
                peak_delta: 2.0,
                location: Some(LatLon::new(31.2, 29.9)),
            }),
            DetectedEvent::Anchor(
                AnchorObservation::new(20.5, ObservationKind::Curve, LatLon::new(31.21, 29.91)).with_feature(103.25),
            ),
        ];
        let text = events_to_text(&events);
        assert_eq!(events_from_text(&text).unwrap(), events);
    }
}
