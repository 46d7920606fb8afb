//! Drive traces and road maps, plus their line-oriented text formats.
//!
//! Car frame: `x` points to the left side of the car, `y` along the direction
//! of motion, `z` up. Lanes are numbered from 1 (left-most) to `n`
//! (right-most).
//!
//! Trace file:
//!
//! ```text
//! #lanequest-trace v1
//! S <t> <ax> <ay> <az> <gx> <gy> <gz> <mx> <my> <mz> <yaw>
//! F <t> <lat> <lon> <accuracy> <segmentId>
//! G <t> <lane>
//! ```
//!
//! Road map file: `R <segmentId> <laneCount> <vertexCount> <lat1> <lon1> ...`
//! and `X <segmentId> <merge|exit> <left|right> <posMeters>`. Fields are tab
//! separated; lines beginning with `#` are comments.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine, LatLon, LocalFrame};

pub const TRACE_HEADER: &str = "#lanequest-trace v1";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SegmentId(pub String);

impl SegmentId {
    pub fn new(id: impl Into<String>) -> Self {
        SegmentId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One inertial reading in the car frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SensorSample {
    pub t: f64,
    /// m/s²
    pub accel: [f64; 3],
    /// rad/s, counter-clockwise positive about each axis
    pub gyro: [f64; 3],
    /// µT
    pub mag: [f64; 3],
    /// compass heading in degrees, clockwise, [0, 360)
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocationFix {
    pub t: f64,
    pub lat: f64,
    pub lon: f64,
    /// 1-σ radius in metres
    pub accuracy: f64,
    pub segment: SegmentId,
}

impl LocationFix {
    pub fn position(&self) -> LatLon {
        LatLon::new(self.lat, self.lon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneLabel {
    pub t: f64,
    pub lane: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DriveTrace {
    pub samples: Vec<SensorSample>,
    pub fixes: Vec<LocationFix>,
    /// Empty when the trace carries no ground truth.
    pub ground_truth: Vec<LaneLabel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    /// Edge lane on this side of an `n`-lane road.
    pub fn edge_lane(self, n: u32) -> u32 {
        match self {
            Side::Left => 1,
            Side::Right => n,
        }
    }
}

impl FromStr for Side {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "left" => Ok(Side::Left),
            "right" => Ok(Side::Right),
            _ => Err(format!("expected left|right, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SpecialKind {
    Merge,
    Exit,
}

impl SpecialKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SpecialKind::Merge => "merge",
            SpecialKind::Exit => "exit",
        }
    }
}

impl FromStr for SpecialKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "merge" => Ok(SpecialKind::Merge),
            "exit" => Ok(SpecialKind::Exit),
            _ => Err(format!("expected merge|exit, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpecialLane {
    pub kind: SpecialKind,
    pub side: Side,
    /// Distance along the segment polyline.
    pub position_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadSegment {
    pub id: SegmentId,
    pub polyline: Vec<LatLon>,
    pub lane_count: u32,
    pub special_lanes: Vec<SpecialLane>,
}

impl RoadSegment {
    pub fn new(id: impl Into<String>, polyline: Vec<LatLon>, lane_count: u32) -> Result<Self> {
        let seg = RoadSegment {
            id: SegmentId::new(id),
            polyline,
            lane_count,
            special_lanes: Vec::new(),
        };
        seg.validate()?;
        Ok(seg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.polyline.len() < 2 {
            return Err(Error::InvalidRoad(format!(
                "segment {} has {} vertices, need at least 2",
                self.id,
                self.polyline.len()
            )));
        }
        if self.lane_count == 0 {
            return Err(Error::InvalidRoad(format!("segment {} has no lanes", self.id)));
        }
        if let Some(p) = self.polyline.iter().find(|p| !p.is_valid()) {
            return Err(Error::InvalidRoad(format!(
                "segment {} has an invalid vertex {p:?}",
                self.id
            )));
        }
        Ok(())
    }

    /// Cumulative haversine length at every vertex.
    pub fn cumulative_lengths(&self) -> Vec<f64> {
        let mut acc = Vec::with_capacity(self.polyline.len());
        let mut total = 0.0;
        acc.push(0.0);
        for w in self.polyline.windows(2) {
            total += haversine(w[0], w[1]);
            acc.push(total);
        }
        acc
    }

    pub fn length(&self) -> f64 {
        *self.cumulative_lengths().last().unwrap_or(&0.0)
    }

    /// Point at `along` metres with a signed lateral offset (positive to the
    /// left of the direction of travel). `along` is clamped to the segment.
    pub fn point_at(&self, along: f64, cross: f64) -> LatLon {
        let cum = self.cumulative_lengths();
        let total = *cum.last().unwrap();
        let along = along.clamp(0.0, total);
        let mut i = cum.partition_point(|&c| c <= along).saturating_sub(1);
        i = i.min(self.polyline.len() - 2);
        let (a, b) = (self.polyline[i], self.polyline[i + 1]);
        let frame = LocalFrame::new(a);
        let (bx, by) = frame.to_xy(b);
        let len = bx.hypot(by);
        let frac = if cum[i + 1] > cum[i] {
            (along - cum[i]) / (cum[i + 1] - cum[i])
        } else {
            0.0
        };
        let (ux, uy) = if len > 0.0 { (bx / len, by / len) } else { (0.0, 1.0) };
        // left normal of (ux, uy) in an east/north frame
        let (nx, ny) = (-uy, ux);
        frame.to_latlon(bx * frac + nx * cross, by * frac + ny * cross)
    }

    /// Lateral centre offset of a lane, positive toward the left edge.
    pub fn lane_offset(&self, lane: u32, lane_width: f64) -> f64 {
        ((self.lane_count as f64 + 1.0) / 2.0 - lane as f64) * lane_width
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoadMap {
    pub segments: Vec<RoadSegment>,
}

impl RoadMap {
    pub fn new(segments: Vec<RoadSegment>) -> Result<Self> {
        let map = RoadMap { segments };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeMap::new();
        for s in &self.segments {
            s.validate()?;
            if seen.insert(s.id.clone(), ()).is_some() {
                return Err(Error::InvalidRoad(format!("duplicate segment id {}", s.id)));
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &SegmentId) -> Option<&RoadSegment> {
        self.segments.iter().find(|s| &s.id == id)
    }

    pub fn lane_count(&self, id: &SegmentId) -> Option<u32> {
        self.get(id).map(|s| s.lane_count)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("#lanequest-map v1\n");
        for s in &self.segments {
            write!(out, "R\t{}\t{}\t{}", s.id, s.lane_count, s.polyline.len()).unwrap();
            for p in &s.polyline {
                write!(out, "\t{}\t{}", p.lat, p.lon).unwrap();
            }
            out.push('\n');
        }
        for s in &self.segments {
            for x in &s.special_lanes {
                writeln!(
                    out,
                    "X\t{}\t{}\t{}\t{}",
                    s.id,
                    x.kind.as_str(),
                    x.side.as_str(),
                    x.position_m
                )
                .unwrap();
            }
        }
        out
    }

    /// Parses `R`/`X` records; other record types are rejected unless
    /// `allow_foreign` is set, in which case they are skipped (used when a
    /// map is embedded in a scenario file).
    pub fn parse_records(text: &str, allow_foreign: bool) -> Result<Self> {
        let mut segments: Vec<RoadSegment> = Vec::new();
        let mut specials = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            match f[0] {
                "R" => {
                    if f.len() < 4 {
                        return Err(Error::parse(lineno, "R record needs id, lanes, vertex count"));
                    }
                    let lanes: u32 = num(f[2], lineno)?;
                    let count: usize = num(f[3], lineno)?;
                    if f.len() != 4 + 2 * count {
                        return Err(Error::parse(
                            lineno,
                            format!("R record declares {count} vertices but has {} fields", f.len()),
                        ));
                    }
                    let polyline = (0..count)
                        .map(|k| Ok(LatLon::new(num(f[4 + 2 * k], lineno)?, num(f[5 + 2 * k], lineno)?)))
                        .collect::<Result<Vec<_>>>()?;
                    let seg = RoadSegment {
                        id: SegmentId::new(f[1]),
                        polyline,
                        lane_count: lanes,
                        special_lanes: Vec::new(),
                    };
                    seg.validate().map_err(|e| Error::parse(lineno, e.to_string()))?;
                    segments.push(seg);
                }
                "X" => {
                    if f.len() != 5 {
                        return Err(Error::parse(lineno, "X record needs 4 fields"));
                    }
                    let kind = f[2].parse::<SpecialKind>().map_err(|e| Error::parse(lineno, e))?;
                    let side = f[3].parse::<Side>().map_err(|e| Error::parse(lineno, e))?;
                    let position_m = num(f[4], lineno)?;
                    specials.push((lineno, SegmentId::new(f[1]), SpecialLane { kind, side, position_m }));
                }
                _ if allow_foreign => {}
                other => return Err(Error::parse(lineno, format!("unknown map record {other:?}"))),
            }
        }
        for (lineno, id, x) in specials {
            let seg = segments
                .iter_mut()
                .find(|s| s.id == id)
                .ok_or_else(|| Error::parse(lineno, format!("X record references unknown segment {id}")))?;
            seg.special_lanes.push(x);
        }
        RoadMap::new(segments)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_records(&text, false)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn num<T: FromStr>(s: &str, line: usize) -> Result<T> {
    s.parse::<T>()
        .map_err(|_| Error::parse(line, format!("cannot parse {s:?} as a number")))
}

fn finite(v: f64, line: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::parse(line, format!("non-finite value {v}")))
    }
}

impl DriveTrace {
    /// Structural checks that need no map: monotone time, finite values,
    /// sane fixes and positive lane labels.
    pub fn validate(&self) -> Result<()> {
        fn increasing<T>(items: &[T], t: impl Fn(&T) -> f64, what: &str) -> Result<()> {
            let mut prev = f64::NEG_INFINITY;
            for (i, it) in items.iter().enumerate() {
                let ti = t(it);
                if !ti.is_finite() || ti < 0.0 {
                    return Err(Error::Validation(format!("{what} {i} has invalid time {ti}")));
                }
                if ti <= prev {
                    return Err(Error::Validation(format!(
                        "{what} {i} at t={ti} does not follow t={prev}"
                    )));
                }
                prev = ti;
            }
            Ok(())
        }
        increasing(&self.samples, |s| s.t, "sample")?;
        increasing(&self.fixes, |f| f.t, "fix")?;
        increasing(&self.ground_truth, |g| g.t, "label")?;
        for (i, s) in self.samples.iter().enumerate() {
            let all = s.accel.iter().chain(&s.gyro).chain(&s.mag).chain(std::iter::once(&s.yaw));
            if all.into_iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("sample {i} has a non-finite component")));
            }
        }
        for (i, f) in self.fixes.iter().enumerate() {
            if !(f.accuracy > 0.0) || !f.position().is_valid() {
                return Err(Error::Validation(format!("fix {i} is out of range")));
            }
        }
        if let Some(g) = self.ground_truth.iter().find(|g| g.lane == 0) {
            return Err(Error::Validation(format!("lane label 0 at t={}", g.t)));
        }
        Ok(())
    }

    /// Checks lane labels against the lane count of the segment driven at
    /// that time (segment of the latest fix at or before the label).
    pub fn validate_against(&self, map: &RoadMap) -> Result<()> {
        self.validate()?;
        for g in &self.ground_truth {
            let idx = self.fixes.partition_point(|f| f.t <= g.t);
            let fix = if idx == 0 { self.fixes.first() } else { self.fixes.get(idx - 1) };
            let Some(fix) = fix else { continue };
            let n = map.lane_count(&fix.segment).ok_or_else(|| {
                Error::Validation(format!("fix references unknown segment {}", fix.segment))
            })?;
            if g.lane > n {
                return Err(Error::Validation(format!(
                    "lane label {} at t={} exceeds {} lanes of segment {}",
                    g.lane, g.t, n, fix.segment
                )));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(64 + self.samples.len() * 120);
        out.push_str(TRACE_HEADER);
        out.push('\n');
        for s in &self.samples {
            let [ax, ay, az] = s.accel;
            let [gx, gy, gz] = s.gyro;
            let [mx, my, mz] = s.mag;
            writeln!(
                out,
                "S\t{}\t{ax}\t{ay}\t{az}\t{gx}\t{gy}\t{gz}\t{mx}\t{my}\t{mz}\t{}",
                s.t, s.yaw
            )
            .unwrap();
        }
        for f in &self.fixes {
            writeln!(out, "F\t{}\t{}\t{}\t{}\t{}", f.t, f.lat, f.lon, f.accuracy, f.segment).unwrap();
        }
        for g in &self.ground_truth {
            writeln!(out, "G\t{}\t{}", g.t, g.lane).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end() == TRACE_HEADER => {}
            _ => return Err(Error::parse(1, format!("missing header {TRACE_HEADER:?}"))),
        }
        let mut trace = DriveTrace::default();
        for (i, line) in lines {
            let lineno = i + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let want = |n: usize| -> Result<()> {
                if f.len() == n {
                    Ok(())
                } else {
                    Err(Error::parse(lineno, format!("{} record needs {} fields, got {}", f[0], n, f.len())))
                }
            };
            let g = |k: usize| -> Result<f64> { finite(num(f[k], lineno)?, lineno) };
            match f[0] {
                "S" => {
                    want(12)?;
                    trace.samples.push(SensorSample {
                        t: g(1)?,
                        accel: [g(2)?, g(3)?, g(4)?],
                        gyro: [g(5)?, g(6)?, g(7)?],
                        mag: [g(8)?, g(9)?, g(10)?],
                        yaw: g(11)?,
                    });
                }
                "F" => {
                    want(6)?;
                    trace.fixes.push(LocationFix {
                        t: g(1)?,
                        lat: g(2)?,
                        lon: g(3)?,
                        accuracy: g(4)?,
                        segment: SegmentId::new(f[5]),
                    });
                }
                "G" => {
                    want(3)?;
                    trace.ground_truth.push(LaneLabel {
                        t: g(1)?,
                        lane: num(f[2], lineno)?,
                    });
                }
                other => return Err(Error::parse(lineno, format!("unknown record type {other:?}"))),
            }
        }
        trace.validate()?;
        Ok(trace)
    }
}

pub fn parse_trace(path: impl AsRef<Path>) -> Result<DriveTrace> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DriveTrace::from_text(&text)
}

pub fn write_trace(trace: &DriveTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    trace.validate()?;
    fs::write(path, trace.to_text()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_sample_section_parses() {
        let t = DriveTrace::from_text("#lanequest-trace v1\n").unwrap();
        assert!(t.samples.is_empty() && t.fixes.is_empty());
        assert_eq!(t.to_text(), "#lanequest-trace v1\n");
    }

    #[test]
    fn zero_sample() {
        let text = "#lanequest-trace v1\nS\t0.00\t0\t0\t0\t0\t0\t0\t0\t0\t0\t0\n";
        let t = DriveTrace::from_text(text).unwrap();
        assert_eq!(t.samples.len(), 1);
        assert_eq!(t.samples[0], SensorSample::default());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "#lanequest-trace v1\n# comment\nS\t0\t1\t2\n";
        match DriveTrace::from_text(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_monotone_time_rejected() {
        let text = "#lanequest-trace v1\nG\t1\t1\nG\t1\t2\n";
        assert!(matches!(DriveTrace::from_text(text), Err(Error::Validation(_))));
    }

    #[test]
    fn lane_label_out_of_range() {
        let seg = RoadSegment::new("a", vec![LatLon::new(0.0, 0.0), LatLon::new(0.0, 0.01)], 3).unwrap();
        let map = RoadMap::new(vec![seg]).unwrap();
        let trace = DriveTrace {
            samples: vec![],
            fixes: vec![LocationFix { t: 0.0, lat: 0.0, lon: 0.0, accuracy: 5.0, segment: SegmentId::new("a") }],
            ground_truth: vec![LaneLabel { t: 0.5, lane: 4 }],
        };
        assert!(trace.validate_against(&map).is_err());
    }

    #[test]
    fn map_round_trip() {
        let mut seg = RoadSegment::new(
            "main",
            vec![LatLon::new(31.2, 29.9), LatLon::new(31.2, 29.95), LatLon::new(31.21, 29.96)],
            4,
        )
        .unwrap();
        seg.special_lanes.push(SpecialLane { kind: SpecialKind::Exit, side: Side::Right, position_m: 1200.5 });
        let map = RoadMap::new(vec![seg]).unwrap();
        let back = RoadMap::parse_records(&map.to_text(), false).unwrap();
        assert_eq!(back, map);
    }

    #[test]
    fn point_at_offsets_to_the_left() {
        // eastbound road: left is north
        let seg = RoadSegment::new("e", vec![LatLon::new(0.0, 0.0), LatLon::new(0.0, 0.01)], 2).unwrap();
        let p = seg.point_at(100.0, 3.0);
        assert!(p.lat > 0.0);
        assert!((haversine(seg.polyline[0], p) - 100.0f64.hypot(3.0)).abs() < 0.01);
    }
}
