//! Synthetic drives with ground-truth lanes.
//!
//! A trip follows a route of connected segments. Road features are placed at
//! route positions (metres from the start of the route); maneuvers change the
//! heading but not the geography, so the car always advances along the
//! route polyline. Samples are emitted directly in the car frame.
//!
//! Scenario file, one directive per line (`#` starts a comment):
//!
//! ```text
//! #lanequest-scenario v1
//! seed 7
//! rate 50
//! speed 15
//! noise <accel> <gyro> <mag> <yawDeg> <gpsM>
//! errors <missedFraction> <swervesPerKm>
//! start lane 2 | random | parked | merge | mixed
//! lanechanges <perKm>
//! exits <takeProbability>
//! route seg-a seg-b
//! pothole <at> <lane>
//! bump <at>
//! curve <at> <sweepDeg> <r1> .. <rn>
//! tunnel <entry> <exit> <v1> .. <vn>
//! turn <at> left|right
//! uturn <at>
//! stop <at> <seconds>
//! lanechange <at> left|right
//! R ... / X ...      (road map records)
//! ```

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filter::LaneBelief;
use crate::geo::{LatLon, LocalFrame};
use crate::trace::{num, DriveTrace, LaneLabel, LocationFix, RoadMap, RoadSegment, SegmentId, SensorSample, Side, SpecialKind};

pub const SCENARIO_HEADER: &str = "#lanequest-scenario v1";
pub const TRUTH_HEADER: &str = "#lanequest-truth v1";
pub const LANE_WIDTH_M: f64 = 3.5;
pub const GRAVITY: f64 = 9.81;

const TURN_SECONDS: f64 = 6.0;
const UTURN_SECONDS: f64 = 10.0;
const LONG_STOP_S: f64 = 180.0;
const BRAKE: f64 = 2.0;
const PLAN_ATTEMPTS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub enum Feature {
    Pothole { at_m: f64, lane: u32 },
    Bump { at_m: f64 },
    /// Right-hand curve; radii per lane, lane 1 (outer) first.
    Curve { at_m: f64, sweep_deg: f64, radii: Vec<f64> },
    /// Extra x-magnetometer variance per lane, µT².
    Tunnel { entry_m: f64, exit_m: f64, variances: Vec<f64> },
    Turn { at_m: f64, side: Side },
    UTurn { at_m: f64 },
    Stop { at_m: f64, duration_s: f64 },
    LaneChange { at_m: f64, side: Side },
}

impl Feature {
    /// The same feature moved `d` metres further along the route.
    pub fn shifted(&self, d: f64) -> Feature {
        let mut f = self.clone();
        match &mut f {
            Feature::Pothole { at_m, .. }
            | Feature::Bump { at_m }
            | Feature::Curve { at_m, .. }
            | Feature::Turn { at_m, .. }
            | Feature::UTurn { at_m }
            | Feature::Stop { at_m, .. }
            | Feature::LaneChange { at_m, .. } => *at_m += d,
            Feature::Tunnel { entry_m, exit_m, .. } => {
                *entry_m += d;
                *exit_m += d;
            }
        }
        f
    }

    fn at(&self) -> f64 {
        match self {
            Feature::Pothole { at_m, .. }
            | Feature::Bump { at_m }
            | Feature::Curve { at_m, .. }
            | Feature::Turn { at_m, .. }
            | Feature::UTurn { at_m }
            | Feature::Stop { at_m, .. }
            | Feature::LaneChange { at_m, .. } => *at_m,
            Feature::Tunnel { entry_m, .. } => *entry_m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StartMode {
    Lane(u32),
    Random,
    /// Long stationary period at the right curb before driving off.
    Parked,
    /// Joins the road from the first merge lane of the route.
    Merge,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub accel: f64,
    pub gyro: f64,
    pub mag: f64,
    pub yaw_deg: f64,
    pub gps_m: f64,
}

impl NoiseModel {
    pub fn zero() -> Self {
        Self {
            accel: 0.0,
            gyro: 0.0,
            mag: 0.0,
            yaw_deg: 0.0,
            gps_m: 0.0,
        }
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            accel: 0.05,
            gyro: 0.004,
            mag: 0.3,
            yaw_deg: 0.3,
            gps_m: 5.0,
        }
    }
}

/// Driver behaviour that produces detector errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRates {
    /// Fraction of lane changes driven too gently to be detected.
    pub missed_fraction: f64,
    /// In-lane swerves per km that look like lane changes.
    pub swerves_per_km: f64,
}

impl Default for ErrorRates {
    fn default() -> Self {
        Self {
            missed_fraction: 0.05,
            swerves_per_km: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub map: RoadMap,
    /// Segments driven in order; all map segments in map order when empty.
    pub route: Vec<SegmentId>,
    pub features: Vec<Feature>,
    pub seed: u64,
    pub rate_hz: f64,
    pub speed_mps: f64,
    /// Relative per-trip cruise speed spread.
    pub speed_jitter: f64,
    pub start: StartMode,
    pub lane_changes_per_km: f64,
    pub exit_probability: f64,
    /// Per-trip driven distance range in metres; whole route when `None`.
    /// Trips with a random start lane also begin at a random position.
    pub trip_length_m: Option<(f64, f64)>,
    pub noise: NoiseModel,
    pub errors: ErrorRates,
}

impl Scenario {
    pub fn new(map: RoadMap) -> Self {
        Self {
            map,
            route: Vec::new(),
            features: Vec::new(),
            seed: 0,
            rate_hz: 50.0,
            speed_mps: 15.0,
            speed_jitter: 0.0,
            start: StartMode::Lane(1),
            lane_changes_per_km: 0.0,
            exit_probability: 0.0,
            trip_length_m: None,
            noise: NoiseModel::default(),
            errors: ErrorRates::default(),
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn route_ids(&self) -> Vec<SegmentId> {
        if self.route.is_empty() {
            self.map.segments.iter().map(|s| s.id.clone()).collect()
        } else {
            self.route.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Scenario(m));
        self.map.validate()?;
        let route = Route::new(&self.map, &self.route_ids())?;
        if !(self.rate_hz > 0.0) || !(self.speed_mps > 0.0) {
            return bad("rate and speed must be positive".into());
        }
        if !(0.0..1.0).contains(&self.speed_jitter) || !(0.0..=1.0).contains(&self.exit_probability) {
            return bad("speed jitter or exit probability out of range".into());
        }
        if !(0.0..=1.0).contains(&self.errors.missed_fraction) || self.errors.swerves_per_km < 0.0 || self.lane_changes_per_km < 0.0 {
            return bad("error rates must be non-negative fractions".into());
        }
        if let Some((lo, hi)) = self.trip_length_m {
            if !(lo > 0.0 && hi >= lo) {
                return bad(format!("trip length range {lo}..{hi} is empty"));
            }
        }
        let n = &self.noise;
        if [n.accel, n.gyro, n.mag, n.yaw_deg, n.gps_m].iter().any(|&x| !(x >= 0.0)) {
            return bad("noise levels must be non-negative".into());
        }
        let len = route.length();
        for f in &self.features {
            let at = f.at();
            if !(0.0..=len).contains(&at) {
                return bad(format!("feature at {at} m lies outside the {len:.1} m route"));
            }
            let lanes = route.lane_count_at(at);
            match f {
                Feature::Pothole { lane, .. } if *lane == 0 || *lane > lanes => {
                    return bad(format!("pothole lane {lane} outside 1..={lanes}"));
                }
                Feature::Curve { radii, sweep_deg, .. } => {
                    if radii.len() != lanes as usize {
                        return bad(format!("curve at {at} m needs {lanes} radii, got {}", radii.len()));
                    }
                    if radii.windows(2).any(|w| w[1] >= w[0]) || radii.iter().any(|&r| !(r > 0.0)) {
                        return bad(format!("curve radii at {at} m must be positive and strictly decreasing"));
                    }
                    if !(*sweep_deg > 0.0 && *sweep_deg < 180.0) {
                        return bad(format!("curve sweep {sweep_deg} out of range"));
                    }
                }
                Feature::Tunnel { entry_m, exit_m, variances } => {
                    if !(exit_m > entry_m) || *exit_m > len {
                        return bad(format!("tunnel {entry_m}..{exit_m} is empty or off the route"));
                    }
                    if variances.len() != lanes as usize || variances.iter().any(|&v| !(v >= 0.0)) {
                        return bad(format!("tunnel at {entry_m} m needs {lanes} non-negative variances"));
                    }
                }
                Feature::Stop { duration_s, .. } if !(*duration_s > 0.0) => {
                    return bad("stop duration must be positive".into());
                }
                _ => {}
            }
        }
        if let StartMode::Lane(l) = self.start {
            let n0 = route.lane_count_at(0.0);
            if l == 0 || l > n0 {
                return bad(format!("start lane {l} outside 1..={n0}"));
            }
            // scripted lane changes must stay on the road
            let mut lane = l as i64;
            let mut scripted: Vec<(f64, Side)> = self
                .features
                .iter()
                .filter_map(|f| match f {
                    Feature::LaneChange { at_m, side } => Some((*at_m, *side)),
                    _ => None,
                })
                .collect();
            scripted.sort_by(|a, b| a.0.total_cmp(&b.0));
            for (at, side) in scripted {
                lane += if side == Side::Left { -1 } else { 1 };
                let n = route.lane_count_at(at) as i64;
                if lane < 1 || lane > n {
                    return bad(format!("scripted {} lane change at {at} m leaves the road", side.as_str()));
                }
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(SCENARIO_HEADER);
        out.push('\n');
        let n = &self.noise;
        writeln!(out, "seed {}", self.seed).unwrap();
        writeln!(out, "rate {}", self.rate_hz).unwrap();
        writeln!(out, "speed {}", self.speed_mps).unwrap();
        writeln!(out, "jitter {}", self.speed_jitter).unwrap();
        writeln!(out, "noise {} {} {} {} {}", n.accel, n.gyro, n.mag, n.yaw_deg, n.gps_m).unwrap();
        writeln!(out, "errors {} {}", self.errors.missed_fraction, self.errors.swerves_per_km).unwrap();
        match self.start {
            StartMode::Lane(l) => writeln!(out, "start lane {l}").unwrap(),
            StartMode::Random => writeln!(out, "start random").unwrap(),
            StartMode::Parked => writeln!(out, "start parked").unwrap(),
            StartMode::Merge => writeln!(out, "start merge").unwrap(),
            StartMode::Mixed => writeln!(out, "start mixed").unwrap(),
        }
        writeln!(out, "lanechanges {}", self.lane_changes_per_km).unwrap();
        writeln!(out, "exits {}", self.exit_probability).unwrap();
        if let Some((lo, hi)) = self.trip_length_m {
            writeln!(out, "trip {lo} {hi}").unwrap();
        }
        if !self.route.is_empty() {
            let ids: Vec<&str> = self.route.iter().map(|s| s.as_str()).collect();
            writeln!(out, "route {}", ids.join(" ")).unwrap();
        }
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        for f in &self.features {
            match f {
                Feature::Pothole { at_m, lane } => writeln!(out, "pothole {at_m} {lane}"),
                Feature::Bump { at_m } => writeln!(out, "bump {at_m}"),
                Feature::Curve { at_m, sweep_deg, radii } => writeln!(out, "curve {at_m} {sweep_deg} {}", join(radii)),
                Feature::Tunnel { entry_m, exit_m, variances } => {
                    writeln!(out, "tunnel {entry_m} {exit_m} {}", join(variances))
                }
                Feature::Turn { at_m, side } => writeln!(out, "turn {at_m} {}", side.as_str()),
                Feature::UTurn { at_m } => writeln!(out, "uturn {at_m}"),
                Feature::Stop { at_m, duration_s } => writeln!(out, "stop {at_m} {duration_s}"),
                Feature::LaneChange { at_m, side } => writeln!(out, "lanechange {at_m} {}", side.as_str()),
            }
            .unwrap();
        }
        // the map block carries its own header line, which reads as a comment here
        out.push_str(&self.map.to_text());
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end() == SCENARIO_HEADER => {}
            _ => return Err(Error::parse(1, format!("missing header {SCENARIO_HEADER:?}"))),
        }
        let map = RoadMap::parse_records(text, true)?;
        let mut sc = Scenario::new(map);
        for (i, line) in lines {
            let lineno = i + 1;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.is_empty() || f[0].starts_with('#') {
                continue;
            }
            let want = |k: usize| -> Result<()> {
                if f.len() == k {
                    Ok(())
                } else {
                    Err(Error::parse(lineno, format!("{} takes {} fields", f[0], k - 1)))
                }
            };
            let side = |s: &str| s.parse::<Side>().map_err(|e| Error::parse(lineno, e));
            let floats = |from: usize| f[from..].iter().map(|s| num::<f64>(s, lineno)).collect::<Result<Vec<_>>>();
            match f[0] {
                "R" | "X" => {}
                "seed" => {
                    want(2)?;
                    sc.seed = num(f[1], lineno)?;
                }
                "rate" => {
                    want(2)?;
                    sc.rate_hz = num(f[1], lineno)?;
                }
                "speed" => {
                    want(2)?;
                    sc.speed_mps = num(f[1], lineno)?;
                }
                "jitter" => {
                    want(2)?;
                    sc.speed_jitter = num(f[1], lineno)?;
                }
                "noise" => {
                    want(6)?;
                    let v = floats(1)?;
                    sc.noise = NoiseModel {
                        accel: v[0],
                        gyro: v[1],
                        mag: v[2],
                        yaw_deg: v[3],
                        gps_m: v[4],
                    };
                }
                "errors" => {
                    want(3)?;
                    sc.errors = ErrorRates {
                        missed_fraction: num(f[1], lineno)?,
                        swerves_per_km: num(f[2], lineno)?,
                    };
                }
                "start" => {
                    sc.start = match (f.get(1).copied(), f.len()) {
                        (Some("lane"), 3) => StartMode::Lane(num(f[2], lineno)?),
                        (Some("random"), 2) => StartMode::Random,
                        (Some("parked"), 2) => StartMode::Parked,
                        (Some("merge"), 2) => StartMode::Merge,
                        (Some("mixed"), 2) => StartMode::Mixed,
                        _ => return Err(Error::parse(lineno, "start takes lane <n>|random|parked|merge|mixed")),
                    }
                }
                "lanechanges" => {
                    want(2)?;
                    sc.lane_changes_per_km = num(f[1], lineno)?;
                }
                "exits" => {
                    want(2)?;
                    sc.exit_probability = num(f[1], lineno)?;
                }
                "trip" => {
                    want(3)?;
                    sc.trip_length_m = Some((num(f[1], lineno)?, num(f[2], lineno)?));
                }
                "route" => sc.route = f[1..].iter().map(|s| SegmentId::new(*s)).collect(),
                "pothole" => {
                    want(3)?;
                    sc.features.push(Feature::Pothole {
                        at_m: num(f[1], lineno)?,
                        lane: num(f[2], lineno)?,
                    });
                }
                "bump" => {
                    want(2)?;
                    sc.features.push(Feature::Bump { at_m: num(f[1], lineno)? });
                }
                "curve" => {
                    if f.len() < 4 {
                        return Err(Error::parse(lineno, "curve takes <at> <sweepDeg> <r1> .. <rn>"));
                    }
                    sc.features.push(Feature::Curve {
                        at_m: num(f[1], lineno)?,
                        sweep_deg: num(f[2], lineno)?,
                        radii: floats(3)?,
                    });
                }
                "tunnel" => {
                    if f.len() < 4 {
                        return Err(Error::parse(lineno, "tunnel takes <entry> <exit> <v1> .. <vn>"));
                    }
                    sc.features.push(Feature::Tunnel {
                        entry_m: num(f[1], lineno)?,
                        exit_m: num(f[2], lineno)?,
                        variances: floats(3)?,
                    });
                }
                "turn" => {
                    want(3)?;
                    sc.features.push(Feature::Turn {
                        at_m: num(f[1], lineno)?,
                        side: side(f[2])?,
                    });
                }
                "uturn" => {
                    want(2)?;
                    sc.features.push(Feature::UTurn { at_m: num(f[1], lineno)? });
                }
                "stop" => {
                    want(3)?;
                    sc.features.push(Feature::Stop {
                        at_m: num(f[1], lineno)?,
                        duration_s: num(f[2], lineno)?,
                    });
                }
                "lanechange" => {
                    want(3)?;
                    sc.features.push(Feature::LaneChange {
                        at_m: num(f[1], lineno)?,
                        side: side(f[2])?,
                    });
                }
                other => return Err(Error::parse(lineno, format!("unknown scenario directive {other:?}"))),
            }
        }
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Segments laid end to end along a straight line heading east from
/// `origin`; lengths in metres.
pub fn straight_road(origin: LatLon, sections: &[(f64, u32)]) -> Result<RoadMap> {
    let frame = LocalFrame::new(origin);
    let mut x = 0.0;
    let mut segments = Vec::new();
    for (i, &(len, lanes)) in sections.iter().enumerate() {
        let a = frame.to_latlon(x, 0.0);
        let b = frame.to_latlon(x + len, 0.0);
        segments.push(RoadSegment::new(format!("s{:02}", i + 1), vec![a, b], lanes)?);
        x += len;
    }
    RoadMap::new(segments)
}

/// Route geometry: segment offsets along the route.
#[derive(Debug, Clone)]
pub struct Route<'a> {
    segments: Vec<&'a RoadSegment>,
    starts: Vec<f64>,
    lengths: Vec<f64>,
}

impl<'a> Route<'a> {
    pub fn new(map: &'a RoadMap, ids: &[SegmentId]) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Scenario("empty route".into()));
        }
        let mut segments = Vec::new();
        let mut starts = Vec::new();
        let mut lengths = Vec::new();
        let mut acc = 0.0;
        for id in ids {
            let s = map
                .get(id)
                .ok_or_else(|| Error::Scenario(format!("route references unknown segment {id}")))?;
            let len = s.length();
            segments.push(s);
            starts.push(acc);
            lengths.push(len);
            acc += len;
        }
        Ok(Self { segments, starts, lengths })
    }

    pub fn length(&self) -> f64 {
        self.starts.last().unwrap() + self.lengths.last().unwrap()
    }

    fn index_at(&self, s: f64) -> usize {
        self.starts.partition_point(|&x| x <= s).saturating_sub(1)
    }

    pub fn segment_at(&self, s: f64) -> &'a RoadSegment {
        self.segments[self.index_at(s)]
    }

    pub fn lane_count_at(&self, s: f64) -> u32 {
        self.segment_at(s).lane_count
    }

    /// Position at route distance `s` with a lateral offset (left positive).
    pub fn point(&self, s: f64, cross: f64) -> LatLon {
        let i = self.index_at(s);
        self.segments[i].point_at(s - self.starts[i], cross)
    }

    /// Route positions of every merge/exit marker.
    pub fn specials(&self) -> Vec<(f64, SpecialKind, Side)> {
        let mut out = Vec::new();
        for (i, seg) in self.segments.iter().enumerate() {
            for x in &seg.special_lanes {
                out.push((self.starts[i] + x.position_m, x.kind, x.side));
            }
        }
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        out
    }

    /// Segment boundaries (route positions) after the first segment.
    pub fn boundaries(&self) -> &[f64] {
        &self.starts[1..]
    }
}

/// Lane index on a road with `n_new` lanes that the proportional
/// re-projection assigns to lane `lane` of `n_old`.
pub fn map_lane(lane: u32, n_old: u32, n_new: u32) -> u32 {
    if n_old == n_new {
        return lane;
    }
    let mut p = vec![0.0; n_old as usize];
    p[lane as usize - 1] = 1.0;
    LaneBelief::from_probs(p)
        .and_then(|b| b.reproject(n_new))
        .map(|b| b.argmax())
        .unwrap_or(lane.min(n_new))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TruthKind {
    LaneChange(Side),
    /// Lane change driven too gently for the detector.
    GentleLaneChange(Side),
    /// In-lane swerve with a lane-change-like signature.
    Swerve(Side),
    Turn(Side),
    UTurn,
    Curve { radius_m: f64 },
    Tunnel { variance: f64 },
    Pothole,
    Bump,
    Stop { duration_s: f64 },
    Merge { side: Side, taken: bool },
    Exit { side: Side, taken: bool },
}

impl TruthKind {
    fn token(&self) -> String {
        match self {
            TruthKind::LaneChange(s) => format!("lanechange-{}", s.as_str()),
            TruthKind::GentleLaneChange(s) => format!("gentle-{}", s.as_str()),
            TruthKind::Swerve(s) => format!("swerve-{}", s.as_str()),
            TruthKind::Turn(s) => format!("turn-{}", s.as_str()),
            TruthKind::UTurn => "uturn".into(),
            TruthKind::Curve { .. } => "curve".into(),
            TruthKind::Tunnel { .. } => "tunnel".into(),
            TruthKind::Pothole => "pothole".into(),
            TruthKind::Bump => "bump".into(),
            TruthKind::Stop { .. } => "stop".into(),
            TruthKind::Merge { side, taken } => {
                format!("merge-{}{}", side.as_str(), if *taken { "" } else { "-passed" })
            }
            TruthKind::Exit { side, taken } => {
                format!("exit-{}{}", side.as_str(), if *taken { "" } else { "-passed" })
            }
        }
    }

    fn value(&self) -> Option<f64> {
        match self {
            TruthKind::Curve { radius_m } => Some(*radius_m),
            TruthKind::Tunnel { variance } => Some(*variance),
            TruthKind::Stop { duration_s } => Some(*duration_s),
            _ => None,
        }
    }

    fn parse(token: &str, value: Option<f64>, line: usize) -> Result<Self> {
        let need = |what: &str| value.ok_or_else(|| Error::parse(line, format!("{what} record needs a value")));
        let side = |s: &str| s.parse::<Side>().map_err(|e| Error::parse(line, e));
        let special = |rest: &str| -> Result<(Side, bool)> {
            match rest.strip_suffix("-passed") {
                Some(s) => Ok((side(s)?, false)),
                None => Ok((side(rest)?, true)),
            }
        };
        Ok(match token {
            "uturn" => TruthKind::UTurn,
            "curve" => TruthKind::Curve { radius_m: need("curve")? },
            "tunnel" => TruthKind::Tunnel { variance: need("tunnel")? },
            "pothole" => TruthKind::Pothole,
            "bump" => TruthKind::Bump,
            "stop" => TruthKind::Stop { duration_s: need("stop")? },
            _ => match token.split_once('-') {
                Some(("lanechange", s)) => TruthKind::LaneChange(side(s)?),
                Some(("gentle", s)) => TruthKind::GentleLaneChange(side(s)?),
                Some(("swerve", s)) => TruthKind::Swerve(side(s)?),
                Some(("turn", s)) => TruthKind::Turn(side(s)?),
                Some(("merge", rest)) => {
                    let (side, taken) = special(rest)?;
                    TruthKind::Merge { side, taken }
                }
                Some(("exit", rest)) => {
                    let (side, taken) = special(rest)?;
                    TruthKind::Exit { side, taken }
                }
                _ => return Err(Error::parse(line, format!("unknown truth kind {token:?}"))),
            },
        })
    }
}

/// A scripted occurrence as it happened in a trip.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthEvent {
    pub kind: TruthKind,
    pub start: f64,
    pub end: f64,
    /// True position at the middle of the event.
    pub location: LatLon,
    /// Lane at the start of the event.
    pub lane: u32,
    pub lane_count: u32,
}

impl TruthEvent {
    pub fn mid(&self) -> f64 {
        0.5 * (self.start + self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub labels: Vec<LaneLabel>,
    pub ledger: Vec<TruthEvent>,
}

impl GroundTruth {
    /// Lane at time `t`: the last label at or before `t`.
    pub fn lane_at(&self, t: f64) -> Option<u32> {
        let i = self.labels.partition_point(|l| l.t <= t);
        (i > 0).then(|| self.labels[i - 1].lane)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(TRUTH_HEADER);
        out.push('\n');
        for l in &self.labels {
            writeln!(out, "G\t{}\t{}", l.t, l.lane).unwrap();
        }
        for e in &self.ledger {
            write!(
                out,
                "T\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                e.kind.token(),
                e.start,
                e.end,
                e.location.lat,
                e.location.lon,
                e.lane,
                e.lane_count
            )
            .unwrap();
            if let Some(v) = e.kind.value() {
                write!(out, "\t{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end() == TRUTH_HEADER => {}
            _ => return Err(Error::parse(1, format!("missing header {TRUTH_HEADER:?}"))),
        }
        let mut truth = GroundTruth::default();
        for (i, line) in lines {
            let lineno = i + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            match (f[0], f.len()) {
                ("G", 3) => {
                    let t: f64 = num(f[1], lineno)?;
                    if truth.labels.last().is_some_and(|l| l.t >= t) || !(t >= 0.0) {
                        return Err(Error::parse(lineno, format!("label time {t} out of order")));
                    }
                    let lane: u32 = num(f[2], lineno)?;
                    if lane == 0 {
                        return Err(Error::parse(lineno, "lane label 0"));
                    }
                    truth.labels.push(LaneLabel { t, lane });
                }
                ("T", 8 | 9) => {
                    let value = f.get(8).map(|v| num(v, lineno)).transpose()?;
                    truth.ledger.push(TruthEvent {
                        kind: TruthKind::parse(f[1], value, lineno)?,
                        start: num(f[2], lineno)?,
                        end: num(f[3], lineno)?,
                        location: LatLon::new(num(f[4], lineno)?, num(f[5], lineno)?),
                        lane: num(f[6], lineno)?,
                        lane_count: num(f[7], lineno)?,
                    });
                }
                (kind, n) => return Err(Error::parse(lineno, format!("malformed {kind:?} record with {n} fields"))),
            }
        }
        Ok(truth)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum MoveKind {
    Normal,
    Gentle,
    Swerve,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Move {
    at: f64,
    side: Side,
    kind: MoveKind,
    /// Duration of the lateral maneuver, seconds.
    period: f64,
}

fn draw_move(rng: &mut ChaCha8Rng, at: f64, side: Side, kind: MoveKind) -> Move {
    let period = match kind {
        MoveKind::Normal => uniform(rng, 4.0, 7.0),
        MoveKind::Gentle => uniform(rng, 8.5, 10.0),
        MoveKind::Swerve => uniform(rng, 3.0, 4.0),
    };
    Move { at, side, kind, period }
}

/// Lane constraint at a route position.
#[derive(Debug, Clone, Copy)]
enum Need {
    Exactly(u32),
    Not(u32),
}

impl Need {
    fn nearest(self, lane: u32, n: u32) -> u32 {
        match self {
            Need::Exactly(l) => l,
            Need::Not(l) if l == lane => {
                if lane > 1 {
                    lane - 1
                } else {
                    (lane + 1).min(n)
                }
            }
            Need::Not(_) => lane,
        }
    }
}

struct TripPlan {
    start_s: f64,
    end_s: f64,
    start_lane: u32,
    initial_hold_s: f64,
    cruise: f64,
    moves: Vec<Move>,
    exits: Vec<(f64, Side, bool)>,
    merges: Vec<(f64, Side, bool)>,
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Lane just before route position `upto`, replaying lane changes and
/// lane-count changes in order; `None` when a change leaves the road.
fn replay(route: &Route, start_s: f64, start_lane: u32, moves: &[Move], upto: f64) -> Option<u32> {
    let mut lane = start_lane;
    let mut n = route.lane_count_at(start_s);
    let mut bounds = route.boundaries().iter().copied().filter(|&b| b > start_s && b < upto).peekable();
    for m in moves.iter().filter(|m| m.at < upto && m.kind != MoveKind::Swerve) {
        while let Some(b) = bounds.next_if(|&b| b <= m.at) {
            let nb = route.lane_count_at(b);
            lane = map_lane(lane, n, nb);
            n = nb;
        }
        lane = if m.side == Side::Left { lane.checked_sub(1)? } else { lane + 1 };
        if lane == 0 || lane > n {
            return None;
        }
    }
    for b in bounds {
        let nb = route.lane_count_at(b);
        lane = map_lane(lane, n, nb);
        n = nb;
    }
    Some(lane)
}

/// Route stretches occupied by scripted features, markers and lane-count
/// changes.
fn busy_stretches(sc: &Scenario, route: &Route) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = sc
        .features
        .iter()
        .filter_map(|f| {
            let at = f.at();
            Some(match f {
                Feature::Curve { sweep_deg, radii, .. } => (at, at + sweep_deg.to_radians() * radii[0]),
                Feature::Tunnel { entry_m, exit_m, .. } => (*entry_m, *exit_m),
                Feature::Turn { .. } | Feature::UTurn { .. } | Feature::Stop { .. } => (at - 50.0, at + 100.0),
                Feature::Pothole { .. } | Feature::Bump { .. } => (at - 10.0, at + 10.0),
                Feature::LaneChange { .. } => return None,
            })
        })
        .collect();
    out.extend(route.specials().iter().map(|&(p, _, _)| (p - 50.0, p + 50.0)));
    out.extend(route.boundaries().iter().map(|&b| (b - 30.0, b + 30.0)));
    out
}

/// Plans a trip, redrawing until every lane constraint holds.
fn plan_trip(sc: &Scenario, route: &Route, rng: &mut ChaCha8Rng) -> Result<TripPlan> {
    for _ in 0..PLAN_ATTEMPTS {
        if let Some(plan) = plan_attempt(sc, route, rng)? {
            return Ok(plan);
        }
    }
    Err(Error::Scenario("cannot place lane changes that satisfy the route's lane constraints".into()))
}

fn plan_attempt(sc: &Scenario, route: &Route, rng: &mut ChaCha8Rng) -> Result<Option<TripPlan>> {
    let len = route.length();
    let specials = route.specials();
    let mode = match sc.start {
        StartMode::Mixed => match rng.random_range(0..4) {
            0 | 1 => StartMode::Random,
            2 => StartMode::Parked,
            _ => StartMode::Merge,
        },
        m => m,
    };
    let first_merge = specials
        .iter()
        .find(|(p, k, _)| *k == SpecialKind::Merge && *p >= 200.0)
        .copied();
    let trip_len = sc.trip_length_m.map(|(lo, hi)| uniform(rng, lo, hi).min(len));
    let mut busy = busy_stretches(sc, route);
    // a trip starting or ending near a marker would look like it used the
    // special lane
    for &(p, k, _) in &specials {
        busy.push(match k {
            SpecialKind::Merge => (p - 200.0, p),
            SpecialKind::Exit => (p, p + 350.0),
        });
    }
    let random_s = match (mode, trip_len) {
        (StartMode::Random, Some(l)) => {
            let mut s = 0.0;
            for _ in 0..50 {
                s = uniform(rng, 0.0, len - l);
                if !busy.iter().any(|&(a, b)| s > a - 150.0 && s < b + 50.0) {
                    break;
                }
            }
            s
        }
        _ => 0.0,
    };
    let n0 = route.lane_count_at(random_s);
    let (start_s, start_lane, hold, merge_start) = match (mode, first_merge) {
        (StartMode::Lane(l), _) => (0.0, l, 3.0, None),
        (StartMode::Parked, _) => (0.0, n0, uniform(rng, 200.0, 260.0), None),
        (StartMode::Merge, Some((p, _, side))) => {
            let s = p - 200.0;
            (s, side.edge_lane(route.lane_count_at(s)), 3.0, Some(p))
        }
        _ => (random_s, rng.random_range(1..=n0), 3.0, None),
    };
    let cruise = sc.speed_mps * (1.0 + sc.speed_jitter * uniform(rng, -1.0, 1.0));

    // exits taken end the trip shortly after the marker
    let mut end_s = trip_len.map_or(len, |l| (start_s + l).min(len));
    for _ in 0..busy.len() {
        match busy.iter().find(|&&(a, b)| end_s < len && end_s > a - 50.0 && end_s < b + 50.0) {
            Some(&(a, _)) => end_s = a - 50.0,
            None => break,
        }
    }
    end_s = end_s.max(start_s + 1000.0).min(len);
    let mut exits = Vec::new();
    for &(p, k, side) in &specials {
        if k != SpecialKind::Exit || p <= start_s || p >= end_s {
            continue;
        }
        let taken = rng.random::<f64>() < sc.exit_probability;
        exits.push((p, side, taken));
        if taken {
            end_s = (p + 150.0).min(end_s);
            break;
        }
    }
    let merges: Vec<(f64, Side, bool)> = specials
        .iter()
        .filter(|(p, k, _)| *k == SpecialKind::Merge && *p > start_s && *p < end_s)
        .map(|&(p, _, side)| (p, side, merge_start == Some(p)))
        .collect();

    // lane constraints and the road stretches where a lane change must not
    // be in progress
    // metres of road covered by a maneuver, and the clear road kept between
    // two maneuvers
    let extent = |period: f64| period * cruise + 10.0;
    let clearance = 3.0 * cruise;
    let mut needs: Vec<(f64, Need)> = Vec::new();
    let mut forbidden: Vec<(f64, f64)> = vec![(start_s - 1.0, start_s + 60.0)];
    for f in &sc.features {
        let at = f.at();
        let n = route.lane_count_at(at);
        match f {
            Feature::Turn { side, .. } => {
                needs.push((at, Need::Exactly(side.edge_lane(n))));
                forbidden.push((at - 10.0, at + 8.0 * TURN_SECONDS + 20.0));
            }
            Feature::UTurn { .. } => {
                needs.push((at, Need::Exactly(1)));
                forbidden.push((at - 10.0, at + 6.0 * UTURN_SECONDS + 20.0));
            }
            Feature::Stop { duration_s, .. } => {
                if *duration_s >= LONG_STOP_S {
                    needs.push((at, Need::Exactly(n)));
                }
                forbidden.push((at - 70.0, at + 70.0));
            }
            Feature::Curve { sweep_deg, radii, .. } => {
                forbidden.push((at - 15.0, at + sweep_deg.to_radians() * radii[0] + 15.0));
            }
            Feature::Tunnel { entry_m, exit_m, .. } => forbidden.push((entry_m - 15.0, exit_m + 15.0)),
            Feature::Pothole { .. } | Feature::Bump { .. } => forbidden.push((at - 15.0, at + 15.0)),
            Feature::LaneChange { .. } => {}
        }
    }
    for &(p, side, taken) in &exits {
        let edge = side.edge_lane(route.lane_count_at(p));
        needs.push((p, if taken { Need::Exactly(edge) } else { Need::Not(edge) }));
        forbidden.push((p - 20.0, p + 20.0));
    }
    for &(p, side, taken) in &merges {
        let edge = side.edge_lane(route.lane_count_at(p));
        needs.push((p, if taken { Need::Exactly(edge) } else { Need::Not(edge) }));
        forbidden.push((p - 20.0, p + 20.0));
    }
    for &b in route.boundaries() {
        forbidden.push((b - 20.0, b + 20.0));
    }
    needs.retain(|(p, _)| *p > start_s && *p < end_s);
    needs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let is_forbidden = |s: f64, period: f64| forbidden.iter().any(|&(a, b)| s + extent(period) >= a && s <= b);
    let crowded = |s: f64, period: f64, moves: &[Move]| {
        moves
            .iter()
            .any(|m| s < m.at + extent(m.period) + clearance && m.at < s + extent(period) + clearance)
    };

    let mut moves: Vec<Move> = sc
        .features
        .iter()
        .filter_map(|f| match f {
            Feature::LaneChange { at_m, side } if *at_m > start_s && *at_m < end_s => Some((*at_m, *side)),
            _ => None,
        })
        .collect::<Vec<_>>()
        .into_iter()
        .map(|(at, side)| draw_move(rng, at, side, MoveKind::Normal))
        .collect();
    moves.sort_by(|a, b| a.at.total_cmp(&b.at));
    let lane_at = |moves: &[Move], upto: f64| replay(route, start_s, start_lane, moves, upto);
    if lane_at(&moves, end_s).is_none() {
        return Err(Error::Scenario("scripted lane changes leave the road".into()));
    }

    // Poisson change positions
    let mut random_at = Vec::new();
    if sc.lane_changes_per_km > 0.0 {
        let mut s = start_s;
        loop {
            s += -(1.0 - rng.random::<f64>()).ln() * 1000.0 / sc.lane_changes_per_km;
            if s >= end_s - extent(10.0) {
                break;
            }
            random_at.push(s);
        }
    }

    let gentle = |rng: &mut ChaCha8Rng| {
        if rng.random::<f64>() < sc.errors.missed_fraction {
            MoveKind::Gentle
        } else {
            MoveKind::Normal
        }
    };
    let insert = |moves: &mut Vec<Move>, m: Move| {
        let i = moves.partition_point(|x| x.at < m.at);
        moves.insert(i, m);
    };

    let mut lo = start_s;
    let mut ri = 0;
    for region in 0..=needs.len() {
        let (hi, need) = match needs.get(region) {
            Some(&(p, need)) => (p, Some(need)),
            None => (end_s, None),
        };
        let mut region_moves: Vec<f64> = Vec::new();
        while ri < random_at.len() && random_at[ri] < hi - extent(10.0) {
            let at = random_at[ri];
            ri += 1;
            let kind = gentle(rng);
            let mut m = draw_move(rng, at, Side::Left, kind);
            if at < lo || is_forbidden(at, m.period) || crowded(at, m.period, &moves) {
                continue;
            }
            let n = route.lane_count_at(at);
            let Some(lane) = lane_at(&moves, at) else { continue };
            if n < 2 {
                continue;
            }
            let side = if lane == 1 {
                Side::Right
            } else if lane == n {
                Side::Left
            } else if rng.random::<bool>() {
                Side::Left
            } else {
                Side::Right
            };
            m.side = side;
            insert(&mut moves, m);
            region_moves.push(at);
        }
        let Some(need) = need else { break };
        for _ in 0..16 {
            let Some(lane) = lane_at(&moves, hi) else { break };
            let target = need.nearest(lane, route.lane_count_at(hi));
            let k = lane.abs_diff(target) as usize;
            if k == 0 {
                break;
            }
            let side = if target < lane { Side::Left } else { Side::Right };
            let mut pending: Vec<Move> = (0..k)
                .map(|_| {
                    let kind = gentle(rng);
                    draw_move(rng, 0.0, side, kind)
                })
                .collect();
            // latest first, scanning back from the constraint
            let mut found: Vec<Move> = Vec::new();
            let mut s = hi - extent(pending[0].period) - 5.0;
            while !pending.is_empty() && s >= lo {
                let period = pending[0].period;
                let mut all = moves.clone();
                all.extend(found.iter().copied());
                if !is_forbidden(s, period) && !crowded(s, period, &all) {
                    let mut m = pending.remove(0);
                    m.at = s;
                    found.push(m);
                }
                s -= 10.0;
            }
            if !pending.is_empty() {
                if let Some(at) = region_moves.pop() {
                    moves.retain(|m| m.at != at);
                    continue;
                }
                return Ok(None);
            }
            let mut trial = moves.clone();
            for mut m in found {
                m.at = m.at.max(lo.max(start_s + 1.0));
                insert(&mut trial, m);
            }
            if lane_at(&trial, hi).is_none() {
                if let Some(at) = region_moves.pop() {
                    moves.retain(|m| m.at != at);
                    continue;
                }
                return Ok(None);
            }
            moves = trial;
        }
        lo = hi;
    }

    let satisfied = needs.iter().all(|&(p, need)| match (need, lane_at(&moves, p)) {
        (Need::Exactly(x), Some(l)) => x == l,
        (Need::Not(x), Some(l)) => x != l,
        (_, None) => false,
    });
    if !satisfied || lane_at(&moves, end_s).is_none() {
        return Ok(None);
    }
    // swerves
    if sc.errors.swerves_per_km > 0.0 {
        let mut s = start_s;
        loop {
            s += -(1.0 - rng.random::<f64>()).ln() * 1000.0 / sc.errors.swerves_per_km;
            if s >= end_s - 200.0 {
                break;
            }
            let side = if rng.random::<bool>() { Side::Left } else { Side::Right };
            let m = draw_move(rng, s, side, MoveKind::Swerve);
            if is_forbidden(s, m.period) || crowded(s, m.period, &moves) {
                continue;
            }
            moves.push(m);
        }
        moves.sort_by(|a, b| a.at.total_cmp(&b.at));
    }

    Ok(Some(TripPlan {
        start_s,
        end_s,
        start_lane,
        initial_hold_s: hold,
        cruise,
        moves,
        exits,
        merges,
    }))
}

/// Speed limit along the route sampled every `SPEED_GRID_M` metres.
const SPEED_GRID_M: f64 = 0.5;

fn speed_profile(sc: &Scenario, plan: &TripPlan) -> Vec<f64> {
    let cells = ((plan.end_s - plan.start_s) / SPEED_GRID_M).ceil() as usize + 2;
    let pos = |i: usize| plan.start_s + i as f64 * SPEED_GRID_M;
    let mut v = vec![plan.cruise; cells];
    let turn_speed = plan.cruise.min(8.0);
    let uturn_speed = plan.cruise.min(6.0);
    for f in &sc.features {
        let (a, b, lim) = match f {
            Feature::Turn { at_m, .. } => (at_m - 5.0, at_m + turn_speed * TURN_SECONDS + 5.0, turn_speed),
            Feature::UTurn { at_m } => (at_m - 5.0, at_m + uturn_speed * UTURN_SECONDS + 5.0, uturn_speed),
            Feature::Stop { at_m, .. } => (*at_m, *at_m, 0.0),
            _ => continue,
        };
        for (i, x) in v.iter_mut().enumerate() {
            let s = pos(i);
            if s >= a - SPEED_GRID_M / 2.0 && s <= b + SPEED_GRID_M / 2.0 {
                *x = x.min(lim);
            }
        }
    }
    v[0] = 0.0;
    for i in 1..cells {
        v[i] = v[i].min((v[i - 1].powi(2) + 2.0 * BRAKE * SPEED_GRID_M).sqrt());
    }
    for i in (0..cells - 1).rev() {
        v[i] = v[i].min((v[i + 1].powi(2) + 2.0 * BRAKE * SPEED_GRID_M).sqrt());
    }
    v
}

struct Impulse {
    t0: f64,
    amplitude: f64,
}

impl Impulse {
    fn value(&self, t: f64) -> f64 {
        let tau = t - self.t0;
        if !(0.0..0.8).contains(&tau) {
            return 0.0;
        }
        self.amplitude * (-tau / 0.12).exp() * (2.0 * PI * 10.0 * tau).sin()
    }
}

#[derive(Clone, Copy)]
struct Lateral {
    t0: f64,
    period: f64,
    /// +1 right, −1 left (sign of the felt x pattern).
    sign: f64,
    amplitude: f64,
    /// Lateral displacement fraction realised at the end, relative to the
    /// maneuver's own offset.
    offset_m: f64,
}

impl Lateral {
    fn accel(&self, t: f64) -> f64 {
        let tau = t - self.t0;
        if !(0.0..=self.period).contains(&tau) {
            return 0.0;
        }
        self.sign * self.amplitude * (2.0 * PI * tau / self.period).sin()
    }

    /// Leftward displacement so far.
    fn displacement(&self, t: f64) -> f64 {
        let tau = (t - self.t0).clamp(0.0, self.period);
        let u = tau / self.period;
        -self.sign * self.offset_m * (u - (2.0 * PI * u).sin() / (2.0 * PI))
    }

    fn done(&self, t: f64) -> bool {
        t > self.t0 + self.period
    }
}

fn lateral(t0: f64, period: f64, side: Side, offset_m: f64) -> Lateral {
    Lateral {
        t0,
        period,
        sign: if side == Side::Left { -1.0 } else { 1.0 },
        amplitude: 2.0 * PI * offset_m / (period * period),
        offset_m,
    }
}

/// Simulates one trip of the scenario with its own seed.
pub fn simulate(sc: &Scenario) -> Result<(DriveTrace, GroundTruth)> {
    sc.validate()?;
    let ids = sc.route_ids();
    let route = Route::new(&sc.map, &ids)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let plan = plan_trip(sc, &route, &mut rng)?;
    let profile = speed_profile(sc, &plan);
    let speed_limit = |s: f64| {
        let x = (s - plan.start_s) / SPEED_GRID_M;
        let i = (x.floor().max(0.0) as usize).min(profile.len() - 2);
        let w = (x - i as f64).clamp(0.0, 1.0);
        profile[i] * (1.0 - w) + profile[i + 1] * w
    };

    let dt = 1.0 / sc.rate_hz;
    let std = |s: f64| Normal::new(0.0, s).expect("non-negative sigma");
    let (na, ng, nm, ny) = (std(sc.noise.accel), std(sc.noise.gyro), std(sc.noise.mag), std(sc.noise.yaw_deg));
    let gps = std(sc.noise.gps_m);
    let mag_base = [20.0, 5.0, -40.0];
    let mut heading = uniform(&mut rng, 0.0, 2.0 * PI);

    let mut stops: Vec<(f64, f64)> = sc
        .features
        .iter()
        .filter_map(|f| match f {
            Feature::Stop { at_m, duration_s } if *at_m > plan.start_s && *at_m < plan.end_s => Some((*at_m, *duration_s)),
            _ => None,
        })
        .collect();
    stops.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut stop_i = 0;

    let mut feats: Vec<&Feature> = sc.features.iter().filter(|f| !matches!(f, Feature::LaneChange { .. } | Feature::Stop { .. })).collect();
    feats.sort_by(|a, b| a.at().total_cmp(&b.at()));
    let mut feat_i = feats.partition_point(|f| f.at() < plan.start_s);

    let mut trace = DriveTrace::default();
    let mut truth = GroundTruth::default();
    let mut lane = plan.start_lane;
    let mut n_cur = route.lane_count_at(plan.start_s);
    truth.labels.push(LaneLabel { t: 0.0, lane });

    let mut t = 0.0;
    let mut s = plan.start_s;
    let mut v = 0.0;
    let mut hold_until = plan.initial_hold_s;
    let mut holding_stop: Option<usize> = None;
    let mut move_i = 0;
    let mut lat_active: Vec<Lateral> = Vec::new();
    let mut lat_offset = 0.0;
    let mut impulses: Vec<Impulse> = Vec::new();
    let mut curve: Option<(f64, f64, f64, usize)> = None; // radius, length, travelled, ledger idx
    let mut turn: Option<(f64, f64, f64, usize)> = None; // t0, duration, signed angle, ledger idx
    let mut tunnel: Option<(f64, f64, usize)> = None; // exit, variance, ledger idx
    let mut pending_ledger: Vec<(usize, f64)> = Vec::new(); // ledger idx, end time to fix location
    let mut exit_i = 0;
    let mut merge_i = 0;
    let mut next_fix = 0.0;
    let mut step: u64 = 0;

    let push_ledger = |truth: &mut GroundTruth, kind: TruthKind, t0: f64, t1: f64, at: LatLon, lane: u32, n: u32| {
        truth.ledger.push(TruthEvent {
            kind,
            start: t0,
            end: t1,
            location: at,
            lane,
            lane_count: n,
        });
        truth.ledger.len() - 1
    };

    {
        if plan.initial_hold_s >= LONG_STOP_S {
            let at = route.point(s, route.segment_at(s).lane_offset(lane, LANE_WIDTH_M));
            push_ledger(
                &mut truth,
                TruthKind::Stop {
                    duration_s: plan.initial_hold_s,
                },
                0.0,
                plan.initial_hold_s,
                at,
                lane,
                n_cur,
            );
        }
    }

    while s < plan.end_s {
        // kinematics
        let v_prev = v;
        if t < hold_until {
            v = 0.0;
        } else {
            if holding_stop.take().is_some() {
                s += 0.01;
            }
            v = speed_limit(s).max(0.05);
            if stop_i < stops.len() && s + v * dt >= stops[stop_i].0 - 0.01 && s < stops[stop_i].0 + 1.0 {
                let (p, d) = stops[stop_i];
                s = p;
                v = 0.0;
                hold_until = t + d;
                holding_stop = Some(stop_i);
                let at = route.point(p, route.segment_at(p).lane_offset(lane, LANE_WIDTH_M));
                if d >= LONG_STOP_S {
                    push_ledger(&mut truth, TruthKind::Stop { duration_s: d }, t, t + d, at, lane, n_cur);
                }
                stop_i += 1;
            }
        }
        let a_fwd = if step == 0 { 0.0 } else { (v - v_prev) / dt };

        // segment boundary
        let n_here = route.lane_count_at(s);
        if n_here != n_cur {
            let new_lane = map_lane(lane, n_cur, n_here);
            n_cur = n_here;
            if new_lane != lane {
                lane = new_lane;
                truth.labels.push(LaneLabel { t, lane });
            }
        }

        // lane maneuvers
        while move_i < plan.moves.len() && s >= plan.moves[move_i].at && t >= hold_until {
            let m = plan.moves[move_i];
            move_i += 1;
            let here = route.point(s, 0.0);
            match m.kind {
                MoveKind::Normal | MoveKind::Gentle => {
                    let period = m.period;
                    let next = if m.side == Side::Left { lane as i64 - 1 } else { lane as i64 + 1 };
                    if next < 1 || next > n_cur as i64 {
                        continue;
                    }
                    let kind = if m.kind == MoveKind::Normal {
                        TruthKind::LaneChange(m.side)
                    } else {
                        TruthKind::GentleLaneChange(m.side)
                    };
                    push_ledger(&mut truth, kind, t, t + period, here, lane, n_cur);
                    lane = next as u32;
                    truth.labels.push(LaneLabel { t, lane });
                    // lateral offset is tracked relative to the new lane centre
                    lat_offset += if m.side == Side::Left { -LANE_WIDTH_M } else { LANE_WIDTH_M };
                    lat_active.push(lateral(t, period, m.side, LANE_WIDTH_M));
                }
                MoveKind::Swerve => {
                    let period = m.period;
                    push_ledger(&mut truth, TruthKind::Swerve(m.side), t, t + period, here, lane, n_cur);
                    lat_active.push(lateral(t, period, m.side, 1.0));
                    lat_active.push(lateral(t + period, 12.0, m.side.opposite(), 1.0));
                }
            }
        }

        // road features reached
        while feat_i < feats.len() && s >= feats[feat_i].at() {
            let f = feats[feat_i];
            feat_i += 1;
            let here = route.point(s, route.segment_at(s).lane_offset(lane, LANE_WIDTH_M));
            match f {
                Feature::Pothole { lane: pl, .. } => {
                    if *pl == lane {
                        impulses.push(Impulse { t0: t, amplitude: 6.0 });
                        push_ledger(&mut truth, TruthKind::Pothole, t, t, here, lane, n_cur);
                    }
                }
                Feature::Bump { .. } => {
                    impulses.push(Impulse { t0: t, amplitude: 5.0 });
                    push_ledger(&mut truth, TruthKind::Bump, t, t, here, lane, n_cur);
                }
                Feature::Curve { sweep_deg, radii, .. } => {
                    let r = radii[lane as usize - 1];
                    let idx = push_ledger(&mut truth, TruthKind::Curve { radius_m: r }, t, t, here, lane, n_cur);
                    curve = Some((r, sweep_deg.to_radians() * r, 0.0, idx));
                }
                Feature::Tunnel { exit_m, variances, .. } => {
                    let var = variances[lane as usize - 1];
                    let idx = push_ledger(&mut truth, TruthKind::Tunnel { variance: var }, t, t, here, lane, n_cur);
                    tunnel = Some((*exit_m, var, idx));
                }
                Feature::Turn { side, .. } => {
                    let ang = if *side == Side::Right { PI / 2.0 } else { -PI / 2.0 };
                    let idx = push_ledger(&mut truth, TruthKind::Turn(*side), t, t + TURN_SECONDS, here, lane, n_cur);
                    turn = Some((t, TURN_SECONDS, ang, idx));
                    pending_ledger.push((idx, t + TURN_SECONDS / 2.0));
                }
                Feature::UTurn { .. } => {
                    let idx = push_ledger(&mut truth, TruthKind::UTurn, t, t + UTURN_SECONDS, here, lane, n_cur);
                    turn = Some((t, UTURN_SECONDS, -PI, idx));
                    pending_ledger.push((idx, t + UTURN_SECONDS / 2.0));
                }
                Feature::Stop { .. } | Feature::LaneChange { .. } => {}
            }
        }
        while exit_i < plan.exits.len() && s >= plan.exits[exit_i].0 {
            let (_, side, taken) = plan.exits[exit_i];
            exit_i += 1;
            let here = route.point(s, route.segment_at(s).lane_offset(lane, LANE_WIDTH_M));
            push_ledger(&mut truth, TruthKind::Exit { side, taken }, t, t, here, lane, n_cur);
        }
        while merge_i < plan.merges.len() && s >= plan.merges[merge_i].0 {
            let (_, side, taken) = plan.merges[merge_i];
            merge_i += 1;
            let here = route.point(s, route.segment_at(s).lane_offset(lane, LANE_WIDTH_M));
            push_ledger(&mut truth, TruthKind::Merge { side, taken }, t, t, here, lane, n_cur);
        }

        // lateral (felt) acceleration, positive to the left of the car
        let mut felt = 0.0;
        for l in &lat_active {
            felt += l.accel(t);
        }
        if let Some((r, length, travelled, idx)) = curve.as_mut() {
            felt += v * v / *r;
            *travelled += v * dt;
            if *travelled >= *length {
                truth.ledger[*idx].end = t;
                let mid = 0.5 * (truth.ledger[*idx].start + t);
                pending_ledger.push((*idx, mid));
                curve = None;
            }
        }
        if let Some((t0, dur, ang, _)) = turn {
            let tau = t - t0;
            if tau <= dur {
                let omega = ang / dur * (1.0 - (2.0 * PI * tau / dur).cos());
                felt += v * omega;
            } else {
                turn = None;
            }
        }
        let yaw_rate = if v > 0.1 { felt / v } else { 0.0 };
        heading += yaw_rate * dt;
        let gz = -yaw_rate;

        let mut mag = mag_base;
        if let Some((exit, var, idx)) = tunnel {
            if s >= exit {
                truth.ledger[idx].end = t;
                let mid = 0.5 * (truth.ledger[idx].start + t);
                pending_ledger.push((idx, mid));
                tunnel = None;
            } else if var > 0.0 {
                mag[0] += var.sqrt() * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let mut az = GRAVITY;
        for im in &impulses {
            az += im.value(t);
        }
        impulses.retain(|im| t - im.t0 < 0.8);

        let mut sample = SensorSample {
            t,
            accel: [felt, a_fwd, az],
            gyro: [0.0, 0.0, gz],
            mag,
            yaw: heading.to_degrees(),
        };
        for k in 0..3 {
            sample.accel[k] += na.sample(&mut rng);
            sample.gyro[k] += ng.sample(&mut rng);
            sample.mag[k] += nm.sample(&mut rng);
        }
        sample.yaw = (sample.yaw + ny.sample(&mut rng)).rem_euclid(360.0);
        if sample.yaw >= 360.0 {
            sample.yaw = 0.0;
        }
        trace.samples.push(sample);

        // lateral position
        let mut disp = 0.0;
        for l in &lat_active {
            disp += l.displacement(t);
        }
        let done: f64 = lat_active.iter().filter(|l| l.done(t)).map(|l| l.displacement(t)).sum();
        lat_active.retain(|l| !l.done(t));
        lat_offset += done;
        let centre = route.segment_at(s).lane_offset(lane, LANE_WIDTH_M);
        // lat_offset counts the pending shift toward the current lane centre
        let cross = centre + lat_offset + (disp - done);
        if t + 1e-9 >= next_fix {
            let truep = route.point(s, cross);
            let frame = LocalFrame::new(truep);
            let (ex, ny_) = (gps.sample(&mut rng), gps.sample(&mut rng));
            let p = frame.to_latlon(ex, ny_);
            trace.fixes.push(LocationFix {
                t,
                lat: p.lat,
                lon: p.lon,
                accuracy: sc.noise.gps_m.max(0.1),
                segment: route.segment_at(s).id.clone(),
            });
            next_fix += 1.0;
        }

        for (idx, at_t) in pending_ledger.iter() {
            if t >= *at_t && t - dt < *at_t {
                truth.ledger[*idx].location = route.point(s, centre);
            }
        }
        pending_ledger.retain(|(_, at_t)| t < *at_t);

        if t >= hold_until {
            s += v * dt;
        }
        step += 1;
        t = step as f64 * dt;
    }
    for (idx, _) in pending_ledger {
        truth.ledger[idx].end = truth.ledger[idx].end.max(truth.ledger[idx].start);
    }
    trace.ground_truth = truth.labels.clone();
    Ok((trace, truth))
}

/// Seed of trip `i` derived from a fleet seed.
pub fn derive_seed(seed: u64, i: usize) -> u64 {
    let mut z = seed ^ (i as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `trips` independent trips, trip `i` simulated with `derive_seed(seed, i)`.
pub fn generate_fleet(sc: &Scenario, trips: usize, seed: u64) -> Result<Vec<(DriveTrace, GroundTruth)>> {
    if trips == 0 {
        return Err(Error::Scenario("a fleet needs at least one trip".into()));
    }
    sc.validate()?;
    (0..trips)
        .into_par_iter()
        .map(|i| simulate(&sc.with_seed(derive_seed(seed, i))))
        .collect()
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scenario::from_text(s)
    }
}
