//! Accuracy of lane estimates against ground truth, detector scoring,
//! event-rate sweeps and CSV reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::events::{DetectedEvent, MotionKind, ObservationKind};
use crate::filter::{resolve_observation, run_filter, LaneEstimate, Resolution, UpdateSource};
use crate::pipeline::initial_lane_count;
use crate::preprocess::snap_all;
use crate::repo::AnchorStore;
use crate::sim::{derive_seed, GroundTruth, TruthKind, LANE_WIDTH_M};
use crate::trace::{DriveTrace, RoadMap, Side};

/// Posterior max that ends the transient stage.
pub const TRANSIENT_CONFIDENCE: f64 = 0.6;

/// Lane error counts; `errors[k]` is the number of comparisons off by `k`
/// lanes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Tally {
    pub errors: Vec<usize>,
    pub transient_s: Vec<f64>,
}

impl Tally {
    pub fn total(&self) -> usize {
        self.errors.iter().sum()
    }

    fn add_error(&mut self, e: usize) {
        if self.errors.len() <= e {
            self.errors.resize(e + 1, 0);
        }
        self.errors[e] += 1;
    }

    pub fn merge(&mut self, other: &Tally) {
        for (k, &c) in other.errors.iter().enumerate() {
            for _ in 0..c {
                self.add_error(k);
            }
        }
        self.transient_s.extend_from_slice(&other.transient_s);
    }

    /// Compares `(t, lane)` estimates with the truth label at or before
    /// each `t`; estimates before the first label are ignored.
    pub fn compare(&mut self, estimates: impl IntoIterator<Item = (f64, u32)>, truth: &GroundTruth) -> usize {
        let mut n = 0;
        for (t, lane) in estimates {
            if let Some(tl) = truth.lane_at(t) {
                self.add_error(lane.abs_diff(tl) as usize);
                n += 1;
            }
        }
        n
    }

    pub fn report(&self) -> Result<EvalReport> {
        let total = self.total();
        if total == 0 {
            return Err(Error::Evaluation("estimates and ground truth do not overlap".into()));
        }
        let mut acc = 0;
        let cdf: Vec<(u32, f64)> = self
            .errors
            .iter()
            .enumerate()
            .map(|(k, &c)| {
                acc += c;
                (k as u32, acc as f64 / total as f64)
            })
            .collect();
        let frac = |k: usize| cdf.get(k).map_or(1.0, |c| c.1);
        Ok(EvalReport {
            comparisons: total,
            exact_lane_accuracy: frac(0),
            within_one_lane_accuracy: frac(1),
            lane_error_cdf: cdf,
            transient_seconds: (!self.transient_s.is_empty())
                .then(|| self.transient_s.iter().sum::<f64>() / self.transient_s.len() as f64),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub comparisons: usize,
    pub exact_lane_accuracy: f64,
    pub within_one_lane_accuracy: f64,
    /// (error in lanes, cumulative fraction)
    pub lane_error_cdf: Vec<(u32, f64)>,
    /// Mean time from the first estimate to the end of the transient, over
    /// trips whose transient ended.
    pub transient_seconds: Option<f64>,
}

/// Index of the first perception-driven estimate whose posterior max
/// reaches [`TRANSIENT_CONFIDENCE`].
pub fn transient_end(estimates: &[LaneEstimate]) -> Option<usize> {
    estimates.iter().position(|e| {
        matches!(e.source, UpdateSource::Perception | UpdateSource::Negative) && e.belief.max_prob() >= TRANSIENT_CONFIDENCE
    })
}

fn tally_trip(estimates: &[LaneEstimate], truth: &GroundTruth, skip_transient: bool) -> Tally {
    let mut tally = Tally::default();
    let end = transient_end(estimates);
    if let (Some(i), Some(first)) = (end, estimates.first()) {
        tally.transient_s.push(estimates[i].t - first.t);
    }
    let from = if skip_transient { end.unwrap_or(estimates.len()) } else { 0 };
    tally.compare(estimates[from..].iter().map(|e| (e.t, e.lane)), truth);
    tally
}

/// Accuracy of one trip's estimates; with `skip_transient` the estimates
/// before the end of the transient are left out.
pub fn evaluate(estimates: &[LaneEstimate], truth: &GroundTruth, skip_transient: bool) -> Result<EvalReport> {
    tally_trip(estimates, truth, skip_transient).report()
}

/// Pooled accuracy over many trips.
pub fn evaluate_many(trips: &[(Vec<LaneEstimate>, GroundTruth)], skip_transient: bool) -> Result<EvalReport> {
    let mut tally = Tally::default();
    for (est, truth) in trips {
        tally.merge(&tally_trip(est, truth, skip_transient));
    }
    tally.report()
}

/// Nearest-lane estimate from each raw fix's lateral offset on its snapped
/// segment.
pub fn gps_baseline(trace: &DriveTrace, map: &RoadMap, snap_radius_m: f64) -> Vec<(f64, u32)> {
    snap_all(&trace.fixes, map, snap_radius_m)
        .iter()
        .map(|s| {
            let n = s.lane_count as f64;
            let lane = ((n + 1.0) / 2.0 - s.cross_m / LANE_WIDTH_M).round().clamp(1.0, n);
            (s.original.t, lane as u32)
        })
        .collect()
}

/// Detection counts for one event class.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct DetectionScore {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl DetectionScore {
    pub fn precision(&self) -> f64 {
        let d = self.true_positives + self.false_positives;
        if d == 0 {
            1.0
        } else {
            self.true_positives as f64 / d as f64
        }
    }

    pub fn recall(&self) -> f64 {
        let d = self.true_positives + self.false_negatives;
        if d == 0 {
            1.0
        } else {
            self.true_positives as f64 / d as f64
        }
    }

    pub fn add(&mut self, o: &DetectionScore) {
        self.true_positives += o.true_positives;
        self.false_positives += o.false_positives;
        self.false_negatives += o.false_negatives;
    }
}

/// Event classes scored against the ground-truth ledger.
pub const DETECTION_CLASSES: [&str; 13] = [
    "left-change",
    "right-change",
    "turn-left",
    "turn-right",
    "uturn",
    "curve",
    "stop",
    "merge-taken",
    "merge-passed",
    "exit-taken",
    "exit-passed",
    "tunnel",
    "surface-anomaly",
];

/// Bootstrap-anchor classes among [`DETECTION_CLASSES`].
pub const BOOTSTRAP_CLASSES: [&str; 8] = [
    "turn-left",
    "turn-right",
    "uturn",
    "stop",
    "merge-taken",
    "merge-passed",
    "exit-taken",
    "exit-passed",
];

fn special_class(kind: &str, taken: bool) -> &'static str {
    match (kind, taken) {
        ("merge", true) => "merge-taken",
        ("merge", false) => "merge-passed",
        ("exit", true) => "exit-taken",
        _ => "exit-passed",
    }
}

fn side_class(side: Side, left: &'static str, right: &'static str) -> &'static str {
    if side == Side::Left {
        left
    } else {
        right
    }
}

/// Class and acceptance window of a truth entry; `None` for entries that
/// are not detection targets.
fn truth_class(kind: &TruthKind) -> Option<(&'static str, f64)> {
    Some(match kind {
        TruthKind::LaneChange(s) | TruthKind::GentleLaneChange(s) => (side_class(*s, "left-change", "right-change"), 1.0),
        TruthKind::Turn(s) => (side_class(*s, "turn-left", "turn-right"), 3.0),
        TruthKind::UTurn => ("uturn", 3.0),
        TruthKind::Curve { .. } => ("curve", 3.0),
        TruthKind::Tunnel { .. } => ("tunnel", 5.0),
        TruthKind::Pothole | TruthKind::Bump => ("surface-anomaly", 1.0),
        TruthKind::Stop { .. } => ("stop", 30.0),
        TruthKind::Merge { taken, .. } => (special_class("merge", *taken), 20.0),
        TruthKind::Exit { taken, .. } => (special_class("exit", *taken), 20.0),
        TruthKind::Swerve(_) => return None,
    })
}

fn event_class(e: &DetectedEvent) -> Option<(&'static str, f64, f64)> {
    match e {
        DetectedEvent::RoadChange { .. } => None,
        DetectedEvent::Motion(m) => match m.kind {
            MotionKind::Left => Some(("left-change", m.t, m.t)),
            MotionKind::Right => Some(("right-change", m.t, m.t)),
            MotionKind::None => None,
        },
        DetectedEvent::Anchor(a) => {
            let (s, e) = a.span.unwrap_or((a.t, a.t));
            let class = match a.kind {
                ObservationKind::TurnLeft => "turn-left",
                ObservationKind::TurnRight => "turn-right",
                ObservationKind::UTurn => "uturn",
                ObservationKind::Stop => "stop",
                ObservationKind::Curve => "curve",
                ObservationKind::Tunnel => "tunnel",
                ObservationKind::SurfaceAnomaly => "surface-anomaly",
                ObservationKind::Merge { taken, .. } => special_class("merge", taken),
                ObservationKind::Exit { taken, .. } => special_class("exit", taken),
            };
            Some((class, s, e))
        }
    }
}

/// Matches detections to ledger entries of the same class whose time span,
/// widened by a class tolerance, overlaps the detection; each entry is
/// matched at most once, earliest first.
pub fn score_detections(events: &[DetectedEvent], truth: &GroundTruth) -> BTreeMap<&'static str, DetectionScore> {
    let mut out: BTreeMap<&'static str, DetectionScore> = BTreeMap::new();
    let mut entries: Vec<(&'static str, f64, f64, bool)> = truth
        .ledger
        .iter()
        .filter_map(|e| truth_class(&e.kind).map(|(c, tol)| (c, e.start - tol, e.end + tol, false)))
        .collect();
    entries.sort_by(|a, b| a.1.total_cmp(&b.1));
    for e in events {
        let Some((class, s, t)) = event_class(e) else { continue };
        let score = out.entry(class).or_default();
        match entries
            .iter_mut()
            .find(|x| !x.3 && x.0 == class && s <= x.2 && t >= x.1)
        {
            Some(x) => {
                x.3 = true;
                score.true_positives += 1;
            }
            None => score.false_positives += 1,
        }
    }
    for x in entries.iter().filter(|x| !x.3) {
        out.entry(x.0).or_default().false_negatives += 1;
    }
    out
}

/// One trip of an event-rate sweep.
#[derive(Debug, Clone)]
pub struct SweepTrip {
    pub events: Vec<DetectedEvent>,
    pub truth: GroundTruth,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub rate_per_hour: f64,
    pub events_kept: usize,
    pub report: EvalReport,
}

/// Indices of the events the filter could use: lane changes and anchor
/// observations that resolve against the repository.
fn usable_events(events: &[DetectedEvent], repo: &AnchorStore, cfg: &Config) -> Result<Vec<usize>> {
    let mut n = initial_lane_count(events)?;
    let mut out = Vec::new();
    for (i, e) in events.iter().enumerate() {
        match e {
            DetectedEvent::RoadChange { lane_count, .. } => n = *lane_count,
            DetectedEvent::Motion(m) if m.kind != MotionKind::None => out.push(i),
            DetectedEvent::Motion(_) => {}
            DetectedEvent::Anchor(o) => {
                if matches!(resolve_observation(o, repo, n, &cfg.filter), Resolution::Apply { .. }) {
                    out.push(i);
                }
            }
        }
    }
    Ok(out)
}

/// Re-runs the filter on uniformly sub-sampled usable events at each target
/// rate. Per trip the kept events are a prefix of one fixed random
/// permutation, so lower rates keep subsets of higher ones.
pub fn sweep_event_rate(
    trips: &[SweepTrip],
    repo: &AnchorStore,
    rates: &[f64],
    cfg: &Config,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    if rates.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::Evaluation("event rates must be positive".into()));
    }
    let perms: Vec<Vec<usize>> = trips
        .iter()
        .enumerate()
        .map(|(i, trip)| {
            let mut usable = usable_events(&trip.events, repo, cfg)?;
            usable.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, i)));
            Ok(usable)
        })
        .collect::<Result<_>>()?;
    rates
        .iter()
        .map(|&rate| {
            let per_trip: Vec<(Tally, usize)> = trips
                .par_iter()
                .zip(&perms)
                .map(|(trip, perm)| {
                    let k = ((rate * trip.duration_s / 3600.0).round() as usize).min(perm.len());
                    let mut keep = vec![false; trip.events.len()];
                    for &i in &perm[..k] {
                        keep[i] = true;
                    }
                    let events: Vec<DetectedEvent> = trip
                        .events
                        .iter()
                        .enumerate()
                        .filter(|(i, e)| keep[*i] || !e.is_evidence())
                        .map(|(_, e)| e.clone())
                        .collect();
                    let n = initial_lane_count(&trip.events)?;
                    let run = run_filter(&events, repo, &cfg.confusion, n, &cfg.filter)?;
                    let mut tally = Tally::default();
                    tally.compare(run.estimates.iter().map(|e| (e.t, e.lane)), &trip.truth);
                    Ok((tally, k))
                })
                .collect::<Result<_>>()?;
            let mut tally = Tally::default();
            let mut kept = 0;
            for (t, k) in &per_trip {
                tally.merge(t);
                kept += k;
            }
            Ok(SweepPoint {
                rate_per_hour: rate,
                events_kept: kept,
                report: tally.report()?,
            })
        })
        .collect()
}

/// Fleet-level results written by the `evaluate` command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FleetReport {
    pub trips: usize,
    pub overall: EvalReport,
    pub steady_state: Option<EvalReport>,
    pub gps_baseline: Option<EvalReport>,
    pub detection: BTreeMap<String, DetectionScore>,
}

pub fn accuracy_csv(report: &FleetReport) -> String {
    let mut out = String::from("scope,comparisons,exact,within_one,transient_s\n");
    let mut row = |name: &str, r: &EvalReport| {
        let tr = r.transient_seconds.map(|x| x.to_string()).unwrap_or_default();
        writeln!(out, "{name},{},{},{},{tr}", r.comparisons, r.exact_lane_accuracy, r.within_one_lane_accuracy).unwrap();
    };
    row("overall", &report.overall);
    if let Some(r) = &report.steady_state {
        row("steady_state", r);
    }
    if let Some(r) = &report.gps_baseline {
        row("gps_baseline", r);
    }
    out
}

pub fn cdf_csv(report: &FleetReport) -> String {
    let mut out = String::from("scope,error_lanes,cumulative_fraction\n");
    let scopes = [
        ("overall", Some(&report.overall)),
        ("steady_state", report.steady_state.as_ref()),
        ("gps_baseline", report.gps_baseline.as_ref()),
    ];
    for (name, r) in scopes {
        if let Some(r) = r {
            for (k, c) in &r.lane_error_cdf {
                writeln!(out, "{name},{k},{c}").unwrap();
            }
        }
    }
    out
}

pub fn detection_csv(scores: &BTreeMap<String, DetectionScore>) -> String {
    let mut out = String::from("class,true_positives,false_positives,false_negatives,precision,recall\n");
    for (k, s) in scores {
        writeln!(
            out,
            "{k},{},{},{},{},{}",
            s.true_positives,
            s.false_positives,
            s.false_negatives,
            s.precision(),
            s.recall()
        )
        .unwrap();
    }
    out
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("rate_per_hour,events_kept,comparisons,exact,within_one\n");
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{}",
            p.rate_per_hour, p.events_kept, p.report.comparisons, p.report.exact_lane_accuracy, p.report.within_one_lane_accuracy
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::LaneBelief;
    use crate::trace::LaneLabel;

    fn truth(labels: &[(f64, u32)]) -> GroundTruth {
        GroundTruth {
            labels: labels.iter().map(|&(t, lane)| LaneLabel { t, lane }).collect(),
            ledger: Vec::new(),
        }
    }

    fn est(t: f64, lane: u32, source: UpdateSource, max: f64) -> LaneEstimate {
        let mut p = vec![(1.0 - max) / 3.0; 4];
        p[lane as usize - 1] = max;
        LaneEstimate {
            t,
            lane,
            belief: LaneBelief::from_probs(p).unwrap(),
            source,
        }
    }

    #[test]
    fn identical_estimates_are_exact() {
        let tr = truth(&[(0.0, 2), (10.0, 3)]);
        let e = vec![est(0.0, 2, UpdateSource::Initial, 0.4), est(12.0, 3, UpdateSource::Motion, 0.5)];
        let r = evaluate(&e, &tr, false).unwrap();
        assert_eq!(r.exact_lane_accuracy, 1.0);
        assert_eq!(r.lane_error_cdf, vec![(0, 1.0)]);
    }

    #[test]
    fn one_off_everywhere() {
        let tr = truth(&[(0.0, 2)]);
        let e = vec![est(1.0, 3, UpdateSource::Motion, 0.4), est(2.0, 1, UpdateSource::Motion, 0.4)];
        let r = evaluate(&e, &tr, false).unwrap();
        assert_eq!(r.exact_lane_accuracy, 0.0);
        assert_eq!(r.within_one_lane_accuracy, 1.0);
    }

    #[test]
    fn no_overlap_is_an_error() {
        let tr = truth(&[(100.0, 2)]);
        let e = vec![est(1.0, 2, UpdateSource::Initial, 0.4)];
        assert!(matches!(evaluate(&e, &tr, false), Err(Error::Evaluation(_))));
    }

    #[test]
    fn transient_prefix_is_skipped() {
        let tr = truth(&[(0.0, 4)]);
        let e = vec![
            est(0.0, 1, UpdateSource::Initial, 0.25),
            est(5.0, 4, UpdateSource::Perception, 0.5),
            est(9.0, 4, UpdateSource::Perception, 0.7),
            est(20.0, 3, UpdateSource::Motion, 0.6),
        ];
        assert_eq!(transient_end(&e), Some(2));
        let r = evaluate(&e, &tr, true).unwrap();
        assert_eq!(r.comparisons, 2);
        assert_eq!(r.exact_lane_accuracy, 0.5);
        assert_eq!(r.transient_seconds, Some(9.0));
    }
}
