//! End-to-end flows: trace → events → lane estimates, and fleet learning.

use rayon::prelude::*;

use crate::config::Config;
use crate::detect::{
    classify_bootstrap, detect_curves, detect_lane_changes, detect_surface_anomaly, detect_tunnel_feature,
};
use crate::error::{Error, Result};
use crate::events::{sort_events, AnchorObservation, DetectedEvent, ObservationKind};
use crate::filter::{run_filter, FilterRun};
use crate::learn::{learn_anchors, LearnReport};
use crate::preprocess::{apply_rotation, estimate_car_rotation, lowpass_smooth, position_at, snap_all, SnappedFix, TimeSeries};
use crate::repo::AnchorStore;
use crate::trace::{DriveTrace, RoadMap};

/// Seconds around a turn in which lane-change and curve detections are
/// discarded.
const TURN_GUARD_S: f64 = 2.0;
/// Seconds around a curve in which lane-change detections are discarded.
const CURVE_GUARD_S: f64 = 1.0;
/// Consecutive fixes needed before a new lane count is believed.
const ROAD_CHANGE_FIXES: usize = 3;

/// Rotates the trace's inertial streams into the car frame.
pub fn reorient_trace(trace: &DriveTrace, cfg: &Config) -> Result<DriveTrace> {
    let r = estimate_car_rotation(&trace.samples, &cfg.preprocess.reorient)?;
    Ok(DriveTrace {
        samples: apply_rotation(&trace.samples, &r),
        ..trace.clone()
    })
}

/// `N` records where the snapped lane count changes, the first one at the
/// first fix.
pub fn road_changes(snapped: &[SnappedFix]) -> Vec<DetectedEvent> {
    let mut out = Vec::new();
    let Some(first) = snapped.first() else { return out };
    let mut current = first.lane_count;
    out.push(DetectedEvent::RoadChange {
        t: first.original.t,
        lane_count: current,
    });
    let mut i = 1;
    while i < snapped.len() {
        let n = snapped[i].lane_count;
        if n != current {
            let run = snapped[i..].iter().take_while(|s| s.lane_count == n).count();
            if run >= ROAD_CHANGE_FIXES || i + run == snapped.len() {
                current = n;
                out.push(DetectedEvent::RoadChange {
                    t: snapped[i].original.t,
                    lane_count: n,
                });
            }
            i += run;
        } else {
            i += 1;
        }
    }
    out
}

/// Runs every detector over a car-frame trace and returns the merged,
/// time-ordered event stream, led by the road's lane count.
pub fn detect_all(trace: &DriveTrace, map: &RoadMap, cfg: &Config) -> Result<Vec<DetectedEvent>> {
    let det = &cfg.detector;
    det.validate()?;
    if trace.samples.is_empty() {
        return Err(Error::Validation("trace has no sensor samples".into()));
    }
    let snapped = snap_all(&trace.fixes, map, cfg.preprocess.snap_radius_m);
    if snapped.is_empty() {
        return Err(Error::Validation("no location fix lies on the road map".into()));
    }
    let fixes = &trace.fixes;
    let locate = |t: f64| position_at(fixes, t, det.locate_half_window_s);
    let ax = lowpass_smooth(&TimeSeries::from_samples(&trace.samples, |s| s.accel[0]), det.smoothing_window_s);
    let gz = lowpass_smooth(&TimeSeries::from_samples(&trace.samples, |s| s.gyro[2]), det.smoothing_window_s);
    let mag_x = TimeSeries::from_samples(&trace.samples, |s| s.mag[0]);
    let az = TimeSeries::from_samples(&trace.samples, |s| s.accel[2]);

    let mut events = road_changes(&snapped);
    let bootstrap = classify_bootstrap(&trace.samples, fixes, &snapped, map, det);
    let turn_spans: Vec<(f64, f64)> = bootstrap
        .iter()
        .filter(|o| matches!(o.kind, ObservationKind::TurnLeft | ObservationKind::TurnRight | ObservationKind::UTurn))
        .filter_map(|o| o.span)
        .map(|(a, b)| (a - TURN_GUARD_S, b + TURN_GUARD_S))
        .collect();
    let near_turn = |a: f64, b: f64| turn_spans.iter().any(|&(s, e)| a <= e && b >= s);

    let curves: Vec<_> = detect_curves(&ax, &gz, det)
        .into_iter()
        .filter(|c| !near_turn(c.start, c.end))
        .collect();
    let near_curve = |t: f64| curves.iter().any(|c| t >= c.start - CURVE_GUARD_S && t <= c.end + CURVE_GUARD_S);
    for mut m in detect_lane_changes(&ax, det) {
        if near_turn(m.t, m.t) || near_curve(m.t) {
            continue;
        }
        m.location = locate(m.t);
        events.push(DetectedEvent::Motion(m));
    }
    events.extend(bootstrap.into_iter().map(DetectedEvent::Anchor));
    for c in curves {
        let mid = 0.5 * (c.start + c.end);
        if let Some(loc) = locate(mid) {
            let mut o = AnchorObservation::new(mid, ObservationKind::Curve, loc).with_feature(c.radius_m);
            o.span = Some((c.start, c.end));
            events.push(DetectedEvent::Anchor(o));
        }
    }
    for x in detect_tunnel_feature(&mag_x, det) {
        let mid = 0.5 * (x.start + x.end);
        if let Some(loc) = locate(mid) {
            let mut o = AnchorObservation::new(mid, ObservationKind::Tunnel, loc).with_feature(x.plateau_variance);
            o.span = Some((x.start, x.end));
            events.push(DetectedEvent::Anchor(o));
        }
    }
    for x in detect_surface_anomaly(&az, det) {
        if let Some(loc) = locate(x.peak_t) {
            let mut o = AnchorObservation::new(x.peak_t, ObservationKind::SurfaceAnomaly, loc).with_feature(x.peak_variance);
            o.span = Some((x.start, x.end));
            events.push(DetectedEvent::Anchor(o));
        }
    }
    sort_events(&mut events);
    Ok(events)
}

/// Lane count announced by the first `N` record of an event stream.
pub fn initial_lane_count(events: &[DetectedEvent]) -> Result<u32> {
    events
        .iter()
        .find_map(|e| match e {
            DetectedEvent::RoadChange { lane_count, .. } => Some(*lane_count),
            _ => None,
        })
        .ok_or_else(|| Error::Validation("event stream carries no lane count record".into()))
}

/// Filters an event stream against a repository.
pub fn estimate(events: &[DetectedEvent], repo: &AnchorStore, cfg: &Config) -> Result<FilterRun> {
    let n = initial_lane_count(events)?;
    run_filter(events, repo, &cfg.confusion, n, &cfg.filter)
}

/// Anchor observations of a stream, each tagged with the belief the filter
/// held just before it.
pub fn observations_with_beliefs(events: &[DetectedEvent], run: &FilterRun) -> Vec<AnchorObservation> {
    events
        .iter()
        .zip(&run.prior_beliefs)
        .filter_map(|(e, b)| match e {
            DetectedEvent::Anchor(o) => {
                let mut o = o.clone();
                o.reporter_belief = Some(b.probs().to_vec());
                Some(o)
            }
            _ => None,
        })
        .collect()
}

/// Detects events on every trace in parallel, preserving order.
pub fn detect_fleet(traces: &[DriveTrace], map: &RoadMap, cfg: &Config) -> Result<Vec<Vec<DetectedEvent>>> {
    traces.par_iter().map(|t| detect_all(t, map, cfg)).collect()
}

/// Alternates filtering and learning: each round re-estimates every trip
/// against the anchors of the previous round (bootstrap priors only in the
/// first) and relearns from the resulting reporter beliefs.
pub fn learn_fleet(trips: &[Vec<DetectedEvent>], cfg: &Config) -> Result<(AnchorStore, LearnReport)> {
    let mut store = AnchorStore::new();
    let mut report = LearnReport::default();
    for _ in 0..cfg.learn_rounds.max(1) {
        let corpus: Vec<Vec<AnchorObservation>> = trips
            .par_iter()
            .map(|ev| estimate(ev, &store, cfg).map(|run| observations_with_beliefs(ev, &run)))
            .collect::<Result<_>>()?;
        report = learn_anchors(&corpus, &cfg.cluster)?;
        store = report.clone().into_store()?;
    }
    Ok((store, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::LatLon;
    use crate::trace::{LocationFix, SegmentId};

    fn snapped(t: f64, n: u32) -> SnappedFix {
        SnappedFix {
            original: LocationFix {
                t,
                lat: 0.0,
                lon: 0.0,
                accuracy: 1.0,
                segment: SegmentId::new("a"),
            },
            segment: SegmentId::new("a"),
            lane_count: n,
            along_m: 0.0,
            cross_m: 0.0,
        }
    }

    #[test]
    fn road_changes_are_debounced() {
        let counts = [4, 4, 5, 4, 4, 5, 5, 5, 5];
        let s: Vec<SnappedFix> = counts.iter().enumerate().map(|(i, &n)| snapped(i as f64, n)).collect();
        let ev = road_changes(&s);
        assert_eq!(
            ev,
            vec![
                DetectedEvent::RoadChange { t: 0.0, lane_count: 4 },
                DetectedEvent::RoadChange { t: 5.0, lane_count: 5 },
            ]
        );
    }

    #[test]
    fn missing_lane_count_is_an_error() {
        let ev = vec![DetectedEvent::Anchor(AnchorObservation::new(
            1.0,
            ObservationKind::Stop,
            LatLon::new(0.0, 0.0),
        ))];
        assert!(initial_lane_count(&ev).is_err());
    }
}
