//! Trace, event and scenario files survive a write/parse round trip.

use lanequest::config::Config;
use lanequest::events::{events_from_text, events_to_text};
use lanequest::pipeline::detect_all;
use lanequest::presets;
use lanequest::events::DetectedEvent;
use lanequest::sim::{simulate, Scenario, StartMode};
use lanequest::trace::{parse_trace, write_trace, DriveTrace, LaneLabel, LocationFix, SegmentId, SensorSample};
use proptest::prelude::*;

#[test]
fn hour_long_simulated_trace_round_trips_byte_identically() {
    let mut sc = presets::city_tour(2, 5);
    sc.exit_probability = 0.0;
    sc.start = StartMode::Lane(2);
    let (mut trace, _) = simulate(&sc).unwrap();
    trace.samples.retain(|s| s.t < 3600.0);
    trace.fixes.retain(|f| f.t < 3600.0);
    trace.ground_truth.retain(|g| g.t < 3600.0);
    assert_eq!(trace.samples.len(), 180_000);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hour.trace");
    write_trace(&trace, &path).unwrap();
    let back = parse_trace(&path).unwrap();
    assert_eq!(back, trace);
    assert_eq!(back.to_text(), std::fs::read_to_string(&path).unwrap());
}

#[test]
fn empty_trace_is_only_the_header() {
    let text = DriveTrace::default().to_text();
    assert_eq!(text.lines().count(), 1);
    assert_eq!(DriveTrace::from_text(&text).unwrap(), DriveTrace::default());
}

#[test]
fn detected_events_round_trip() {
    let sc = presets::city(4);
    let (trace, _) = simulate(&sc).unwrap();
    let events = detect_all(&trace, &sc.map, &Config::default()).unwrap();
    let text = events_to_text(&events);
    let back = events_from_text(&text).unwrap();
    // maneuver spans are not part of the event file
    let spanless: Vec<DetectedEvent> = events
        .into_iter()
        .map(|e| match e {
            DetectedEvent::Anchor(mut o) => {
                o.span = None;
                DetectedEvent::Anchor(o)
            }
            e => e,
        })
        .collect();
    assert_eq!(back, spanless);
    assert_eq!(events_to_text(&back), text);
}

#[test]
fn preset_scenarios_round_trip() {
    for sc in [presets::city(1), presets::potholes(2), presets::city_tour(3, 2)] {
        let text = sc.to_text();
        let back = Scenario::from_text(&text).unwrap();
        assert_eq!(back.to_text(), text);
    }
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6f64..1e6, -1.0f64..1.0, Just(0.0), Just(-0.0), Just(f64::MIN_POSITIVE), Just(1e300)]
}

fn sample() -> impl Strategy<Value = (f64, [f64; 9], f64)> {
    (0.001f64..0.05, prop::array::uniform9(finite()), 0.0f64..360.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn random_thousand_sample_traces_round_trip(
        raw in prop::collection::vec(sample(), 1000),
        fixes in prop::collection::vec((-90.0f64..90.0, -180.0f64..180.0, 0.1f64..50.0), 0..20),
        lanes in prop::collection::vec(1u32..7, 0..10),
    ) {
        let mut t = 0.0;
        let samples: Vec<SensorSample> = raw
            .iter()
            .map(|(dt, v, yaw)| {
                t += dt;
                SensorSample { t, accel: [v[0], v[1], v[2]], gyro: [v[3], v[4], v[5]], mag: [v[6], v[7], v[8]], yaw: *yaw }
            })
            .collect();
        let trace = DriveTrace {
            samples,
            fixes: fixes
                .iter()
                .enumerate()
                .map(|(i, &(lat, lon, accuracy))| LocationFix { t: i as f64 * 1.5, lat, lon, accuracy, segment: SegmentId::new(format!("s{i}")) })
                .collect(),
            ground_truth: lanes.iter().enumerate().map(|(i, &lane)| LaneLabel { t: i as f64 * 0.7, lane }).collect(),
        };
        let text = trace.to_text();
        let back = DriveTrace::from_text(&text).unwrap();
        prop_assert_eq!(&back, &trace);
        prop_assert_eq!(back.to_text(), text);
    }
}
