//! Ready-made scenarios.

use crate::geo::LatLon;
use crate::sim::{straight_road, ErrorRates, Feature, NoiseModel, Scenario, StartMode, LANE_WIDTH_M};
use crate::trace::{SegmentId, Side, SpecialKind, SpecialLane};

pub const ORIGIN: LatLon = LatLon { lat: 31.2001, lon: 29.9187 };

/// Radii for lanes 1..=n of a curve whose innermost lane has radius `inner`.
pub fn lane_radii(inner: f64, n: u32) -> Vec<f64> {
    (1..=n).map(|l| inner + (n - l) as f64 * LANE_WIDTH_M).collect()
}

fn curve(at_m: f64, inner: f64, sweep_deg: f64, n: u32) -> Feature {
    Feature::Curve {
        at_m,
        sweep_deg,
        radii: lane_radii(inner, n),
    }
}

/// Per-lane tunnel variances halving from lane 1 inward.
fn tunnel(entry_m: f64, exit_m: f64, first: f64, n: u32) -> Feature {
    Feature::Tunnel {
        entry_m,
        exit_m,
        variances: (0..n).map(|k| first / 2f64.powi(k as i32)).collect(),
    }
}

/// 12 km of alternating 4- and 5-lane road with 41 anchors (about 3.4 per
/// km): curves, tunnels, potholes, bumps, turns, a u-turn, a long stop, two
/// exits and a merge. Trips cover 2.5 to 5 km, start in mixed modes and
/// change lanes about once per km.
pub fn city(seed: u64) -> Scenario {
    let mut map = straight_road(ORIGIN, &[(3000.0, 4), (3000.0, 5), (3000.0, 4), (3000.0, 5)]).expect("valid road");
    let special = |kind, side, position_m| SpecialLane { kind, side, position_m };
    map.segments[0].special_lanes.push(special(SpecialKind::Exit, Side::Right, 2400.0));
    map.segments[2].special_lanes.push(special(SpecialKind::Merge, Side::Right, 500.0));
    map.segments[3].special_lanes.push(special(SpecialKind::Exit, Side::Right, 2000.0));
    use Feature::*;
    let features = vec![
        curve(300.0, 120.0, 35.0, 4),
        Pothole { at_m: 650.0, lane: 2 },
        curve(900.0, 80.0, 45.0, 4),
        Turn { at_m: 1200.0, side: Side::Right },
        tunnel(1500.0, 1800.0, 20.0, 4),
        Bump { at_m: 2000.0 },
        curve(2150.0, 150.0, 30.0, 4),
        Pothole { at_m: 2650.0, lane: 4 },
        curve(3250.0, 100.0, 40.0, 5),
        Pothole { at_m: 3500.0, lane: 1 },
        curve(3800.0, 60.0, 50.0, 5),
        curve(4100.0, 95.0, 40.0, 5),
        Turn { at_m: 4300.0, side: Side::Right },
        Pothole { at_m: 4600.0, lane: 3 },
        curve(4800.0, 200.0, 25.0, 5),
        curve(5000.0, 85.0, 35.0, 5),
        Stop { at_m: 5200.0, duration_s: 200.0 },
        tunnel(5450.0, 5750.0, 30.0, 5),
        curve(6200.0, 90.0, 40.0, 4),
        Pothole { at_m: 6750.0, lane: 2 },
        curve(6950.0, 130.0, 35.0, 4),
        curve(7300.0, 100.0, 40.0, 4),
        Turn { at_m: 7600.0, side: Side::Left },
        curve(7850.0, 70.0, 45.0, 4),
        Bump { at_m: 8100.0 },
        tunnel(8250.0, 8500.0, 16.0, 4),
        curve(8600.0, 120.0, 30.0, 4),
        UTurn { at_m: 8800.0 },
        curve(9250.0, 110.0, 40.0, 5),
        Pothole { at_m: 9500.0, lane: 5 },
        curve(9700.0, 160.0, 30.0, 5),
        Turn { at_m: 10000.0, side: Side::Left },
        Pothole { at_m: 10300.0, lane: 2 },
        curve(10550.0, 75.0, 45.0, 5),
        curve(10750.0, 140.0, 30.0, 5),
        tunnel(11250.0, 11500.0, 25.0, 5),
        Bump { at_m: 11650.0 },
        Pothole { at_m: 11800.0, lane: 4 },
    ];
    Scenario {
        route: map.segments.iter().map(|s| s.id.clone()).collect::<Vec<SegmentId>>(),
        features,
        seed,
        speed_mps: 15.0,
        speed_jitter: 0.15,
        start: StartMode::Mixed,
        lane_changes_per_km: 1.0,
        exit_probability: 0.1,
        trip_length_m: Some((2500.0, 5000.0)),
        noise: NoiseModel::default(),
        errors: ErrorRates::default(),
        ..Scenario::new(map)
    }
}

/// The city layout repeated `laps` times end to end, for trips long enough
/// to measure sparse event rates. Trips drive the whole road.
pub fn city_tour(seed: u64, laps: usize) -> Scenario {
    let base = city(seed);
    let lap_m: f64 = base.map.segments.iter().map(|s| s.length()).sum();
    let sections: Vec<(f64, u32)> = (0..laps)
        .flat_map(|_| base.map.segments.iter().map(|s| (s.length(), s.lane_count)))
        .collect();
    let mut map = straight_road(ORIGIN, &sections).expect("valid road");
    let per_lap = base.map.segments.len();
    for (i, seg) in map.segments.iter_mut().enumerate() {
        seg.special_lanes = base.map.segments[i % per_lap].special_lanes.clone();
    }
    let features = (0..laps)
        .flat_map(|k| base.features.iter().map(move |f| f.shifted(k as f64 * lap_m)))
        .collect();
    Scenario {
        route: map.segments.iter().map(|s| s.id.clone()).collect(),
        features,
        trip_length_m: None,
        map,
        ..base
    }
}

/// 5 km of 4-lane road with three potholes (lanes 4, 1 and 2) and one
/// full-width bump; turns ahead of the first two potholes pin the lane,
/// and by the bump the crowd has spread over all lanes again.
pub fn potholes(seed: u64) -> Scenario {
    let map = straight_road(ORIGIN, &[(5000.0, 4)]).expect("valid road");
    use Feature::*;
    let features = vec![
        Turn { at_m: 700.0, side: Side::Right },
        Pothole { at_m: 900.0, lane: 4 },
        Turn { at_m: 2000.0, side: Side::Left },
        Pothole { at_m: 2200.0, lane: 1 },
        Pothole { at_m: 2900.0, lane: 2 },
        Bump { at_m: 4500.0 },
    ];
    Scenario {
        features,
        seed,
        speed_mps: 14.0,
        speed_jitter: 0.1,
        start: StartMode::Random,
        lane_changes_per_km: 3.0,
        ..Scenario::new(map)
    }
}
