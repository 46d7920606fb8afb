//! Preprocessing and detectors against scripted simulator ground truth.

mod common;

use common::BASE;
use lanequest::config::Config;
use lanequest::detect::{detect_curves, detect_lane_changes, detect_stops, detect_surface_anomaly, detect_tunnel_feature, detect_turns, DetectorConfig};
use lanequest::events::{DetectedEvent, MotionKind, ObservationKind};
use lanequest::geo::haversine;
use lanequest::pipeline::detect_all;
use lanequest::preprocess::{apply_rotation, estimate_car_rotation, lowpass_smooth, snap_all, ReorientConfig, TimeSeries};
use lanequest::sim::{simulate, straight_road, ErrorRates, Feature, NoiseModel, Scenario, StartMode, TruthKind};
use lanequest::trace::{DriveTrace, Side};
use nalgebra::{Rotation3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn scripted(len_m: f64, lanes: u32, lane: u32, features: Vec<Feature>, seed: u64) -> Scenario {
    let mut sc = Scenario::new(straight_road(BASE, &[(len_m, lanes)]).unwrap());
    sc.features = features;
    sc.seed = seed;
    sc.start = StartMode::Lane(lane);
    sc.lane_changes_per_km = 0.0;
    sc.speed_jitter = 0.0;
    sc.errors = ErrorRates { missed_fraction: 0.0, swerves_per_km: 0.0 };
    sc
}

fn det() -> DetectorConfig {
    Config::default().detector
}

fn smoothed(trace: &DriveTrace, f: impl Fn(&lanequest::trace::SensorSample) -> f64) -> TimeSeries {
    lowpass_smooth(&TimeSeries::from_samples(&trace.samples, f), det().smoothing_window_s)
}

#[test]
fn smoothing_cuts_noise_on_a_ramp() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let t: Vec<f64> = (0..1000).map(|i| i as f64 / 50.0).collect();
    let clean: Vec<f64> = t.iter().map(|x| 0.3 * x - 1.0).collect();
    let rms = |a: &[f64]| (a.iter().map(|x| x * x).sum::<f64>() / a.len() as f64).sqrt();
    let (mut before, mut after) = (0.0, 0.0);
    for _ in 0..100 {
        let noisy: Vec<f64> = clean.iter().map(|c| c + noise.sample(&mut rng)).collect();
        let s = lowpass_smooth(&TimeSeries::new(t.clone(), noisy.clone()), 1.0);
        before += rms(&noisy.iter().zip(&clean).map(|(a, b)| a - b).collect::<Vec<_>>());
        after += rms(&s.v.iter().zip(&clean).map(|(a, b)| a - b).collect::<Vec<_>>());
    }
    assert!(before >= 3.0 * after, "rms {before} -> {after}");
}

#[test]
fn phone_rotated_about_z_is_recovered() {
    let mut sc = scripted(1500.0, 3, 2, vec![], 3);
    sc.noise = NoiseModel::zero();
    sc.start = StartMode::Parked;
    let (trace, _) = simulate(&sc).unwrap();
    let phone = Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
    let rotated = apply_rotation(&trace.samples, &phone);
    let r = estimate_car_rotation(&rotated, &ReorientConfig::default()).unwrap();
    let back = apply_rotation(&rotated, &r);
    for (a, b) in back.iter().zip(&trace.samples) {
        for k in 0..3 {
            assert!((a.accel[k] - b.accel[k]).abs() < 1e-6);
            assert!((a.gyro[k] - b.gyro[k]).abs() < 1e-6);
            assert!((a.mag[k] - b.mag[k]).abs() < 1e-6);
        }
    }
}

fn pulse(t: &[f64], at: f64, amp: f64) -> Vec<f64> {
    t.iter().map(|x| amp * (-0.5 * ((x - at) / 0.4).powi(2)).exp()).collect()
}

#[test]
fn injected_trough_then_peak_is_one_left_change() {
    let t: Vec<f64> = (0..1500).map(|i| i as f64 / 50.0).collect();
    let v: Vec<f64> = pulse(&t, 10.0, -1.0).iter().zip(pulse(&t, 12.0, 1.0)).map(|(a, b)| a + b).collect();
    let ev = detect_lane_changes(&TimeSeries::new(t.clone(), v), &det());
    assert_eq!(ev.len(), 1);
    assert_eq!(ev[0].kind, MotionKind::Left);
    assert!((ev[0].t - 11.0).abs() < 0.1);
    assert!((ev[0].peak_delta - 2.0).abs() < 0.01);
    let far: Vec<f64> = pulse(&t, 10.0, -1.0).iter().zip(pulse(&t, 16.0, 1.0)).map(|(a, b)| a + b).collect();
    assert!(detect_lane_changes(&TimeSeries::new(t, far), &det()).is_empty());
}

#[test]
fn scripted_left_change_is_recovered() {
    let sc = scripted(2000.0, 3, 2, vec![Feature::LaneChange { at_m: 400.0, side: Side::Left }], 8);
    let (trace, truth) = simulate(&sc).unwrap();
    let lc = truth.ledger.iter().find(|e| e.kind == TruthKind::LaneChange(Side::Left)).unwrap();
    let mid = lc.mid();
    assert!((25.0..40.0).contains(&mid), "lane change at {mid}");
    let ev = detect_lane_changes(&smoothed(&trace, |s| s.accel[0]), &det());
    let near: Vec<_> = ev.iter().filter(|m| (m.t - mid).abs() <= 3.0).collect();
    assert_eq!(near.len(), 1);
    assert_eq!(near[0].kind, MotionKind::Left);
    assert_eq!(ev.len(), 1);
}

#[test]
fn scripted_right_turn_and_long_stop() {
    let sc = scripted(
        2500.0,
        3,
        3,
        vec![Feature::Turn { at_m: 500.0, side: Side::Right }, Feature::Stop { at_m: 1500.0, duration_s: 200.0 }],
        4,
    );
    let (trace, _) = simulate(&sc).unwrap();
    let turns = detect_turns(&trace.samples, &det());
    assert_eq!(turns.len(), 1);
    assert_eq!(turns[0].kind, ObservationKind::TurnRight);
    let stops = detect_stops(&snap_all(&trace.fixes, &sc.map, 50.0), &det());
    assert_eq!(stops.len(), 1);
    assert!(stops[0].end - stops[0].start > 180.0);
    // the turn is an anchor of its own, not a curve
    let events = detect_all(&trace, &sc.map, &Config::default()).unwrap();
    let kinds: Vec<ObservationKind> = events
        .iter()
        .filter_map(|e| match e {
            DetectedEvent::Anchor(o) => Some(o.kind),
            _ => None,
        })
        .collect();
    assert!(kinds.contains(&ObservationKind::TurnRight));
    assert!(!kinds.contains(&ObservationKind::Curve));
}

#[test]
fn curve_radius_with_noise() {
    let sc = scripted(1500.0, 1, 1, vec![Feature::Curve { at_m: 600.0, sweep_deg: 45.0, radii: vec![200.0] }], 6);
    let mut sc = sc;
    sc.speed_mps = 15.0;
    let (trace, _) = simulate(&sc).unwrap();
    let curves = detect_curves(&smoothed(&trace, |s| s.accel[0]), &smoothed(&trace, |s| s.gyro[2]), &det());
    assert_eq!(curves.len(), 1);
    assert!((190.0..=210.0).contains(&curves[0].radius_m), "{}", curves[0].radius_m);
}

#[test]
fn long_gentle_bend_is_one_curve() {
    // 40 degrees over 20 s at 15 m/s
    let r = 15.0 * 20.0 / 40f64.to_radians();
    let sc = scripted(2000.0, 1, 1, vec![Feature::Curve { at_m: 700.0, sweep_deg: 40.0, radii: vec![r] }], 7);
    let (trace, _) = simulate(&sc).unwrap();
    let curves = detect_curves(&smoothed(&trace, |s| s.accel[0]), &smoothed(&trace, |s| s.gyro[2]), &det());
    assert_eq!(curves.len(), 1);
    assert!((curves[0].radius_m - r).abs() <= 0.1 * r, "{} vs {r}", curves[0].radius_m);
}

#[test]
fn tunnel_variance_follows_the_driven_lane() {
    let profile = [25.0, 9.0, 4.0];
    for lane in 1..=3 {
        let tunnel = Feature::Tunnel { entry_m: 600.0, exit_m: 900.0, variances: profile.to_vec() };
        let (trace, _) = simulate(&scripted(1500.0, 3, lane, vec![tunnel], 20 + lane as u64)).unwrap();
        let x = detect_tunnel_feature(&TimeSeries::from_samples(&trace.samples, |s| s.mag[0]), &det());
        assert_eq!(x.len(), 1, "lane {lane}");
        let want = profile[lane as usize - 1];
        assert!((x[0].plateau_variance - want).abs() <= 0.2 * want, "lane {lane}: {} vs {want}", x[0].plateau_variance);
    }
}

#[test]
fn pothole_gives_one_observation_at_its_location() {
    let sc = scripted(1500.0, 3, 2, vec![Feature::Pothole { at_m: 700.0, lane: 2 }], 30);
    let (trace, truth) = simulate(&sc).unwrap();
    let at = truth.ledger.iter().find(|e| e.kind == TruthKind::Pothole).unwrap().location;
    let events = detect_all(&trace, &sc.map, &Config::default()).unwrap();
    let obs: Vec<_> = events
        .iter()
        .filter_map(|e| match e {
            DetectedEvent::Anchor(o) if o.kind == ObservationKind::SurfaceAnomaly => Some(o),
            _ => None,
        })
        .collect();
    assert_eq!(obs.len(), 1);
    assert!(haversine(obs[0].location, at) <= 10.0, "{} m", haversine(obs[0].location, at));
}

#[test]
fn bump_is_felt_in_every_lane() {
    for lane in 1..=3 {
        let (trace, _) = simulate(&scripted(1500.0, 3, lane, vec![Feature::Bump { at_m: 700.0 }], 40 + lane as u64)).unwrap();
        let x = detect_surface_anomaly(&TimeSeries::from_samples(&trace.samples, |s| s.accel[2]), &det());
        assert_eq!(x.len(), 1, "lane {lane}");
    }
}
