//! Acceptance criteria 1 to 10, one pass/fail line each.
//!
//! Runs without the libtest harness so the report lines always reach the
//! terminal: `cargo test --release --test acceptance`.

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use common::{archetype_store, dbscan_oracle, forward_oracle, offset, synthetic_corpus, to_events, Symbol, ALPHABET, BASE};
use lanequest::anchor::AnchorKind;
use lanequest::config::Config;
use lanequest::detect::{detect_curves, estimate_curve_radius, interval_radius};
use lanequest::eval::{evaluate_many, score_detections, sweep_event_rate, DetectionScore, SweepTrip, BOOTSTRAP_CLASSES};
use lanequest::events::{events_to_text, DetectedEvent, MotionKind};
use lanequest::filter::{init_belief, motion_update, run_filter, FilterConfig, MotionConfusion};
use lanequest::geo::{haversine, LatLon};
use lanequest::learn::{feature_cluster, learn_anchors, spatial_cluster, tv_distance, ClusterParams};
use lanequest::pipeline::{detect_fleet, estimate, learn_fleet};
use lanequest::preprocess::{lowpass_smooth, TimeSeries};
use lanequest::presets;
use lanequest::repo::AnchorStore;
use lanequest::sim::{generate_fleet, simulate, straight_road, GroundTruth, Scenario, StartMode};
use lanequest::trace::DriveTrace;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn max_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest deviation of the filter from the forward recursion on `seq`.
fn filter_error(n: usize, seq: &[Symbol], store: &AnchorStore) -> f64 {
    let confusion = MotionConfusion::calibrated();
    let cfg = FilterConfig::default();
    let run = run_filter(&to_events(seq), store, &confusion, n as u32, &cfg).unwrap();
    let want = forward_oracle(n, seq, confusion.rows(), cfg.idle_motion);
    let mut worst: f64 = 0.0;
    for (i, w) in want.iter().enumerate() {
        let got = match run.prior_beliefs.get(i + 1) {
            Some(b) => b.probs(),
            None => run.estimates.last().unwrap().belief.probs(),
        };
        worst = worst.max(max_err(got, w));
    }
    worst
}

fn c1_filter_oracle() -> Outcome {
    let clock = Instant::now();
    let mut worst: f64 = 0.0;
    let mut sequences = 0;
    for n in 1..=5 {
        let store = archetype_store(n);
        for len in 0..=6u32 {
            for code in 0..5usize.pow(len) {
                let seq: Vec<Symbol> = (0..len).map(|k| ALPHABET[(code / 5usize.pow(k)) % 5]).collect();
                worst = worst.max(filter_error(n, &seq, &store));
                sequences += 1;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let n = rng.random_range(1..=5);
        let len = rng.random_range(0..=10);
        let seq: Vec<Symbol> = (0..len).map(|_| ALPHABET[rng.random_range(0..5)]).collect();
        worst = worst.max(filter_error(n, &seq, &archetype_store(n)));
        sequences += 1;
    }
    let secs = clock.elapsed().as_secs_f64();
    check(
        worst <= 1e-9 && secs < 30.0,
        format!("{sequences} sequences, max error {worst:.2e}, {secs:.1} s"),
    )
}

fn c2_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0usize;
    let mut worst: f64 = 0.0;
    let mut negative = 0;
    while checked < 10_000 {
        let n = rng.random_range(1..=6);
        let seq: Vec<Symbol> = (0..50).map(|_| ALPHABET[rng.random_range(0..5)]).collect();
        let run = run_filter(&to_events(&seq), &archetype_store(n), &MotionConfusion::calibrated(), n as u32, &FilterConfig::default())
            .unwrap();
        for b in run.prior_beliefs.iter().skip(1).chain(run.estimates.last().map(|e| &e.belief)) {
            worst = worst.max((b.probs().iter().sum::<f64>() - 1.0).abs());
            negative += b.probs().iter().filter(|&&p| p < 0.0).count();
            checked += 1;
        }
    }
    check(
        worst <= 1e-9 && negative == 0,
        format!("{checked} updates, max |sum - 1| {worst:.2e}, {negative} negative entries"),
    )
}

fn c3_worked_example() -> Outcome {
    let confusion = MotionConfusion::calibrated();
    let mut b = init_belief(4).unwrap();
    for _ in 0..3 {
        b = motion_update(&b, MotionKind::Right, &confusion).unwrap();
    }
    let p4 = b.probs()[3];
    check(p4 > 0.9, format!("P(lane 4) = {p4:.4}"))
}

fn traces_of(fleet: &[(DriveTrace, GroundTruth)]) -> Vec<DriveTrace> {
    fleet.iter().map(|(t, _)| t.clone()).collect()
}

fn c4_end_to_end() -> Outcome {
    let clock = Instant::now();
    let cfg = Config::default();
    let sc = presets::city(7);
    let learn = generate_fleet(&sc, 60, 1).unwrap();
    let (store, _) = learn_fleet(&detect_fleet(&traces_of(&learn), &sc.map, &cfg).unwrap(), &cfg).unwrap();
    let eval = generate_fleet(&sc, 100, 2).unwrap();
    let events = detect_fleet(&traces_of(&eval), &sc.map, &cfg).unwrap();
    let runs: Vec<_> = eval
        .iter()
        .zip(&events)
        .map(|((_, truth), ev)| (estimate(ev, &store, &cfg).unwrap().estimates, truth.clone()))
        .collect();
    let overall = evaluate_many(&runs, false).unwrap();
    let steady = evaluate_many(&runs, true).unwrap();
    let secs = clock.elapsed().as_secs_f64();
    let (exact, within, st) = (overall.exact_lane_accuracy, overall.within_one_lane_accuracy, steady.exact_lane_accuracy);
    check(
        exact >= 0.70 && within >= 0.85 && st >= exact + 0.05 && secs < 300.0,
        format!("exact {exact:.3}, within-one {within:.3}, steady {st:.3}, {secs:.1} s"),
    )
}

fn c5_event_rate_sweep() -> Outcome {
    let cfg = Config::default();
    let sc = presets::city_tour(7, 4);
    let learn = generate_fleet(&sc, 20, 1).unwrap();
    let (store, _) = learn_fleet(&detect_fleet(&traces_of(&learn), &sc.map, &cfg).unwrap(), &cfg).unwrap();
    let eval = generate_fleet(&sc, 30, 3).unwrap();
    let events = detect_fleet(&traces_of(&eval), &sc.map, &cfg).unwrap();
    let trips: Vec<SweepTrip> = eval
        .into_iter()
        .zip(events)
        .map(|((trace, truth), events)| SweepTrip {
            duration_s: trace.samples.last().map_or(0.0, |s| s.t),
            events,
            truth,
        })
        .collect();
    let rates = [5.0, 10.0, 30.0, 60.0, 120.0];
    let acc: Vec<f64> = sweep_event_rate(&trips, &store, &rates, &cfg, 42)
        .unwrap()
        .iter()
        .map(|p| p.report.exact_lane_accuracy)
        .collect();
    let monotone = acc.windows(2).all(|w| w[1] >= w[0] - 0.03);
    let shown: Vec<String> = rates.iter().zip(&acc).map(|(r, a)| format!("{r}/h {a:.3}")).collect();
    check(acc[1] >= 0.55 && monotone, shown.join(", "))
}

fn c6_detectors() -> Outcome {
    let cfg = Config::default();
    let sc = presets::city(7);
    let mut scores: BTreeMap<&str, DetectionScore> = BTreeMap::new();
    let truths = |s: &BTreeMap<&str, DetectionScore>, k: &str| s.get(k).map_or(0, |x| x.true_positives + x.false_negatives);
    let mut batch = 0;
    loop {
        let turn = truths(&scores, "turn-left") + truths(&scores, "turn-right");
        let enough = ["left-change", "right-change", "curve"].iter().all(|k| truths(&scores, k) >= 200) && turn >= 200;
        if enough || batch == 20 {
            break;
        }
        let fleet = generate_fleet(&sc, 50, 100 + batch).unwrap();
        let events = detect_fleet(&traces_of(&fleet), &sc.map, &cfg).unwrap();
        for ((_, truth), ev) in fleet.iter().zip(&events) {
            for (k, s) in score_detections(ev, truth) {
                scores.entry(k).or_default().add(&s);
            }
        }
        batch += 1;
    }
    let mut turn = DetectionScore::default();
    for k in ["turn-left", "turn-right"] {
        turn.add(&scores.get(k).cloned().unwrap_or_default());
    }
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, s) in [
        ("LeftChange", scores.get("left-change").cloned().unwrap_or_default()),
        ("RightChange", scores.get("right-change").cloned().unwrap_or_default()),
        ("Turn", turn),
        ("Curve", scores.get("curve").cloned().unwrap_or_default()),
    ] {
        let n = s.true_positives + s.false_negatives;
        ok &= n >= 200 && s.precision() >= 0.85 && s.recall() >= 0.85;
        parts.push(format!("{name} {:.3}/{:.3} (n={n})", s.precision(), s.recall()));
    }
    let boot: Vec<&DetectionScore> = BOOTSTRAP_CLASSES.iter().filter_map(|k| scores.get(k)).collect();
    let avg_p = boot.iter().map(|s| s.precision()).sum::<f64>() / boot.len() as f64;
    let avg_r = boot.iter().map(|s| s.recall()).sum::<f64>() / boot.len() as f64;
    ok &= boot.len() == BOOTSTRAP_CLASSES.len() && avg_p >= 0.9 && avg_r >= 0.85;
    parts.push(format!("bootstrap avg {avg_p:.3}/{avg_r:.3}"));
    check(ok, parts.join(", "))
}

fn c7_curve_radius() -> Outcome {
    let det = Config::default().detector;
    let mut exact_err: f64 = 0.0;
    for r in [30.0, 50.0, 120.0, 200.0, 300.0] {
        for v in [10.0, 15.0, 25.0] {
            let w: f64 = v / r;
            exact_err = exact_err.max((estimate_curve_radius(w * w * r, w, det.omega_min).unwrap() - r).abs() / r);
            let t: Vec<f64> = (0..500).map(|i| i as f64 * 0.02).collect();
            let ax = TimeSeries { t: t.clone(), v: vec![w * w * r; t.len()] };
            let gz = TimeSeries { t, v: vec![w; 500] };
            exact_err = exact_err.max((interval_radius(&ax, &gz, 1.0, 9.0, det.omega_min).unwrap() - r).abs() / r);
        }
    }
    let mut noisy_err: f64 = 0.0;
    let mut missing = 0;
    for (i, r) in [50.0, 100.0, 150.0, 200.0, 250.0, 300.0].into_iter().enumerate() {
        let mut sc = Scenario::new(straight_road(LatLon::new(31.2, 29.9), &[(1500.0, 1)]).unwrap());
        sc.seed = 40 + i as u64;
        sc.start = StartMode::Lane(1);
        sc.lane_changes_per_km = 0.0;
        sc.speed_mps = 10.0;
        sc.features = vec![lanequest::sim::Feature::Curve { at_m: 600.0, sweep_deg: 45.0, radii: vec![r] }];
        let (trace, _) = simulate(&sc).unwrap();
        let ax = lowpass_smooth(&TimeSeries::from_samples(&trace.samples, |s| s.accel[0]), det.smoothing_window_s);
        let gz = lowpass_smooth(&TimeSeries::from_samples(&trace.samples, |s| s.gyro[2]), det.smoothing_window_s);
        let curves = detect_curves(&ax, &gz, &det);
        if curves.len() != 1 {
            missing += 1;
            continue;
        }
        noisy_err = noisy_err.max((curves[0].radius_m - r).abs() / r);
    }
    check(
        exact_err <= 1e-6 && noisy_err <= 0.10 && missing == 0,
        format!("noiseless rel. error {exact_err:.2e}, noisy max {:.1}%, {missing} curves missed", 100.0 * noisy_err),
    )
}

fn c8_learning() -> Outcome {
    let (truth, corpus) = synthetic_corpus(21);
    let report = learn_anchors(&corpus, &ClusterParams::default()).unwrap();
    let mut worst_tv: f64 = 0.0;
    let mut worst_late: f64 = 0.0;
    let mut found = 0;
    for (kind, at, q) in &truth {
        let Some(a) = report
            .anchors
            .iter()
            .filter(|a| a.kind == kind.learned_kind() && haversine(a.centroid, *at) < 10.0)
            .min_by(|a, b| haversine(a.centroid, *at).total_cmp(&haversine(b.centroid, *at)))
        else {
            continue;
        };
        found += 1;
        worst_tv = worst_tv.max(tv_distance(&a.lane_distribution, q).unwrap());
        let diag = report.diagnostics.iter().find(|d| d.id == a.id).unwrap();
        // entry k compares the means of k + 2 and k + 1 observations
        worst_late = diag.convergence.iter().skip(18).fold(worst_late, |m, &x| m.max(x));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut mismatches = 0;
    for trial in 0..20 {
        let n = rng.random_range(1..=500);
        let centres: Vec<(f64, f64)> = (0..8).map(|_| (rng.random_range(0.0..800.0), rng.random_range(0.0..800.0))).collect();
        let pts: Vec<LatLon> = (0..n)
            .map(|_| {
                let (cx, cy) = centres[rng.random_range(0..centres.len())];
                offset(BASE, cx + rng.random_range(-30.0..30.0), cy + rng.random_range(-30.0..30.0))
            })
            .collect();
        let eps = rng.random_range(3.0..20.0);
        let min_pts = 2 + trial % 6;
        let got = spatial_cluster(&pts, eps, min_pts);
        let want = dbscan_oracle(n, min_pts, |i, j| haversine(pts[i], pts[j]) <= eps);
        mismatches += usize::from((got.clusters, got.noise) != want);
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..100.0)).collect();
        let got = feature_cluster(&values, eps / 10.0, min_pts);
        let want = dbscan_oracle(n, min_pts, |i, j| (values[i] - values[j]).abs() <= eps / 10.0);
        mismatches += usize::from((got.clusters, got.noise) != want);
    }
    check(
        found == truth.len() && worst_late < 0.05 && worst_tv <= 0.2 && mismatches == 0,
        format!(
            "{found}/{} anchors, late successive TV {worst_late:.4}, final TV {worst_tv:.3}, {mismatches} DBSCAN mismatches",
            truth.len()
        ),
    )
}

fn c9_potholes() -> Outcome {
    let cfg = Config::default();
    let sc = presets::potholes(0);
    let fleet = generate_fleet(&sc, 30, 11).unwrap();
    let (store, _) = learn_fleet(&detect_fleet(&traces_of(&fleet), &sc.map, &cfg).unwrap(), &cfg).unwrap();
    let kind_near = |at_m: f64| {
        store
            .iter()
            .filter(|a| matches!(a.kind, AnchorKind::Pothole | AnchorKind::CalmingDevice))
            .find(|a| (haversine(presets::ORIGIN, a.centroid) - at_m).abs() <= 20.0)
            .map(|a| a.kind)
    };
    let got: Vec<Option<AnchorKind>> = [900.0, 2200.0, 2900.0, 4500.0].into_iter().map(kind_near).collect();
    let want = [Some(AnchorKind::Pothole), Some(AnchorKind::Pothole), Some(AnchorKind::Pothole), Some(AnchorKind::CalmingDevice)];
    check(got == want, format!("900/2200/2900/4500 m classified {got:?}"))
}

fn pipeline_texts(seed: u64) -> Vec<String> {
    let cfg = Config::default();
    let sc = presets::city(seed);
    let fleet = generate_fleet(&sc, 40, seed).unwrap();
    let events = detect_fleet(&traces_of(&fleet), &sc.map, &cfg).unwrap();
    let (store, _) = learn_fleet(&events, &cfg).unwrap();
    let runs: Vec<_> = fleet
        .iter()
        .zip(&events)
        .map(|((_, truth), ev)| (estimate(ev, &store, &cfg).unwrap().estimates, truth.clone()))
        .collect();
    let report = evaluate_many(&runs, false).unwrap();
    let mut out: Vec<String> = fleet.iter().map(|(t, g)| t.to_text() + &g.to_text()).collect();
    out.extend(events.iter().map(|e: &Vec<DetectedEvent>| events_to_text(e)));
    out.push(store.to_text());
    out.push(serde_json::to_string(&report).unwrap());
    out
}

fn c10_determinism() -> Outcome {
    let a = pipeline_texts(5);
    let b = pipeline_texts(5);
    let differing = a.iter().zip(&b).filter(|(x, y)| x != y).count() + a.len().abs_diff(b.len());
    let bytes: usize = a.iter().map(String::len).sum();
    check(differing == 0, format!("{} artefacts, {bytes} bytes, {differing} differ", a.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("C1 filter matches forward recursion", c1_filter_oracle),
        ("C2 beliefs stay normalised", c2_normalization),
        ("C3 three right changes reach lane 4", c3_worked_example),
        ("C4 end-to-end lane accuracy", c4_end_to_end),
        ("C5 event-rate sweep", c5_event_rate_sweep),
        ("C6 detector precision and recall", c6_detectors),
        ("C7 curve radius", c7_curve_radius),
        ("C8 learning convergence and DBSCAN", c8_learning),
        ("C9 pothole disambiguation", c9_potholes),
        ("C10 determinism", c10_determinism),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let clock = Instant::now();
        let (status, detail) = match run() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{status} {name}: {detail} [{:.1} s]", clock.elapsed().as_secs_f64());
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
