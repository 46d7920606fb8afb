//! Full loop on the city preset: simulate a fleet, detect events, learn
//! anchors from one half, then estimate lanes on fresh trips and report
//! accuracy against ground truth and a GPS nearest-lane baseline.
//!
//! cargo run --release --example city_evaluation -- [learn_trips] [eval_trips]

use std::collections::BTreeMap;
use std::time::Instant;

use lanequest::config::Config;
use lanequest::eval::{evaluate_many, gps_baseline, score_detections, DetectionScore, Tally};
use lanequest::pipeline::{detect_fleet, estimate, learn_fleet};
use lanequest::presets;
use lanequest::sim::generate_fleet;

fn main() -> lanequest::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let learn_trips = args.first().copied().unwrap_or(60);
    let eval_trips = args.get(1).copied().unwrap_or(100);
    let cfg = Config::default();
    let scenario = presets::city(7);
    let clock = Instant::now();

    let learn_set = generate_fleet(&scenario, learn_trips, 1)?;
    let traces: Vec<_> = learn_set.iter().map(|(t, _)| t.clone()).collect();
    let events = detect_fleet(&traces, &scenario.map, &cfg)?;
    let (store, report) = learn_fleet(&events, &cfg)?;
    println!(
        "learned {} anchors from {} trips ({} noise points), sigmas {:?}",
        store.len(),
        learn_trips,
        report.noise,
        store.sigmas()
    );

    let eval_set = generate_fleet(&scenario, eval_trips, 2)?;
    let traces: Vec<_> = eval_set.iter().map(|(t, _)| t.clone()).collect();
    let events = detect_fleet(&traces, &scenario.map, &cfg)?;
    let mut runs = Vec::new();
    let mut detection: BTreeMap<&str, DetectionScore> = BTreeMap::new();
    let mut baseline = Tally::default();
    for ((trace, truth), ev) in eval_set.iter().zip(&events) {
        let run = estimate(ev, &store, &cfg)?;
        runs.push((run.estimates, truth.clone()));
        for (k, s) in score_detections(ev, truth) {
            detection.entry(k).or_default().add(&s);
        }
        baseline.compare(gps_baseline(trace, &scenario.map, cfg.preprocess.snap_radius_m), truth);
    }
    let overall = evaluate_many(&runs, false)?;
    let steady = evaluate_many(&runs, true)?;
    let gps = baseline.report()?;
    println!("{:<16} {:>8} {:>8}", "scope", "exact", "within1");
    for (name, r) in [("filter", &overall), ("filter steady", &steady), ("gps nearest", &gps)] {
        println!("{name:<16} {:>8.3} {:>8.3}", r.exact_lane_accuracy, r.within_one_lane_accuracy);
    }
    println!("mean transient {:.0} s", overall.transient_seconds.unwrap_or(f64::NAN));
    println!("{:<16} {:>5} {:>5} {:>5} {:>6} {:>6}", "class", "tp", "fp", "fn", "prec", "recall");
    for (k, s) in &detection {
        println!(
            "{k:<16} {:>5} {:>5} {:>5} {:>6.3} {:>6.3}",
            s.true_positives,
            s.false_positives,
            s.false_negatives,
            s.precision(),
            s.recall()
        );
    }
    println!("elapsed {:.1} s", clock.elapsed().as_secs_f64());
    Ok(())
}
