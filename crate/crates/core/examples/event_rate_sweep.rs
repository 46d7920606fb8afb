//! Accuracy as the usable event stream is thinned to a target number of
//! events per hour, on hour-long laps of the city layout.
//!
//! cargo run --release --example event_rate_sweep

use lanequest::config::Config;
use lanequest::eval::{sweep_event_rate, SweepTrip};
use lanequest::pipeline::{detect_fleet, learn_fleet};
use lanequest::presets;
use lanequest::sim::generate_fleet;

fn main() -> lanequest::Result<()> {
    let cfg = Config::default();
    let scenario = presets::city_tour(7, 4);
    let learn = generate_fleet(&scenario, 20, 1)?;
    let traces: Vec<_> = learn.into_iter().map(|(t, _)| t).collect();
    let (store, _) = learn_fleet(&detect_fleet(&traces, &scenario.map, &cfg)?, &cfg)?;

    let eval = generate_fleet(&scenario, 30, 3)?;
    let traces: Vec<_> = eval.iter().map(|(t, _)| t.clone()).collect();
    let events = detect_fleet(&traces, &scenario.map, &cfg)?;
    let trips: Vec<SweepTrip> = eval
        .into_iter()
        .zip(events)
        .map(|((trace, truth), events)| SweepTrip {
            duration_s: trace.samples.last().map_or(0.0, |s| s.t),
            events,
            truth,
        })
        .collect();
    let rates = [5.0, 10.0, 30.0, 60.0, 120.0, 1000.0];
    println!("{:>10} {:>8} {:>8} {:>8}", "events/h", "kept", "exact", "within1");
    for p in sweep_event_rate(&trips, &store, &rates, &cfg, 42)? {
        println!(
            "{:>10} {:>8} {:>8.3} {:>8.3}",
            p.rate_per_hour, p.events_kept, p.report.exact_lane_accuracy, p.report.within_one_lane_accuracy
        );
    }
    Ok(())
}
