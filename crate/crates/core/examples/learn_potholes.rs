//! Learns surface anomalies from a 30-trip fleet and tells potholes, which
//! concentrate in one lane, from full-width calming devices.

use lanequest::anchor::AnchorKind;
use lanequest::config::Config;
use lanequest::pipeline::{detect_fleet, learn_fleet};
use lanequest::presets;
use lanequest::sim::generate_fleet;

fn main() -> lanequest::Result<()> {
    let cfg = Config::default();
    let scenario = presets::potholes(0);
    let fleet = generate_fleet(&scenario, 30, 11)?;
    let traces: Vec<_> = fleet.into_iter().map(|(t, _)| t).collect();
    let events = detect_fleet(&traces, &scenario.map, &cfg)?;
    let (store, _) = learn_fleet(&events, &cfg)?;
    for a in store.iter() {
        if matches!(a.kind, AnchorKind::Pothole | AnchorKind::CalmingDevice) {
            let along = lanequest::geo::haversine(presets::ORIGIN, a.centroid);
            let p: Vec<String> = a.lane_distribution.iter().map(|x| format!("{x:.2}")).collect();
            println!("{:<14} at {:>6.0} m  support {:>3}  lanes [{}]", a.kind.to_string(), along, a.support_count, p.join(" "));
        }
    }
    println!("scripted: potholes in lanes 4, 1, 2 at 900, 2200, 2900 m; bump at 4500 m");
    Ok(())
}
