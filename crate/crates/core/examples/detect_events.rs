//! Runs every detector over one simulated trip and scores the detections
//! against the scripted ledger.

use lanequest::config::Config;
use lanequest::eval::score_detections;
use lanequest::events::events_to_text;
use lanequest::pipeline::detect_all;
use lanequest::presets;
use lanequest::sim::simulate;

fn main() -> lanequest::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let scenario = presets::city(seed);
    let (trace, truth) = simulate(&scenario)?;
    let events = detect_all(&trace, &scenario.map, &Config::default())?;
    print!("{}", events_to_text(&events));
    println!();
    for (class, s) in score_detections(&events, &truth) {
        println!("{class:<16} tp {:>3}  fp {:>3}  fn {:>3}", s.true_positives, s.false_positives, s.false_negatives);
    }
    Ok(())
}
