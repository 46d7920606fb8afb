//! Simulates one city trip and prints its scripted event ledger, then
//! checks that the trace survives a text round trip.
//!
//! cargo run --release --example simulate_trip -- [seed]

use lanequest::presets;
use lanequest::sim::simulate;
use lanequest::trace::DriveTrace;

fn main() -> lanequest::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let (trace, truth) = simulate(&presets::city(seed))?;
    let duration = trace.samples.last().map_or(0.0, |s| s.t);
    println!(
        "{} samples, {} fixes, {:.0} s, starting in lane {}",
        trace.samples.len(),
        trace.fixes.len(),
        duration,
        truth.labels[0].lane
    );
    println!("{:>8} {:>8}  {:<22} {:>5} {:>6}", "start", "end", "event", "lane", "lanes");
    for e in &truth.ledger {
        println!("{:>8.1} {:>8.1}  {:<22} {:>5} {:>6}", e.start, e.end, format!("{:?}", e.kind), e.lane, e.lane_count);
    }
    let text = trace.to_text();
    let back = DriveTrace::from_text(&text)?;
    assert_eq!(back, trace);
    println!("trace text: {} bytes, round trip exact", text.len());
    Ok(())
}
