//! Recovers curve radii from centripetal acceleration and yaw rate, first
//! from exact circular motion and then from noisy simulated drives.
//! Sweeps stay under the turn window so the arcs read as curves.

use lanequest::config::Config;
use lanequest::detect::{detect_curves, estimate_curve_radius};
use lanequest::preprocess::{lowpass_smooth, TimeSeries};
use lanequest::sim::{simulate, straight_road, Feature, Scenario, StartMode};
use lanequest::geo::LatLon;

fn main() -> lanequest::Result<()> {
    let cfg = Config::default().detector;
    for r in [50.0, 120.0, 300.0] {
        let v = 12.0;
        let w = v / r;
        let est = estimate_curve_radius(w * w * r, w, cfg.omega_min)?;
        println!("exact motion   r={r:>5.0}  estimate {est:.9}");
    }
    for (i, r) in [50.0, 100.0, 200.0, 300.0].into_iter().enumerate() {
        let mut sc = Scenario::new(straight_road(LatLon::new(31.2, 29.9), &[(1500.0, 1)])?);
        sc.seed = 10 + i as u64;
        sc.start = StartMode::Lane(1);
        sc.lane_changes_per_km = 0.0;
        sc.speed_mps = 10.0;
        sc.features = vec![Feature::Curve { at_m: 600.0, sweep_deg: 45.0, radii: vec![r] }];
        let (trace, _) = simulate(&sc)?;
        let ax = lowpass_smooth(&TimeSeries::from_samples(&trace.samples, |s| s.accel[0]), cfg.smoothing_window_s);
        let gz = lowpass_smooth(&TimeSeries::from_samples(&trace.samples, |s| s.gyro[2]), cfg.smoothing_window_s);
        for c in detect_curves(&ax, &gz, &cfg) {
            println!(
                "noisy drive    r={r:>5.0}  estimate {:>7.1}  error {:>5.1}%",
                c.radius_m,
                100.0 * (c.radius_m - r).abs() / r
            );
        }
    }
    Ok(())
}
