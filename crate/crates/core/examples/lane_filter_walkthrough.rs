//! The lane filter by hand on a 4-lane road: three detected right lane
//! changes from a uniform belief, then a pothole known to sit in lane 3.

use lanequest::events::MotionKind;
use lanequest::filter::{init_belief, motion_update, perception_update, LaneBelief, MotionConfusion};

fn show(label: &str, b: &LaneBelief) {
    let p: Vec<String> = b.probs().iter().map(|x| format!("{x:.3}")).collect();
    println!("{label:<22} [{}]  -> lane {}", p.join(", "), b.argmax());
}

fn main() -> lanequest::Result<()> {
    let confusion = MotionConfusion::calibrated();
    let mut belief = init_belief(4)?;
    show("start", &belief);
    for k in 1..=3 {
        belief = motion_update(&belief, MotionKind::Right, &confusion)?;
        show(&format!("right change {k}"), &belief);
    }
    // a crowd-learned pothole: mostly lane 3, some reports from lane 4
    let pothole = [0.0, 0.05, 0.85, 0.10];
    let after = perception_update(&belief, &pothole, 0.5)?;
    show("pothole (lane 3)", &after);
    let shifted = motion_update(&init_belief(4)?, MotionKind::Left, &confusion)?;
    show("uniform, one left", &shifted);
    Ok(())
}
