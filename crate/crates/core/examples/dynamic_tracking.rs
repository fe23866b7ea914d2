//! Both controllers chase a sphere moving on a circle; prints the metric
//! table with deltas against the task controller.

use std::path::Path;

use fdgrasp::sim::{compare_controllers, run_comparison, Scenario};

fn main() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/scenarios/circular.json");
    let scenario = Scenario::load(&path).expect("scenario");
    println!("object speed {:.3} m/s", scenario.cfg.trajectory.max_speed());
    let runs = run_comparison(&scenario, &scenario.cfg.compare).expect("runs");
    print!("{}", compare_controllers(&runs).table());
}
