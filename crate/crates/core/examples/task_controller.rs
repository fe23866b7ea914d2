//! Task-space controller on the bundled static-sphere scenario from a few
//! perturbed starts.

use std::path::Path;

use fdgrasp::sim::{prepare, random_start, run_from, Scenario};
use nalgebra::DVector;

fn main() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/scenarios/static_sphere.json");
    let scenario = Scenario::load(&path).expect("scenario");
    let setup = prepare(&scenario).expect("setup");
    println!("{} accepted grasps", setup.accepted().len());
    let home = DVector::from_vec(scenario.cfg.start.clone().expect("start"));
    for seed in 0..5 {
        let q0 = random_start(&scenario.robot, &home, 1.0, seed);
        let m = run_from(&scenario, &setup, &q0);
        println!(
            "seed {seed}: latched {} at {:?} s, final error {:.4} m / {:.4} rad",
            m.grasp_latched, m.latch_time, m.final_position_error, m.final_rotation_error
        );
    }
}
