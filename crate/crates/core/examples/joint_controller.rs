//! Joint-space controller: IK solutions for the accepted grasps become a
//! distance field over configurations that the arm descends.

use std::path::Path;

use fdgrasp::sim::{prepare, random_start, run_from, ControllerKind, Scenario};
use nalgebra::DVector;

fn main() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/scenarios/static_sphere.json");
    let scenario = Scenario::load(&path).expect("scenario").with_controller(ControllerKind::Joint);
    let setup = prepare(&scenario).expect("setup");
    let joint = setup.joint.as_ref().expect("joint controller");
    println!("{} IK solutions across {} grasps", joint.solutions.len(), joint.grasps.len());
    let home = DVector::from_vec(scenario.cfg.start.clone().expect("start"));
    for seed in 0..5 {
        let q0 = random_start(&scenario.robot, &home, 1.0, seed);
        let m = run_from(&scenario, &setup, &q0);
        println!(
            "seed {seed}: start field distance {:.3}, latched {} at {:?} s",
            joint.distance(&q0),
            m.grasp_latched,
            m.latch_time
        );
    }
}
