//! Samples antipodal grasps on a box and a sphere, then checks that moving
//! the cloud moves the grasps with it.

use fdgrasp::grasp::{self, PipelineConfig};
use fdgrasp::shapes::Shape;
use fdgrasp::Pose;
use nalgebra::Vector3;

fn main() {
    let cfg = PipelineConfig {
        n: 48,
        ..PipelineConfig::default()
    };
    for (name, shape) in [
        ("sphere", Shape::sphere(0.035)),
        ("box", Shape::cuboid(Vector3::new(0.02, 0.03, 0.04))),
    ] {
        let cloud = shape.surface_cloud(400);
        let set = grasp::run_pipeline(&cloud, &cfg).expect("pipeline");
        let best = set.grasps.iter().map(|g| g.quality).fold(f64::INFINITY, f64::min);
        println!(
            "{name}: {} completed points, {} candidates, {} accepted, best quality {best:.4}",
            set.completed.len(),
            set.candidates,
            set.grasps.len()
        );
        let g = Pose::from_axis_angle(&Vector3::new(1.0, 2.0, -0.5).normalize(), 0.9)
            .compose(&Pose::from_translation(Vector3::new(0.4, -0.1, 0.3)));
        let (dt, dr) = grasp::check_equivariance(&cfg, &cloud, &g).expect("pipeline");
        println!("  equivariance deviation {dt:.2e} m, {dr:.2e} rad");
    }
}
