//! Learns the reachable tool poses of a planar two-link arm and checks the
//! density threshold against closed-form inverse kinematics.

use fdgrasp::rmm::EmConfig;
use fdgrasp::robot::{planar_2link_ik, wrap, yaw, ReachabilityModel, RobotModel};
use fdgrasp::Pose;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};

fn main() {
    let arm = RobotModel::planar_2link();
    let data = arm.reachability_dataset(2000, -1e9, 1);
    let model = ReachabilityModel::fit(&data, &[8, 16, 24], 2, 0.99, &EmConfig::default()).expect("fit");
    println!("k = {}, log threshold {:.3}", model.k, model.log_threshold);

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let (mut agree, mut total) = (0, 0);
    for i in 0..300 {
        // Half the probes are attained poses, half random placements.
        let x = if i % 2 == 0 {
            arm.fk(&arm.random_config(&mut rng))
        } else {
            let r = rng.random_range(0.0..2.6);
            let a = rng.random_range(-3.14..3.14);
            Pose::new(yaw(rng.random_range(-3.14..3.14)), Vector3::new(r * f64::cos(a), r * f64::sin(a), 0.0))
        };
        let heading = x.rotation[(1, 0)].atan2(x.rotation[(0, 0)]);
        let truth = planar_2link_ik(1.0, 1.0, x.translation.x, x.translation.y)
            .iter()
            .any(|s| wrap(s[0] + s[1] - heading).abs() < 0.05);
        agree += (truth == model.is_reachable(&x)) as usize;
        total += 1;
    }
    println!("agreement with closed-form IK: {agree}/{total}");
}
