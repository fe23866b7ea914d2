//! Fits Riemannian mixtures to three pose clusters, picks k by BIC and
//! follows the log-density gradient toward a mode.

use fdgrasp::rmm::{fit_em, select_k_bic, EmConfig};
use fdgrasp::se3::{exp_at, Tangent};
use fdgrasp::Pose;
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

fn main() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let noise = Normal::new(0.0, 0.01).unwrap();
    let centers = [
        Pose::identity(),
        Pose::new(Pose::from_axis_angle(&Vector3::z(), 1.2).rotation, Vector3::new(0.6, 0.0, 0.0)),
        Pose::new(Pose::from_axis_angle(&Vector3::x(), -0.8).rotation, Vector3::new(0.0, 0.5, 0.3)),
    ];
    let mut poses = Vec::new();
    for c in &centers {
        for _ in 0..60 {
            let v: Vec<f64> = (0..6).map(|_| noise.sample(&mut rng)).collect();
            poses.push(exp_at(c, &Tangent::from_slice(&v)));
        }
    }
    let cfg = EmConfig::default();
    for k in 1..=5 {
        let fit = fit_em(&poses, k, 0, &cfg).expect("em");
        println!("k {k}: log-likelihood {:10.2}  bic {:10.2}", fit.log_likelihood, fit.bic(poses.len()));
    }
    let (k, fit) = select_k_bic(&poses, &[1, 2, 3, 4, 5], 0, &cfg).expect("em");
    println!("bic picks k = {k}");

    let mix = fit.mixture;
    let mut x = Pose::new(Pose::from_axis_angle(&Vector3::z(), 0.9).rotation, Vector3::new(0.45, 0.1, 0.05));
    // Scaling by the component variance gives a Newton-sized step.
    for step in 0..6 {
        println!("step {step}: log density {:.3}", mix.log_prob(&x));
        let g = mix.log_grad(&x);
        x = x.oplus(&Tangent(g.0 * 0.5e-4));
    }
    println!("{} modes", mix.modes().len());
}
