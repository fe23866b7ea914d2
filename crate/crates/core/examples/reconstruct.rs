//! Completes a half-visible sphere through its distance field and compares
//! raw, refined and analytic distances along a ray.

use fdgrasp::gpdf::{self, GpdfModel};
use fdgrasp::shapes::{visible_half, Shape};
use fdgrasp::{Pose, PointCloud};
use nalgebra::Vector3;

fn main() {
    let radius = 0.04;
    let sphere = Shape::sphere(radius);
    let seen = visible_half(&sphere.surface_cloud(400), &Vector3::zeros(), &Vector3::new(-1.0, 0.0, 0.3));
    let partial = PointCloud::new(seen.points.clone());
    let model = GpdfModel::fit(&partial, gpdf::DEFAULT_LENGTHSCALE, gpdf::DEFAULT_NOISE_VAR).expect("fit");

    let region = gpdf::expanded_region(&partial, &Pose::identity(), 1.5);
    let done = gpdf::complete_shape(&model, &region, [10, 10, 10], f64::INFINITY);
    let off: f64 = done.points.iter().map(|p| (p.norm() - radius).abs()).sum::<f64>() / done.len() as f64;
    println!("{} visible points -> {} completed, mean surface offset {:.2e} m", partial.len(), done.len(), off);

    println!("{:>8} {:>10} {:>10} {:>10}", "r", "raw", "refined", "true");
    for r in [0.05, 0.06, 0.08, 0.1] {
        let x = Vector3::new(0.0, r, 0.0);
        let raw = model.distance3(&x);
        let refined = model.refine3(&x, gpdf::DEFAULT_REFINE_ITERS).distance;
        println!("{r:>8.3} {raw:>10.4} {refined:>10.4} {:>10.4}", sphere.sdf(&x));
    }
}
