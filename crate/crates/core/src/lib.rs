//! Feasible dynamic grasping: distance-field shape completion, SE(3)
//! mixture models over grasps and reachable poses, and two reactive
//! controllers that track moving objects.

pub mod cli;
pub mod cloud;
pub mod control;
pub mod gpdf;
pub mod rmm;
pub mod robot;
pub mod grasp;
pub mod se3;
pub mod shapes;
pub mod sim;

pub use cloud::PointCloud;
pub use gpdf::GpdfModel;
pub use se3::{Pose, Tangent};
