//! Antipodal jaw grasps on a distance field, the collision and
//! force-closure post-filters, and the equivariant sampling pipeline.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::PointCloud;
use crate::gpdf::{self, GpdfError, GpdfModel, DEFAULT_REFINE_ITERS};
use crate::se3::Pose;

pub const FORCE_CLOSURE_THRESHOLD: f64 = -0.95;
pub const DEFAULT_MARGIN: f64 = 0.003;
pub const ROLLS: usize = 8;
const MARCH_START: f64 = 0.001;
const MARCH_STEP: f64 = 0.002;
const BISECT_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraspError {
    #[error("surface normal is undefined at a contact")]
    DegenerateNormal,
    #[error("gripper spec is invalid: {0}")]
    BadGripper(&'static str),
    #[error("completed cloud has no normals")]
    MissingNormals,
    #[error(transparent)]
    Fit(#[from] GpdfError),
}

/// Parallel-jaw gripper geometry in its own frame. The frame origin sits
/// midway between the fingertips.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GripperSpec {
    pub max_width: f64,
    pub finger_clearance_points: Vec<[f64; 3]>,
    pub approach_axis: [f64; 3],
    pub closing_axis: [f64; 3],
}

impl GripperSpec {
    /// Two fingers just outside the fully open stroke plus a palm row behind
    /// them. Approach is +z, closing is +y.
    pub fn jaw(max_width: f64) -> Self {
        let mut pts = Vec::new();
        let y = max_width * 0.5 + 0.005;
        for side in [-1.0, 1.0] {
            for z in [-0.03, -0.015, 0.0, 0.01] {
                for x in [-0.01, 0.0, 0.01] {
                    pts.push([x, side * y, z]);
                }
            }
        }
        for i in 0..5 {
            let yy = -y + 2.0 * y * i as f64 / 4.0;
            for x in [-0.01, 0.01] {
                pts.push([x, yy, -0.05]);
            }
        }
        Self {
            max_width,
            finger_clearance_points: pts,
            approach_axis: [0.0, 0.0, 1.0],
            closing_axis: [0.0, 1.0, 0.0],
        }
    }

    pub fn approach(&self) -> Vector3<f64> {
        Vector3::from(self.approach_axis)
    }

    pub fn closing(&self) -> Vector3<f64> {
        Vector3::from(self.closing_axis)
    }

    pub fn clearance_points(&self) -> impl Iterator<Item = Vector3<f64>> + '_ {
        self.finger_clearance_points.iter().map(|p| Vector3::from(*p))
    }

    pub fn validate(&self) -> Result<(), GraspError> {
        if !(self.max_width > 0.0) {
            return Err(GraspError::BadGripper("max_width must be positive"));
        }
        let (a, c) = (self.approach(), self.closing());
        if (a.norm() - 1.0).abs() > 1e-9 || (c.norm() - 1.0).abs() > 1e-9 || a.dot(&c).abs() > 1e-9 {
            return Err(GraspError::BadGripper("axes must be orthonormal"));
        }
        Ok(())
    }

    /// Rotation sending the gripper's closing and approach axes to the given
    /// world directions.
    pub fn orientation(&self, closing: &Vector3<f64>, approach: &Vector3<f64>) -> Matrix3<f64> {
        let (cg, ag) = (self.closing(), self.approach());
        let world = Matrix3::from_columns(&[*closing, *approach, closing.cross(approach)]);
        let local = Matrix3::from_columns(&[cg, ag, cg.cross(&ag)]);
        world * local.transpose()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspPose {
    pub pose: Pose,
    pub width: f64,
    pub contacts: [[f64; 3]; 2],
    /// Cosine similarity of the contact normals; -1 is perfectly antipodal.
    pub quality: f64,
}

impl GraspPose {
    pub fn contact_a(&self) -> Vector3<f64> {
        Vector3::from(self.contacts[0])
    }

    pub fn contact_b(&self) -> Vector3<f64> {
        Vector3::from(self.contacts[1])
    }

    pub fn closing_axis(&self, gripper: &GripperSpec) -> Vector3<f64> {
        self.pose.rotation * gripper.closing()
    }

    pub fn transformed(&self, g: &Pose) -> GraspPose {
        GraspPose {
            pose: g.compose(&self.pose),
            width: self.width,
            contacts: [
                g.transform_point(&self.contact_a()).into(),
                g.transform_point(&self.contact_b()).into(),
            ],
            quality: self.quality,
        }
    }
}

fn surface_normal(model: &GpdfModel, p: &Vector3<f64>) -> Result<Vector3<f64>, GraspError> {
    let r = model.refine3(p, DEFAULT_REFINE_ITERS);
    let n = r.normal3();
    if n.norm() < 0.5 {
        return Err(GraspError::DegenerateNormal);
    }
    Ok(n)
}

/// Cosine similarity of the refined field normals at the two contacts.
pub fn force_closure_score(model: &GpdfModel, grasp: &GraspPose) -> Result<f64, GraspError> {
    let na = surface_normal(model, &grasp.contact_a())?;
    let nb = surface_normal(model, &grasp.contact_b())?;
    Ok(na.dot(&nb).clamp(-1.0, 1.0))
}

/// True iff every clearance point, placed by the grasp pose, has refined
/// distance greater than `margin`.
pub fn validate_collision(model: &GpdfModel, grasp: &GraspPose, gripper: &GripperSpec, margin: f64) -> bool {
    gripper.clearance_points().all(|p| {
        let w = grasp.pose.transform_point(&p);
        model.refine3(&w, DEFAULT_REFINE_ITERS).distance > margin
    })
}

/// Finds where the ray `start - t dir` leaves the object, for `t` in
/// `[MARCH_START, max_t]`. Returns `t` at the exit.
fn find_exit(model: &GpdfModel, start: &Vector3<f64>, dir: &Vector3<f64>, max_t: f64) -> Option<f64> {
    let f = |t: f64| model.refine3(&(start - dir * t), DEFAULT_REFINE_ITERS).distance;
    let mut lo = MARCH_START;
    if f(lo) >= 0.0 {
        return None;
    }
    let mut hi = lo;
    loop {
        let next = (hi + MARCH_STEP).min(max_t);
        if next <= hi {
            return None;
        }
        if f(next) > 0.0 {
            hi = next;
            break;
        }
        lo = next;
        hi = next;
    }
    while hi - lo > BISECT_TOL {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Unit vector perpendicular to `axis`, taken from the model frame's x
/// axis (y when x is nearly parallel).
fn reference_perpendicular(axis: &Vector3<f64>) -> Vector3<f64> {
    let pick = if axis.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    (pick - axis * axis.dot(&pick)).normalize()
}

/// Antipodal candidates: for each sampled completed point, the ray along
/// its inward normal is marched to the far side of the object, and the
/// resulting contact pair is expanded into [`ROLLS`] approach directions.
/// Candidates are not filtered; see [`filter_grasps`].
pub fn sample_antipodal(
    model: &GpdfModel,
    completed: &PointCloud,
    gripper: &GripperSpec,
    n: usize,
    seed: u64,
) -> Result<Vec<GraspPose>, GraspError> {
    gripper.validate()?;
    let normals = completed.normals.as_ref().ok_or(GraspError::MissingNormals)?;
    if completed.is_empty() || n == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, completed.len(), n.min(completed.len())).into_vec();

    let per_contact: Vec<Vec<GraspPose>> = picks
        .par_iter()
        .map(|&i| {
            let a = completed.points[i];
            let nrm = normals[i];
            if (nrm.norm() - 1.0).abs() > 1e-6 {
                return Vec::new();
            }
            let Some(w) = find_exit(model, &a, &nrm, gripper.max_width) else {
                return Vec::new();
            };
            let b = a - nrm * w;
            let mut g = GraspPose {
                pose: Pose::identity(),
                width: w,
                contacts: [a.into(), b.into()],
                quality: 0.0,
            };
            let Ok(q) = force_closure_score(model, &g) else {
                return Vec::new();
            };
            g.quality = q;
            let reference = reference_perpendicular(&nrm);
            let mid = (a + b) * 0.5;
            (0..ROLLS)
                .map(|k| {
                    let angle = 2.0 * PI * k as f64 / ROLLS as f64;
                    let approach = reference * angle.cos() + nrm.cross(&reference) * angle.sin();
                    GraspPose {
                        pose: Pose::new(gripper.orientation(&nrm, &approach), mid),
                        ..g.clone()
                    }
                })
                .collect()
        })
        .collect();
    Ok(per_contact.into_iter().flatten().collect())
}

/// Keeps candidates that clear the object by `margin` and whose force
/// closure score is below `threshold`.
pub fn filter_grasps(
    model: &GpdfModel,
    candidates: &[GraspPose],
    gripper: &GripperSpec,
    margin: f64,
    threshold: f64,
) -> Vec<GraspPose> {
    let keep: Vec<bool> = candidates
        .par_iter()
        .map(|g| g.quality < threshold && validate_collision(model, g, gripper, margin))
        .collect();
    candidates
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(g, _)| g.clone())
        .collect()
}

/// Frame attached to a cloud: origin at the centroid, first axis toward the
/// first point well off the centroid, second from the next point that is
/// not collinear with it. Moves rigidly with the cloud as long as point
/// order is kept.
pub fn object_frame(cloud: &PointCloud) -> Pose {
    let c = cloud.centroid();
    let scale = cloud
        .points
        .iter()
        .map(|p| (p - c).norm())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        return Pose::from_translation(c);
    }
    let mut offsets = cloud.points.iter().map(|p| p - c);
    let Some(e1) = offsets.by_ref().find(|o| o.norm() > 0.1 * scale) else {
        return Pose::from_translation(c);
    };
    let e1 = e1.normalize();
    let e2 = offsets
        .map(|o| o - e1 * e1.dot(&o))
        .find(|o| o.norm() > 0.1 * scale)
        .map(|o| o.normalize())
        .unwrap_or_else(|| reference_perpendicular(&e1));
    Pose::new(Matrix3::from_columns(&[e1, e2, e1.cross(&e2)]), c)
}

/// Everything that feeds grasp sampling, in one place.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub lengthscale: f64,
    pub noise_var: f64,
    pub grid: [usize; 3],
    pub expand: f64,
    pub var_threshold: f64,
    pub n: usize,
    pub seed: u64,
    pub margin: f64,
    pub threshold: f64,
    pub gripper: GripperSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            lengthscale: gpdf::DEFAULT_LENGTHSCALE,
            noise_var: gpdf::DEFAULT_NOISE_VAR,
            grid: [8, 8, 8],
            expand: 1.5,
            var_threshold: f64::INFINITY,
            n: 64,
            seed: 0,
            margin: DEFAULT_MARGIN,
            threshold: FORCE_CLOSURE_THRESHOLD,
            gripper: GripperSpec::jaw(0.1),
        }
    }
}

/// Output of [`run_pipeline`]. The field and the completed cloud are kept
/// in the object frame; grasps are in the world.
#[derive(Clone, Debug)]
pub struct GraspSet {
    pub frame: Pose,
    pub model: GpdfModel,
    pub completed: PointCloud,
    pub candidates: usize,
    pub grasps: Vec<GraspPose>,
}

impl GraspSet {
    /// Distance of a world point in the object's current placement.
    pub fn distance(&self, object_pose: &Pose, x: &Vector3<f64>) -> f64 {
        let local = object_pose.compose(&self.frame).inverse().transform_point(x);
        self.model.refine3(&local, DEFAULT_REFINE_ITERS).distance
    }
}

/// Fit, complete, sample and filter, all in the cloud's own frame.
pub fn run_pipeline(cloud: &PointCloud, cfg: &PipelineConfig) -> Result<GraspSet, GraspError> {
    let frame = object_frame(cloud);
    let local = cloud.transformed(&frame.inverse());
    let model = GpdfModel::fit(&local, cfg.lengthscale, cfg.noise_var)?;
    let region = gpdf::expanded_region(&local, &Pose::identity(), cfg.expand);
    let completed = gpdf::complete_shape(&model, &region, cfg.grid, cfg.var_threshold);
    let candidates = sample_antipodal(&model, &completed, &cfg.gripper, cfg.n, cfg.seed)?;
    let grasps = filter_grasps(&model, &candidates, &cfg.gripper, cfg.margin, cfg.threshold)
        .into_iter()
        .map(|g| g.transformed(&frame))
        .collect();
    Ok(GraspSet {
        frame,
        model,
        completed,
        candidates: candidates.len(),
        grasps,
    })
}

/// Worst translation and rotation discrepancy between `g·f(cloud)` and
/// `f(g·cloud)`, matching each grasp to its nearest counterpart in both
/// directions. Sets of different size report infinity.
pub fn check_equivariance(cfg: &PipelineConfig, cloud: &PointCloud, g: &Pose) -> Result<(f64, f64), GraspError> {
    let base: Vec<GraspPose> = run_pipeline(cloud, cfg)?
        .grasps
        .iter()
        .map(|x| x.transformed(g))
        .collect();
    let moved = run_pipeline(&cloud.transformed(g), cfg)?.grasps;
    if base.len() != moved.len() {
        return Ok((f64::INFINITY, f64::INFINITY));
    }
    let nearest = |x: &GraspPose, set: &[GraspPose]| {
        set.iter()
            .map(|y| x.pose.distance_to(&y.pose))
            .min_by(|a, b| (a.0 + a.1).total_cmp(&(b.0 + b.1)))
            .unwrap_or((0.0, 0.0))
    };
    let mut worst = (0.0f64, 0.0f64);
    for (from, to) in [(&base, &moved), (&moved, &base)] {
        for x in from.iter() {
            let (t, r) = nearest(x, to);
            worst.0 = worst.0.max(t);
            worst.1 = worst.1.max(r);
        }
    }
    Ok(worst)
}

pub fn grasps_to_json(grasps: &[GraspPose]) -> String {
    serde_json::to_string_pretty(grasps).expect("grasps serialize")
}

pub fn grasps_from_json(text: &str) -> Result<Vec<GraspPose>, serde_json::Error> {
    serde_json::from_str(text)
}

pub fn grasps_to_csv(grasps: &[GraspPose]) -> String {
    let mut out = String::from("r00,r01,r02,t0,r10,r11,r12,t1,r20,r21,r22,t2,width,ax,ay,az,bx,by,bz,quality\n");
    for g in grasps {
        let mut row: Vec<f64> = g.pose.to_row_major().to_vec();
        row.push(g.width);
        row.extend(g.contacts.iter().flatten());
        row.push(g.quality);
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}
