//! Serial revolute chains: forward kinematics, geometric Jacobian,
//! manipulability, damped least-squares IK, a capsule self-collision proxy,
//! and density-thresholded reachability.
//!
//! Frame 0 is the base. Frame `i` is frame `i-1` composed with joint `i`'s
//! fixed origin and its rotation about `axis` by `q[i-1]`. The tool frame is
//! frame `n` composed with `tool_offset`.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grasp::GraspPose;
use crate::rmm::{select_k_bic, EmConfig, RiemannianMixture, RmmError};
use crate::se3::{axis_angle_matrix, log_group, Pose};

pub type JointState = DVector<f64>;

pub const DEFAULT_LAMBDA: f64 = 0.05;
pub const TOL_POSITION: f64 = 1e-3;
pub const TOL_ROTATION: f64 = 0.01;
pub const DEDUPE_TOL: f64 = 1e-3;
const MAX_BACKTRACK: usize = 12;
/// Poses closer than this above the table are dropped from reachability data.
pub const TABLE_CLEARANCE: f64 = 0.1;

#[derive(Debug, Error)]
pub enum RobotError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("robot file is malformed: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("robot model is invalid: {0}")]
    Invalid(String),
    #[error("reachability dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Mixture(#[from] RmmError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub axis: [f64; 3],
    pub origin: Pose,
    pub limits: [f64; 2],
}

/// Swept sphere around a segment fixed in link frame `link`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Capsule {
    pub link: usize,
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    pub joints: Vec<Joint>,
    pub tool_offset: Pose,
    #[serde(default)]
    pub capsules: Vec<Capsule>,
    #[serde(default)]
    pub base_pose: Pose,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IkConfig {
    pub iters: usize,
    pub lambda: f64,
    /// Scale of the orientation rows; zero solves for position only.
    pub rotation_weight: f64,
}

impl Default for IkConfig {
    fn default() -> Self {
        Self {
            iters: 100,
            lambda: DEFAULT_LAMBDA,
            rotation_weight: 1.0,
        }
    }
}

impl IkConfig {
    pub fn position_only() -> Self {
        Self {
            rotation_weight: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IkResult {
    pub q: JointState,
    pub position_error: f64,
    pub rotation_error: f64,
}

impl IkResult {
    pub fn within(&self, pos: f64, rot: f64, cfg: &IkConfig) -> bool {
        self.position_error <= pos && (cfg.rotation_weight == 0.0 || self.rotation_error <= rot)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MultiStartConfig {
    pub n_starts: usize,
    /// Iterations standing in for the learned sampler.
    pub sample_iters: usize,
    pub refine_iters: usize,
    pub seed: u64,
    pub ik: IkConfig,
}

impl Default for MultiStartConfig {
    fn default() -> Self {
        Self {
            n_starts: 32,
            sample_iters: 100,
            refine_iters: 3,
            seed: 0,
            ik: IkConfig::default(),
        }
    }
}

impl RobotModel {
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn load(path: &Path) -> Result<Self, RobotError> {
        let text = fs::read_to_string(path).map_err(|source| RobotError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let model: RobotModel = serde_json::from_str(&text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("robot serializes")
    }

    pub fn validate(&self) -> Result<(), RobotError> {
        if self.joints.is_empty() {
            return Err(RobotError::Invalid("no joints".into()));
        }
        for (i, j) in self.joints.iter().enumerate() {
            if !(j.limits[0] < j.limits[1]) {
                return Err(RobotError::Invalid(format!("joint {i} has lo >= hi")));
            }
            if (Vector3::from(j.axis).norm() - 1.0).abs() > 1e-9 {
                return Err(RobotError::Invalid(format!("joint {i} axis is not unit")));
            }
        }
        for c in &self.capsules {
            if !(c.radius > 0.0) || c.link > self.dof() {
                return Err(RobotError::Invalid("bad capsule".into()));
            }
        }
        Ok(())
    }

    /// Planar two-link arm with unit links rotating about z.
    pub fn planar_2link() -> Self {
        let joint = |x: f64| Joint {
            axis: [0.0, 0.0, 1.0],
            origin: Pose::from_translation(Vector3::new(x, 0.0, 0.0)),
            limits: [-std::f64::consts::PI, std::f64::consts::PI],
        };
        let link = |k: usize| Capsule {
            link: k,
            a: [0.0; 3],
            b: [1.0, 0.0, 0.0],
            radius: 0.05,
        };
        Self {
            joints: vec![joint(0.0), joint(1.0)],
            tool_offset: Pose::from_translation(Vector3::new(1.0, 0.0, 0.0)),
            capsules: vec![link(1), link(2)],
            base_pose: Pose::identity(),
        }
    }

    /// Seven-joint spatial chain with the link lengths and limits of a
    /// common collaborative arm; the tool frame sits at a jaw gripper's
    /// fingertip center with approach along +z.
    pub fn iiwa_like() -> Self {
        let deg = std::f64::consts::PI / 180.0;
        let spec: [(f64, [f64; 3], f64); 7] = [
            (0.1575, [0.0, 0.0, 1.0], 170.0),
            (0.2025, [0.0, 1.0, 0.0], 120.0),
            (0.2045, [0.0, 0.0, 1.0], 170.0),
            (0.2155, [0.0, -1.0, 0.0], 120.0),
            (0.1845, [0.0, 0.0, 1.0], 170.0),
            (0.2155, [0.0, 1.0, 0.0], 120.0),
            (0.081, [0.0, 0.0, 1.0], 175.0),
        ];
        let joints: Vec<Joint> = spec
            .iter()
            .map(|(z, axis, lim)| Joint {
                axis: *axis,
                origin: Pose::from_translation(Vector3::new(0.0, 0.0, *z)),
                limits: [-lim * deg, lim * deg],
            })
            .collect();
        let tool = 0.045 + 0.105;
        // Link k spans from its own origin to the next joint's origin.
        let mut capsules = vec![Capsule {
            link: 0,
            a: [0.0; 3],
            b: [0.0, 0.0, spec[0].0],
            radius: 0.06,
        }];
        for k in 1..=7 {
            let (len, radius) = if k < 7 { (spec[k].0, if k < 5 { 0.06 } else { 0.045 }) } else { (tool, 0.035) };
            capsules.push(Capsule {
                link: k,
                a: [0.0; 3],
                b: [0.0, 0.0, len],
                radius,
            });
        }
        Self {
            joints,
            tool_offset: Pose::from_translation(Vector3::new(0.0, 0.0, tool)),
            capsules,
            base_pose: Pose::identity(),
        }
    }

    pub fn lower(&self) -> JointState {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.limits[0]))
    }

    pub fn upper(&self) -> JointState {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.limits[1]))
    }

    /// Clamps into the limits. Joints whose range spans a full turn are
    /// continuous and wrap instead.
    pub fn clamp(&self, q: &JointState) -> JointState {
        DVector::from_iterator(
            self.dof(),
            q.iter().zip(&self.joints).map(|(v, j)| {
                let [lo, hi] = j.limits;
                let turn = 2.0 * std::f64::consts::PI;
                if hi - lo >= turn - 1e-12 && !(lo..=hi).contains(v) {
                    (lo + (v - lo).rem_euclid(turn)).min(hi)
                } else {
                    v.clamp(lo, hi)
                }
            }),
        )
    }

    pub fn within_limits(&self, q: &JointState) -> bool {
        q.iter().zip(&self.joints).all(|(v, j)| *v >= j.limits[0] && *v <= j.limits[1])
    }

    pub fn random_config(&self, rng: &mut impl Rng) -> JointState {
        DVector::from_iterator(
            self.dof(),
            self.joints.iter().map(|j| rng.random_range(j.limits[0]..=j.limits[1])),
        )
    }

    /// Link frames `0..=n` in the world.
    pub fn frames(&self, q: &JointState) -> Vec<Pose> {
        assert_eq!(q.len(), self.dof(), "joint vector length");
        let mut out = Vec::with_capacity(self.dof() + 1);
        let mut cur = self.base_pose;
        out.push(cur);
        for (j, v) in self.joints.iter().zip(q.iter()) {
            let rot = Pose::from_rotation(axis_angle_matrix(&Vector3::from(j.axis), *v));
            cur = cur.compose(&j.origin).compose(&rot);
            out.push(cur);
        }
        out
    }

    pub fn fk(&self, q: &JointState) -> Pose {
        self.frames(q).last().unwrap().compose(&self.tool_offset)
    }

    /// Geometric Jacobian, linear rows first, in the world frame at the tool
    /// point.
    pub fn jacobian(&self, q: &JointState) -> DMatrix<f64> {
        let frames = self.frames(q);
        let tip = frames.last().unwrap().compose(&self.tool_offset).translation;
        let mut jac = DMatrix::zeros(6, self.dof());
        for (i, j) in self.joints.iter().enumerate() {
            let f = &frames[i + 1];
            let z = f.rotation * Vector3::from(j.axis);
            let lin = z.cross(&(tip - f.translation));
            for r in 0..3 {
                jac[(r, i)] = lin[r];
                jac[(r + 3, i)] = z[r];
            }
        }
        jac
    }

    /// `sqrt(det(J Jᵀ))` on the full Jacobian for six or more joints; for
    /// shorter chains the position rows' Gram determinant `sqrt(det(Jpᵀ Jp))`.
    pub fn manipulability(&self, q: &JointState) -> f64 {
        let jac = self.jacobian(q);
        let det = if self.dof() >= 6 {
            (&jac * jac.transpose()).determinant()
        } else {
            let jp = jac.rows(0, 3);
            (jp.transpose() * jp).determinant()
        };
        det.max(0.0).sqrt()
    }

    /// Pose error `[t_target - t, R ω]` with `ω` the rotational part of
    /// `Log(current⁻¹ target)`, both in the world frame.
    fn pose_error(&self, current: &Pose, target: &Pose) -> (Vector3<f64>, Vector3<f64>) {
        let dp = target.translation - current.translation;
        let rel = current.inverse().compose(target);
        let omega = match log_group(&rel) {
            Ok(v) => v.omega(),
            Err(_) => {
                // At exactly pi the axis is still well defined.
                let (axis, angle) = crate::se3::rotation_axis_angle(&rel.rotation);
                axis * angle
            }
        };
        (dp, current.rotation * omega)
    }

    /// Damped least-squares IK, `q ← clamp(q + s Jᵀ(JJᵀ + λ²I)⁻¹ e)` with the
    /// step `s` halved from 1 until the error decreases. Every iterate is
    /// an improvement, so the last one is the best; stops when no halving
    /// helps.
    pub fn ik_damped(&self, target: &Pose, q0: &JointState, cfg: &IkConfig) -> IkResult {
        let w = cfg.rotation_weight;
        let rows = if w == 0.0 { 3 } else { 6 };
        let mut q = self.clamp(q0);
        let eval = |q: &JointState| {
            let (dp, dr) = self.pose_error(&self.fk(q), target);
            let mut e = DVector::zeros(rows);
            for r in 0..3 {
                e[r] = dp[r];
                if rows == 6 {
                    e[r + 3] = w * dr[r];
                }
            }
            (e, dp.norm(), dr.norm())
        };
        let (mut e, pe, re) = eval(&q);
        let (mut pe, mut re) = (pe, re);
        let mut best = IkResult {
            q: q.clone(),
            position_error: pe,
            rotation_error: re,
        };
        let mut best_norm = e.norm();
        for _ in 0..cfg.iters {
            if best_norm == 0.0 {
                break;
            }
            let full = self.jacobian(&q);
            let mut jac = full.rows(0, rows).into_owned();
            if rows == 6 {
                for c in 0..self.dof() {
                    for r in 3..6 {
                        jac[(r, c)] *= w;
                    }
                }
            }
            let mut a = &jac * jac.transpose();
            for d in 0..rows {
                a[(d, d)] += cfg.lambda * cfg.lambda;
            }
            let Some(chol) = a.cholesky() else { break };
            let dq = jac.transpose() * chol.solve(&e);
            // Halve the step until the error drops; near singular
            // configurations the full step overshoots.
            let mut scale = 1.0;
            let mut accepted = false;
            for _ in 0..MAX_BACKTRACK {
                let trial = self.clamp(&(&q + &dq * scale));
                let (te, tpe, tre) = eval(&trial);
                if te.norm() < best_norm {
                    q = trial;
                    (e, pe, re) = (te, tpe, tre);
                    accepted = true;
                    break;
                }
                scale *= 0.5;
            }
            if !accepted {
                break;
            }
            best_norm = e.norm();
            best = IkResult {
                q: q.clone(),
                position_error: pe,
                rotation_error: re,
            };
        }
        best
    }

    /// Seeded random restarts refined by [`ik_damped`](Self::ik_damped),
    /// filtered by tolerance and self-collision and deduplicated.
    pub fn ik_multistart(&self, target: &Pose, cfg: &MultiStartConfig) -> Vec<JointState> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let starts: Vec<JointState> = (0..cfg.n_starts.max(1)).map(|_| self.random_config(&mut rng)).collect();
        let solved: Vec<Option<JointState>> = starts
            .par_iter()
            .map(|q0| {
                let rough = self.ik_damped(target, q0, &IkConfig { iters: cfg.sample_iters, ..cfg.ik });
                let fine = self.ik_damped(target, &rough.q, &IkConfig { iters: cfg.refine_iters, ..cfg.ik });
                let ok = fine.within(TOL_POSITION, TOL_ROTATION, &cfg.ik)
                    && self.within_limits(&fine.q)
                    && !self.self_collision(&fine.q);
                ok.then_some(fine.q)
            })
            .collect();
        let mut out: Vec<JointState> = Vec::new();
        for q in solved.into_iter().flatten() {
            if !out.iter().any(|o| (o - &q).amax() < DEDUPE_TOL) {
                out.push(q);
            }
        }
        out
    }

    fn capsule_segments(&self, q: &JointState) -> Vec<(usize, Vector3<f64>, Vector3<f64>, f64)> {
        let frames = self.frames(q);
        self.capsules
            .iter()
            .map(|c| {
                let f = &frames[c.link];
                (
                    c.link,
                    f.transform_point(&Vector3::from(c.a)),
                    f.transform_point(&Vector3::from(c.b)),
                    c.radius,
                )
            })
            .collect()
    }

    /// True iff two capsules on non-adjacent links overlap.
    pub fn self_collision(&self, q: &JointState) -> bool {
        let segs = self.capsule_segments(q);
        for i in 0..segs.len() {
            for j in i + 1..segs.len() {
                let (li, a0, a1, ra) = segs[i];
                let (lj, b0, b1, rb) = segs[j];
                if li.abs_diff(lj) <= 1 {
                    continue;
                }
                if segment_distance(&a0, &a1, &b0, &b1) < ra + rb {
                    return true;
                }
            }
        }
        false
    }

    /// Tool poses of uniform joint samples, minus self-collisions and poses
    /// lower than `table_height + 0.1`.
    pub fn reachability_dataset(&self, n_samples: usize, table_height: f64, seed: u64) -> Vec<Pose> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let qs: Vec<JointState> = (0..n_samples).map(|_| self.random_config(&mut rng)).collect();
        let floor = table_height + TABLE_CLEARANCE;
        qs.par_iter()
            .filter_map(|q| {
                if self.self_collision(q) {
                    return None;
                }
                let x = self.fk(q);
                (x.translation.z >= floor).then_some(x)
            })
            .collect()
    }
}

/// Closest distance between segments `[p0, p1]` and `[q0, q1]`.
pub fn segment_distance(p0: &Vector3<f64>, p1: &Vector3<f64>, q0: &Vector3<f64>, q1: &Vector3<f64>) -> f64 {
    let d1 = p1 - p0;
    let d2 = q1 - q0;
    let r = p0 - q0;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    let eps = 1e-15;
    let (s, t) = if a <= eps && e <= eps {
        (0.0, 0.0)
    } else if a <= eps {
        (0.0, (f / e).clamp(0.0, 1.0))
    } else {
        let c = d1.dot(&r);
        if e <= eps {
            ((-c / a).clamp(0.0, 1.0), 0.0)
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s = if denom > eps { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t = (b * s + f) / e;
            if t < 0.0 {
                t = 0.0;
                s = (-c / a).clamp(0.0, 1.0);
            } else if t > 1.0 {
                t = 1.0;
                s = ((b - c) / a).clamp(0.0, 1.0);
            }
            (s, t)
        }
    };
    ((p0 + d1 * s) - (q0 + d2 * t)).norm()
}

/// Mixture density over reachable tool poses with a rejection threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReachabilityModel {
    pub mixture: RiemannianMixture,
    /// Fraction of training poses that must lie above the threshold.
    pub quantile: f64,
    pub log_threshold: f64,
    pub threshold: f64,
    pub k: usize,
}

impl ReachabilityModel {
    /// Fits a mixture with BIC over `ks` and sets the threshold at the
    /// `(1 - quantile)` lower quantile of the training log densities.
    pub fn fit(poses: &[Pose], ks: &[usize], seed: u64, quantile: f64, em: &EmConfig) -> Result<Self, RobotError> {
        if poses.is_empty() {
            return Err(RobotError::EmptyDataset);
        }
        let ks: Vec<usize> = ks.iter().copied().filter(|k| *k <= poses.len()).collect();
        let (k, fit) = select_k_bic(poses, &ks, seed, em)?;
        let mixture = fit.mixture;
        let mut logs: Vec<f64> = poses.par_iter().map(|x| mixture.log_prob(x)).collect();
        logs.sort_by(f64::total_cmp);
        let idx = (((1.0 - quantile) * logs.len() as f64).floor() as usize).min(logs.len() - 1);
        let log_threshold = logs[idx];
        Ok(Self {
            mixture,
            quantile,
            log_threshold,
            threshold: log_threshold.exp(),
            k,
        })
    }

    pub fn is_reachable(&self, x: &Pose) -> bool {
        self.mixture.log_prob(x) >= self.log_threshold
    }
}

/// Keeps the grasps whose pose density clears the model's threshold.
pub fn filter_reachable(model: &ReachabilityModel, grasps: &[GraspPose]) -> Vec<GraspPose> {
    grasps.iter().filter(|g| model.is_reachable(&g.pose)).cloned().collect()
}

/// Closed-form inverse kinematics of a planar two-link arm: the elbow
/// angles reaching `(x, y)`, or none when out of reach.
pub fn planar_2link_ik(l1: f64, l2: f64, x: f64, y: f64) -> Vec<[f64; 2]> {
    let r2 = x * x + y * y;
    let c2 = (r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
    if !(-1.0..=1.0).contains(&c2) {
        return Vec::new();
    }
    let s = (1.0 - c2 * c2).sqrt();
    [s, -s]
        .iter()
        .map(|s2| {
            let q2 = s2.atan2(c2);
            let q1 = y.atan2(x) - (l2 * s2).atan2(l1 + l2 * c2);
            [wrap(q1), q2]
        })
        .collect()
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap(a: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let mut v = (a + pi).rem_euclid(2.0 * pi) - pi;
    if v <= -pi {
        v += 2.0 * pi;
    }
    v
}

/// Rotation about z by `yaw`; used by planar examples and tests.
pub fn yaw(angle: f64) -> Matrix3<f64> {
    axis_angle_matrix(&Vector3::z(), angle)
}
