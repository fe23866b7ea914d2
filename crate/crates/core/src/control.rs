//! Reactive grasp controllers.
//!
//! The task-space controller ascends the log density of a grasp mixture
//! through the damped pseudo-inverse of the manipulator Jacobian. The
//! joint-space controller descends a distance field fitted to IK solutions
//! of the grasps, `q̇ = -d(q) ∇d(q)`. Targets are swapped through
//! [`Snapshot`] so a control loop never sees a half-updated controller.

use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector, Vector6};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gpdf::{GpdfError, GpdfModel, DEFAULT_REFINE_ITERS};
use crate::rmm::RiemannianMixture;
use crate::robot::{JointState, MultiStartConfig, RobotModel, DEDUPE_TOL};
use crate::se3::{body_to_world, Pose, Tangent};

pub const DEFAULT_STEP_GAIN: f64 = 1.0;
pub const DEFAULT_DISTURBANCE: f64 = 0.02;
pub const DEFAULT_PROBE_RADIUS: f64 = 0.05;
/// Per-joint speed limit, rad/s.
pub const VELOCITY_CLIP: f64 = 1.0;
pub const DEFAULT_JOINT_LENGTHSCALE: f64 = 0.5;
/// Damping of the pseudo-inverse used by the task controller.
pub const PINV_DAMPING: f64 = 0.05;
const PROBES: usize = 12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("no IK solutions to build a joint-space field from")]
    NoSolutions,
    #[error("no feasible grasp remains after filtering")]
    NoFeasibleGrasp,
    #[error("step gain must be positive")]
    BadGain,
    #[error(transparent)]
    Field(#[from] GpdfError),
}

/// Tunables shared by both controllers, as they appear in scenario files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlConfig {
    pub step_gain: f64,
    pub disturbance_scale: f64,
    pub probe_radius: f64,
    pub velocity_clip: f64,
    pub lengthscale: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            step_gain: DEFAULT_STEP_GAIN,
            disturbance_scale: DEFAULT_DISTURBANCE,
            probe_radius: DEFAULT_PROBE_RADIUS,
            velocity_clip: VELOCITY_CLIP,
            lengthscale: DEFAULT_JOINT_LENGTHSCALE,
        }
    }
}

/// Scales `v` uniformly so no entry exceeds `clip` in magnitude.
pub fn clip_velocity(v: DVector<f64>, clip: f64) -> DVector<f64> {
    let m = v.amax();
    if m > clip {
        v * (clip / m)
    } else {
        v
    }
}

/// `Jᵀ (J Jᵀ + λ² I)⁻¹ v`.
pub fn damped_pinv_apply(jac: &DMatrix<f64>, v: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let mut a = jac * jac.transpose();
    for i in 0..a.nrows() {
        a[(i, i)] += lambda * lambda;
    }
    match a.cholesky() {
        Some(c) => jac.transpose() * c.solve(v),
        None => DVector::zeros(jac.ncols()),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskController {
    pub grasp_mixture: RiemannianMixture,
    pub step_gain: f64,
    pub disturbance_scale: f64,
    pub probe_radius: f64,
    pub velocity_clip: f64,
}

impl TaskController {
    pub fn new(grasp_mixture: RiemannianMixture, cfg: &ControlConfig) -> Result<Self, ControlError> {
        if !(cfg.step_gain > 0.0) {
            return Err(ControlError::BadGain);
        }
        Ok(Self {
            grasp_mixture,
            step_gain: cfg.step_gain,
            disturbance_scale: cfg.disturbance_scale,
            probe_radius: cfg.probe_radius,
            velocity_clip: cfg.velocity_clip,
        })
    }

    /// World-frame ascent twist of the log density at `x`.
    pub fn world_gradient(&self, x: &Pose) -> Vector6<f64> {
        body_to_world(x, &self.grasp_mixture.log_grad(x))
    }

    /// `q̇ = gain · J† · ∇ log P(fk(q))`, clipped.
    pub fn task_step(&self, model: &RobotModel, q: &JointState) -> DVector<f64> {
        let x = model.fk(q);
        let g = self.world_gradient(&x);
        let jac = model.jacobian(q);
        let v = damped_pinv_apply(&jac, &DVector::from_column_slice(g.as_slice()), PINV_DAMPING);
        clip_velocity(v * self.step_gain, self.velocity_clip)
    }

    /// Probes 12 poses at `probe_radius` around `x` (the six tangent axes
    /// with random signs, then six random directions). When the best probe
    /// beats `x` by more than twice what the gradient predicts for that
    /// step, `x` sits at a between-mode stationary point and a disturbance
    /// of norm `disturbance_scale` toward the best probe is returned.
    pub fn escape_if_stuck(&self, x: &Pose, rng: &mut impl Rng) -> Option<Tangent> {
        let base = self.grasp_mixture.log_prob(x);
        let grad = self.grasp_mixture.log_grad(x).0;
        let mut best: Option<(f64, Vector6<f64>)> = None;
        for i in 0..PROBES {
            let dir = if i < 6 {
                let mut e = Vector6::zeros();
                e[i] = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                e
            } else {
                random_unit(rng)
            };
            let lp = self.grasp_mixture.log_prob(&x.oplus(&Tangent(dir * self.probe_radius)));
            if best.is_none_or(|(b, _)| lp > b) {
                best = Some((lp, dir));
            }
        }
        let (lp, dir) = best?;
        let gain = lp - base;
        if !(gain > 0.0) {
            return None;
        }
        let predicted = grad.dot(&dir) * self.probe_radius;
        if predicted >= 0.5 * gain {
            return None;
        }
        let d = dir + random_unit(rng) * 0.25;
        Some(Tangent(d.normalize() * self.disturbance_scale))
    }

    /// Moves every mean by `object_motion`, then drops components whose
    /// mean fails `reachable` and renormalizes.
    pub fn retarget(&self, object_motion: &Pose, reachable: impl Fn(&Pose) -> bool) -> Result<Self, ControlError> {
        let moved = self.grasp_mixture.transform(object_motion);
        let keep: Vec<usize> = (0..moved.len()).filter(|&i| reachable(&moved.components[i].mean)).collect();
        if keep.is_empty() {
            return Err(ControlError::NoFeasibleGrasp);
        }
        let mixture = if keep.len() == moved.len() {
            moved
        } else {
            moved.restricted(&keep).ok_or(ControlError::NoFeasibleGrasp)?
        };
        Ok(Self {
            grasp_mixture: mixture,
            ..self.clone()
        })
    }
}

fn random_unit(rng: &mut impl Rng) -> Vector6<f64> {
    loop {
        let v = Vector6::from_fn(|_, _| {
            let z: f64 = StandardNormal.sample(rng);
            z
        });
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

#[derive(Clone, Debug)]
pub struct JointController {
    pub field: GpdfModel,
    pub lengthscale: f64,
    pub solutions: Vec<JointState>,
    pub velocity_clip: f64,
    /// Grasps the solutions were solved for; empty when built directly.
    pub grasps: Vec<Pose>,
    pub ik: MultiStartConfig,
}

/// Noiseless distance field with the solutions as its zero set.
pub fn build_joint_field(solutions: &[JointState], lengthscale: f64) -> Result<JointController, ControlError> {
    if solutions.is_empty() {
        return Err(ControlError::NoSolutions);
    }
    let pts: Vec<Vec<f64>> = solutions.iter().map(|q| q.as_slice().to_vec()).collect();
    let field = GpdfModel::fit_points(&pts, lengthscale, 0.0)?;
    Ok(JointController {
        field,
        lengthscale,
        solutions: solutions.to_vec(),
        velocity_clip: VELOCITY_CLIP,
        grasps: Vec::new(),
        ik: MultiStartConfig::default(),
    })
}

/// Multi-start IK for every grasp with the same seed. Returns the grasps
/// that had at least one solution, with their solutions.
pub fn solve_grasps(model: &RobotModel, grasps: &[Pose], ik: &MultiStartConfig) -> (Vec<Pose>, Vec<Vec<JointState>>) {
    grasps
        .iter()
        .map(|g| (*g, model.ik_multistart(g, ik)))
        .filter(|(_, s)| !s.is_empty())
        .unzip()
}

impl JointController {
    pub fn from_grasps(
        model: &RobotModel,
        grasps: &[Pose],
        cfg: &ControlConfig,
        ik: &MultiStartConfig,
    ) -> Result<Self, ControlError> {
        let (kept, sols) = solve_grasps(model, grasps, ik);
        Self::assemble(kept, &sols, cfg, ik)
    }

    /// Field over the union of per-grasp solutions, deduplicated.
    pub fn assemble(
        grasps: Vec<Pose>,
        solutions: &[Vec<JointState>],
        cfg: &ControlConfig,
        ik: &MultiStartConfig,
    ) -> Result<Self, ControlError> {
        let mut all: Vec<JointState> = Vec::new();
        for q in solutions.iter().flatten() {
            if !all.iter().any(|o| (o - q).amax() < DEDUPE_TOL) {
                all.push(q.clone());
            }
        }
        if all.is_empty() {
            return Err(ControlError::NoFeasibleGrasp);
        }
        let mut jc = build_joint_field(&all, cfg.lengthscale)?;
        jc.velocity_clip = cfg.velocity_clip;
        jc.grasps = grasps;
        jc.ik = *ik;
        Ok(jc)
    }

    pub fn distance(&self, q: &JointState) -> f64 {
        self.field.refine_distance(q.as_slice(), DEFAULT_REFINE_ITERS).distance
    }

    /// `q̇ = -d(q) ∇d(q)` with the refined distance and the unit gradient
    /// at `q`, clipped.
    pub fn joint_step(&self, q: &JointState) -> DVector<f64> {
        let d = self.distance(q);
        let g = self.field.gradient(q.as_slice());
        let n = g.norm();
        if !(n > 1e-12) || d == 0.0 {
            return DVector::zeros(q.len());
        }
        clip_velocity(g * (-d / n), self.velocity_clip)
    }

    /// Moves the stored grasps, re-solves IK with the same seed and refits.
    pub fn retarget(&self, model: &RobotModel, object_motion: &Pose) -> Result<Self, ControlError> {
        let moved: Vec<Pose> = self.grasps.iter().map(|g| object_motion.compose(g)).collect();
        let cfg = ControlConfig {
            lengthscale: self.lengthscale,
            velocity_clip: self.velocity_clip,
            ..ControlConfig::default()
        };
        JointController::from_grasps(model, &moved, &cfg, &self.ik)
    }
}

/// Latest published value; readers grab an `Arc` and keep it for a whole
/// step, writers replace it wholesale.
#[derive(Debug)]
pub struct Snapshot<T> {
    cell: Mutex<Arc<T>>,
}

impl<T> Snapshot<T> {
    pub fn new(value: T) -> Self {
        Self {
            cell: Mutex::new(Arc::new(value)),
        }
    }

    pub fn load(&self) -> Arc<T> {
        Arc::clone(&self.cell.lock().unwrap_or_else(|e| e.into_inner()))
    }

    pub fn publish(&self, value: T) {
        *self.cell.lock().unwrap_or_else(|e| e.into_inner()) = Arc::new(value);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rmm::RiemannianGaussian;
    use crate::robot::planar_2link_ik;
    use crate::se3::exp_group;
    use nalgebra::{Matrix6, Vector3};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn q(v: &[f64]) -> JointState {
        DVector::from_column_slice(v)
    }

    fn iso(mean: Pose, var: f64) -> RiemannianGaussian {
        RiemannianGaussian::new(mean, Matrix6::identity() * var).unwrap()
    }

    fn arm_controller(q0: &JointState, var: f64) -> (RobotModel, TaskController) {
        let arm = RobotModel::iiwa_like();
        let mix = RiemannianMixture::single(iso(arm.fk(q0), var));
        (arm, TaskController::new(mix, &ControlConfig::default()).unwrap())
    }

    fn home() -> JointState {
        q(&[0.1, 0.6, -0.2, -1.1, 0.3, 0.9, 0.2])
    }

    #[test]
    fn zero_velocity_at_mode() {
        let (arm, c) = arm_controller(&home(), 0.02);
        assert!(c.task_step(&arm, &home()).amax() < 1e-6);
    }

    #[test]
    fn euler_step_increases_density() {
        let (arm, c) = arm_controller(&home(), 0.02);
        let q0 = &home() + q(&[0.05, -0.04, 0.03, 0.05, -0.02, 0.04, 0.03]);
        let before = c.grasp_mixture.prob(&arm.fk(&q0));
        let q1 = &q0 + c.task_step(&arm, &q0) * 0.005;
        assert!(c.grasp_mixture.prob(&arm.fk(&q1)) > before);
    }

    #[test]
    fn far_pose_still_moves() {
        let (arm, c) = arm_controller(&home(), 0.001);
        let far = q(&[2.0, -0.8, 1.5, 0.5, -1.5, -1.0, 2.0]);
        assert_eq!(c.grasp_mixture.prob(&arm.fk(&far)), 0.0);
        assert!(c.task_step(&arm, &far).amax() > 1e-3);
    }

    #[test]
    fn clip_is_uniform() {
        let v = clip_velocity(q(&[4.0, -2.0, 1.0]), 1.0);
        assert!((v - q(&[1.0, -0.5, 0.25])).amax() < 1e-15);
    }

    #[test]
    fn no_escape_at_mode() {
        let c = TaskController::new(
            RiemannianMixture::single(iso(Pose::identity(), 0.01)),
            &ControlConfig::default(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(c.escape_if_stuck(&Pose::identity(), &mut rng).is_none());
    }

    #[test]
    fn escape_at_saddle_between_modes() {
        let a = Pose::from_translation(Vector3::new(0.1, 0.0, 0.0));
        let b = Pose::from_translation(Vector3::new(-0.1, 0.0, 0.0));
        let mix = RiemannianMixture::new(vec![0.5, 0.5], vec![iso(a, 0.002), iso(b, 0.002)]).unwrap();
        let c = TaskController::new(mix, &ControlConfig::default()).unwrap();
        assert!(c.grasp_mixture.log_grad(&Pose::identity()).norm() < 1e-9);
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = c.escape_if_stuck(&Pose::identity(), &mut rng).expect("saddle not detected");
            assert!((d.norm() - DEFAULT_DISTURBANCE).abs() < 1e-15);
            assert!(d.rho().x.abs() > 0.5 * d.norm());
        }
    }

    #[test]
    fn no_escape_on_slope() {
        let c = TaskController::new(
            RiemannianMixture::single(iso(Pose::identity(), 0.01)),
            &ControlConfig::default(),
        )
        .unwrap();
        let x = Pose::from_translation(Vector3::new(0.3, 0.1, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(c.escape_if_stuck(&x, &mut rng).is_none());
    }

    #[test]
    fn escape_is_seeded() {
        let a = Pose::from_translation(Vector3::new(0.1, 0.0, 0.0));
        let b = Pose::from_translation(Vector3::new(-0.1, 0.0, 0.0));
        let mix = RiemannianMixture::new(vec![0.5, 0.5], vec![iso(a, 0.002), iso(b, 0.002)]).unwrap();
        let c = TaskController::new(mix, &ControlConfig::default()).unwrap();
        let run = |s| c.escape_if_stuck(&Pose::identity(), &mut ChaCha8Rng::seed_from_u64(s));
        assert_eq!(run(9), run(9));
    }

    #[test]
    fn bad_gain_rejected() {
        let mix = RiemannianMixture::single(iso(Pose::identity(), 0.01));
        let cfg = ControlConfig {
            step_gain: 0.0,
            ..Default::default()
        };
        assert_eq!(TaskController::new(mix, &cfg), Err(ControlError::BadGain));
    }

    #[test]
    fn retarget_identity_is_bitwise() {
        let mix = RiemannianMixture::new(
            vec![0.3, 0.7],
            vec![
                iso(exp_group(&Tangent::from_slice(&[0.1, 0.2, 0.3, 0.4, -0.2, 0.1])), 0.01),
                iso(Pose::identity(), 0.02),
            ],
        )
        .unwrap();
        let c = TaskController::new(mix, &ControlConfig::default()).unwrap();
        assert_eq!(c.retarget(&Pose::identity(), |_| true).unwrap(), c);
    }

    #[test]
    fn retarget_translates_means() {
        let m = exp_group(&Tangent::from_slice(&[0.4, 0.1, 0.3, 0.2, 0.5, -0.3]));
        let c = TaskController::new(RiemannianMixture::single(iso(m, 0.01)), &ControlConfig::default()).unwrap();
        let shift = Pose::from_translation(Vector3::new(0.05, 0.0, 0.0));
        let moved = c.retarget(&shift, |_| true).unwrap();
        let d = moved.grasp_mixture.components[0].mean.translation - m.translation;
        assert!((d - Vector3::new(0.05, 0.0, 0.0)).norm() < 1e-15);
        assert_eq!(moved.grasp_mixture.components[0].mean.rotation, m.rotation);
    }

    #[test]
    fn retarget_drops_unreachable() {
        let near = Pose::from_translation(Vector3::new(0.5, 0.0, 0.3));
        let far = Pose::from_translation(Vector3::new(0.5, 0.5, 0.3));
        let mix = RiemannianMixture::new(vec![0.5, 0.5], vec![iso(near, 0.01), iso(far, 0.01)]).unwrap();
        let c = TaskController::new(mix, &ControlConfig::default()).unwrap();
        let reach = |x: &Pose| x.translation.norm() < 0.9;
        let kept = c.retarget(&Pose::identity(), reach).unwrap();
        assert_eq!(kept.grasp_mixture.len(), 2);
        let shift = Pose::from_translation(Vector3::new(0.0, 0.3, 0.0));
        let one = c.retarget(&shift, reach).unwrap();
        assert_eq!(one.grasp_mixture.len(), 1);
        assert!((one.grasp_mixture.weights[0] - 1.0).abs() < 1e-15);
        let gone = Pose::from_translation(Vector3::new(2.0, 0.0, 0.0));
        assert_eq!(c.retarget(&gone, reach), Err(ControlError::NoFeasibleGrasp));
    }

    #[test]
    fn joint_retarget_out_of_reach_fails() {
        let arm = RobotModel::planar_2link();
        let target = arm.fk(&q(&[0.3, 0.8]));
        let ik = MultiStartConfig {
            n_starts: 8,
            ik: crate::robot::IkConfig::position_only(),
            ..Default::default()
        };
        let jc = JointController::from_grasps(&arm, &[target], &ControlConfig::default(), &ik).unwrap();
        let same = jc.retarget(&arm, &Pose::identity()).unwrap();
        assert_eq!(same.solutions, jc.solutions);
        assert_eq!(same.field.alpha(), jc.field.alpha());
        let away = Pose::from_translation(Vector3::new(5.0, 0.0, 0.0));
        assert_eq!(jc.retarget(&arm, &away).err(), Some(ControlError::NoFeasibleGrasp));
    }

    #[test]
    fn empty_solutions_rejected() {
        assert_eq!(build_joint_field(&[], 0.5).err(), Some(ControlError::NoSolutions));
    }

    #[test]
    fn single_solution_field() {
        let star = q(&[0.3, -0.4, 0.2]);
        let jc = build_joint_field(&[star.clone()], 0.5).unwrap();
        assert!(jc.distance(&star).abs() < 1e-12);
        let mut last = 0.0;
        for s in [0.05, 0.1, 0.3, 0.8] {
            let d = jc.distance(&(&star + q(&[s, 0.0, 0.0])));
            assert!(d > last);
            last = d;
        }
        assert!(jc.joint_step(&star).norm() < 1e-6);
        let v = jc.joint_step(&(&star + q(&[0.0, 0.2, 0.0])));
        assert!(v[1] < 0.0 && v[0].abs() < 1e-12 && v[2].abs() < 1e-12);
    }

    fn planar_solutions() -> Vec<JointState> {
        let targets = [(1.2, 0.6), (-0.5, 1.3), (0.4, -1.5)];
        targets
            .iter()
            .flat_map(|&(x, y)| planar_2link_ik(1.0, 1.0, x, y))
            .map(|s| q(&s))
            .collect()
    }

    fn integrate(jc: &JointController, mut qk: JointState, steps: usize, dt: f64) -> JointState {
        for _ in 0..steps {
            qk += jc.joint_step(&qk) * dt;
        }
        qk
    }

    #[test]
    fn stored_solutions_are_equilibria() {
        let sols = planar_solutions();
        let jc = build_joint_field(&sols, DEFAULT_JOINT_LENGTHSCALE).unwrap();
        for s in &sols {
            assert!(jc.joint_step(s).norm() < 1e-6);
        }
    }

    #[test]
    fn planar_starts_converge_to_a_solution() {
        let sols = planar_solutions();
        let jc = build_joint_field(&sols, DEFAULT_JOINT_LENGTHSCALE).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pi = std::f64::consts::PI;
        let mut hits = 0;
        for _ in 0..100 {
            let q0 = q(&[rng.random_range(-pi..pi), rng.random_range(-pi..pi)]);
            let qf = integrate(&jc, q0, 1500, 0.02);
            if sols.iter().any(|s| (s - &qf).norm() < 1e-3) {
                hits += 1;
            }
        }
        assert!(hits >= 95, "{hits}/100 converged");
    }

    #[test]
    fn planar_field_has_one_basin_per_solution() {
        let sols = planar_solutions();
        let jc = build_joint_field(&sols, DEFAULT_JOINT_LENGTHSCALE).unwrap();
        let mut reached = vec![false; sols.len()];
        let pi = std::f64::consts::PI;
        for i in 0..15 {
            for j in 0..15 {
                let q0 = q(&[-pi + (i as f64 + 0.5) * 2.0 * pi / 15.0, -pi + (j as f64 + 0.5) * 2.0 * pi / 15.0]);
                let qf = integrate(&jc, q0, 1500, 0.02);
                if let Some(k) = sols.iter().position(|s| (s - &qf).norm() < 1e-3) {
                    reached[k] = true;
                }
            }
        }
        assert!(reached.iter().all(|r| *r), "{reached:?}");
    }

    #[test]
    fn snapshot_swaps_whole_values() {
        let s = Snapshot::new(vec![1, 2, 3]);
        let held = s.load();
        s.publish(vec![4, 5]);
        assert_eq!(*held, vec![1, 2, 3]);
        assert_eq!(*s.load(), vec![4, 5]);
    }

    #[test]
    fn snapshot_across_threads() {
        let s = Arc::new(Snapshot::new(0usize));
        let w = Arc::clone(&s);
        let h = std::thread::spawn(move || {
            for i in 1..=100 {
                w.publish(i);
            }
        });
        let mut last = 0;
        for _ in 0..1000 {
            let v = *s.load();
            assert!(v >= last);
            last = v;
        }
        h.join().unwrap();
        assert_eq!(*s.load(), 100);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn task_step_ascends(d in proptest::collection::vec(-0.4f64..0.4, 7)) {
            let (arm, c) = arm_controller(&home(), 0.05);
            let qk = &home() + q(&d);
            let x = arm.fk(&qk);
            let g = c.world_gradient(&x);
            let v = c.task_step(&arm, &qk);
            let twist = arm.jacobian(&qk) * v;
            prop_assert!(twist.dot(&DVector::from_column_slice(g.as_slice())) >= -1e-12);
        }

        #[test]
        fn retarget_is_equivariant(
            g in proptest::collection::vec(-0.5f64..0.5, 6),
            x in proptest::collection::vec(-0.3f64..0.3, 6),
        ) {
            let mix = RiemannianMixture::new(
                vec![0.4, 0.6],
                vec![
                    iso(exp_group(&Tangent::from_slice(&[0.1, 0.0, 0.2, 0.0, 0.3, 0.0])), 0.02),
                    iso(exp_group(&Tangent::from_slice(&[-0.1, 0.1, 0.0, 0.2, 0.0, -0.2])), 0.03),
                ],
            ).unwrap();
            let c = TaskController::new(mix, &ControlConfig::default()).unwrap();
            let g = exp_group(&Tangent::from_slice(&g));
            let x = exp_group(&Tangent::from_slice(&x));
            let moved = c.retarget(&g, |_| true).unwrap();
            let a = moved.grasp_mixture.prob(&g.compose(&x));
            let b = c.grasp_mixture.prob(&x);
            prop_assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0));
        }

        #[test]
        fn clipped_joint_descent_stays_in_limits(seed in 0u64..1000) {
            let arm = RobotModel::planar_2link();
            let jc = build_joint_field(&planar_solutions(), DEFAULT_JOINT_LENGTHSCALE).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut qk = arm.random_config(&mut rng) * 0.95;
            for _ in 0..200 {
                qk = arm.clamp(&(&qk + jc.joint_step(&qk) * 0.02));
                prop_assert!(arm.within_limits(&qk));
            }
        }
    }
}
