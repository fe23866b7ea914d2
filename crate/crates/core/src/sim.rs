//! Closed-loop kinematic scenarios: a rigid object follows a trajectory,
//! grasps are sampled once and moved with it, and one of the two
//! controllers drives the arm. Every step is logged; the summary metrics
//! are recomputed from the log alone.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::{CloudError, PointCloud};
use crate::control::{damped_pinv_apply, ControlConfig, ControlError, JointController, TaskController, PINV_DAMPING};
use crate::grasp::{run_pipeline, GraspError, GraspSet, GripperSpec, PipelineConfig};
use crate::rmm::{RiemannianGaussian, RiemannianMixture};
use crate::robot::{JointState, MultiStartConfig, RobotError, RobotModel};
use crate::se3::{axis_angle_matrix, body_to_world, Pose};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("scenario file is malformed: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Robot(#[from] RobotError),
    #[error(transparent)]
    Grasp(#[from] GraspError),
    #[error(transparent)]
    Control(#[from] ControlError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Static,
    Circular,
    Linear,
    Sinusoidal,
}

/// Object motion. `origin` is the circle center for circular paths and
/// the start position otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Trajectory {
    pub kind: TrajectoryKind,
    pub origin: [f64; 3],
    pub radius: f64,
    /// rad/s along the circle.
    pub angular_rate: f64,
    /// m/s for linear paths.
    pub velocity: [f64; 3],
    pub amplitude: [f64; 3],
    pub period: f64,
    /// Constant spin of the object, rad/s about `rotation_axis`.
    pub rotation_rate: f64,
    pub rotation_axis: [f64; 3],
}

impl Default for Trajectory {
    fn default() -> Self {
        Self {
            kind: TrajectoryKind::Static,
            origin: [0.55, 0.0, 0.4],
            radius: 0.0,
            angular_rate: 0.0,
            velocity: [0.0; 3],
            amplitude: [0.0; 3],
            period: 1.0,
            rotation_rate: 0.2,
            rotation_axis: [0.0, 0.0, 1.0],
        }
    }
}

impl Trajectory {
    pub fn fixed(origin: Vector3<f64>) -> Self {
        Self {
            origin: origin.into(),
            rotation_rate: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let finite = [self.radius, self.angular_rate, self.period, self.rotation_rate]
            .iter()
            .chain(&self.origin)
            .chain(&self.velocity)
            .chain(&self.amplitude)
            .all(|v| v.is_finite());
        if !finite {
            return Err(SimError::Invalid("trajectory has non-finite parameters".into()));
        }
        if self.kind == TrajectoryKind::Sinusoidal && !(self.period > 0.0) {
            return Err(SimError::Invalid("sinusoidal period must be positive".into()));
        }
        if self.rotation_rate != 0.0 && Vector3::from(self.rotation_axis).norm() < 1e-12 {
            return Err(SimError::Invalid("rotation axis is zero".into()));
        }
        Ok(())
    }

    /// Peak translational speed, m/s.
    pub fn max_speed(&self) -> f64 {
        match self.kind {
            TrajectoryKind::Static => 0.0,
            TrajectoryKind::Circular => (self.radius * self.angular_rate).abs(),
            TrajectoryKind::Linear => Vector3::from(self.velocity).norm(),
            TrajectoryKind::Sinusoidal => Vector3::from(self.amplitude).norm() * 2.0 * std::f64::consts::PI / self.period,
        }
    }
}

/// Closed-form object pose at `time`.
pub fn trajectory_pose(t: &Trajectory, time: f64) -> Pose {
    let o = Vector3::from(t.origin);
    let p = match t.kind {
        TrajectoryKind::Static => o,
        TrajectoryKind::Circular => {
            let a = t.angular_rate * time;
            o + Vector3::new(a.cos(), a.sin(), 0.0) * t.radius
        }
        TrajectoryKind::Linear => o + Vector3::from(t.velocity) * time,
        TrajectoryKind::Sinusoidal => {
            o + Vector3::from(t.amplitude) * (2.0 * std::f64::consts::PI * time / t.period).sin()
        }
    };
    let angle = t.rotation_rate * time;
    let rotation = if angle == 0.0 {
        nalgebra::Matrix3::identity()
    } else {
        axis_angle_matrix(&Vector3::from(t.rotation_axis).normalize(), angle)
    };
    Pose::new(rotation, p)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Task,
    Joint,
}

impl ControllerKind {
    pub fn name(&self) -> &'static str {
        match self {
            ControllerKind::Task => "task",
            ControllerKind::Joint => "joint",
        }
    }
}

/// Latch trigger: pose error to the nearest accepted grasp under both
/// bounds for `steps` consecutive steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatchConfig {
    pub position: f64,
    pub rotation: f64,
    pub steps: usize,
}

impl Default for LatchConfig {
    fn default() -> Self {
        Self {
            position: 0.005,
            rotation: 0.05,
            steps: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub name: String,
    /// Object cloud in its own frame, PLY or CSV; relative to the scenario file.
    pub object: PathBuf,
    pub robot: PathBuf,
    pub gripper: Option<PathBuf>,
    pub trajectory: Trajectory,
    pub controller: ControllerKind,
    /// When non-empty, `simulate` runs the scenario once per entry.
    pub compare: Vec<ControllerKind>,
    pub dt: f64,
    pub duration: f64,
    pub seed: u64,
    pub refresh_period: f64,
    pub latch: LatchConfig,
    /// Disables joint-limit clamping so violations can be counted.
    pub free_running: bool,
    /// Start configuration; zeros when absent.
    pub start: Option<Vec<f64>>,
    /// Half-width of the seeded uniform perturbation of `start`, rad.
    pub start_spread: f64,
    pub pipeline: PipelineConfig,
    pub control: ControlConfig,
    pub ik: MultiStartConfig,
    /// Upper bound on grasps turned into mixture components / IK targets.
    pub max_grasps: usize,
    /// Isotropic tangent variance of each grasp component.
    pub grasp_variance: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "scenario".into(),
            object: PathBuf::new(),
            robot: PathBuf::new(),
            gripper: None,
            trajectory: Trajectory::default(),
            controller: ControllerKind::Task,
            compare: Vec::new(),
            dt: 0.01,
            duration: 10.0,
            seed: 0,
            refresh_period: 0.5,
            latch: LatchConfig::default(),
            free_running: false,
            start: None,
            start_spread: 0.0,
            pipeline: PipelineConfig::default(),
            control: ControlConfig::default(),
            ik: MultiStartConfig {
                n_starts: 16,
                ..MultiStartConfig::default()
            },
            max_grasps: 8,
            grasp_variance: 0.02,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0) || !(self.duration >= 0.0) {
            return Err(SimError::Invalid("dt must be positive and duration nonnegative".into()));
        }
        if self.duration > 0.0 && self.duration < self.dt {
            return Err(SimError::Invalid("duration shorter than one step".into()));
        }
        if !(self.refresh_period > 0.0) || !(self.grasp_variance > 0.0) || self.max_grasps == 0 {
            return Err(SimError::Invalid("refresh period, grasp variance and max_grasps must be positive".into()));
        }
        self.trajectory.validate()
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt + 1e-9).floor() as usize
    }
}

/// A scenario with its files loaded.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub cfg: ScenarioConfig,
    pub cloud: PointCloud,
    pub robot: RobotModel,
}

impl Scenario {
    pub fn new(cfg: ScenarioConfig, cloud: PointCloud, robot: RobotModel) -> Result<Self, SimError> {
        cfg.validate()?;
        robot.validate()?;
        Ok(Self { cfg, cloud, robot })
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg: ScenarioConfig = serde_json::from_str(&text)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let cloud = PointCloud::load(&dir.join(&cfg.object))?;
        let robot = RobotModel::load(&dir.join(&cfg.robot))?;
        if let Some(g) = &cfg.gripper {
            let p = dir.join(g);
            let text = fs::read_to_string(&p).map_err(|source| SimError::Io {
                path: p.display().to_string(),
                source,
            })?;
            let spec: GripperSpec = serde_json::from_str(&text)?;
            spec.validate()?;
            cfg.pipeline.gripper = spec;
        }
        Self::new(cfg, cloud, robot)
    }

    pub fn with_controller(&self, kind: ControllerKind) -> Scenario {
        let mut s = self.clone();
        s.cfg.controller = kind;
        s
    }
}

/// Equal-weight mixture with one isotropic component per grasp.
pub fn grasp_mixture(grasps: &[Pose], variance: f64) -> Result<RiemannianMixture, SimError> {
    let comps = grasps
        .iter()
        .map(|g| RiemannianGaussian::new(*g, nalgebra::Matrix6::identity() * variance))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| SimError::Invalid(e.to_string()))?;
    let w = vec![1.0 / comps.len() as f64; comps.len()];
    RiemannianMixture::new(w, comps).map_err(|e| SimError::Invalid(e.to_string()))
}

fn grasp_gap(a: &Pose, b: &Pose) -> f64 {
    let (t, r) = a.distance_to(b);
    t + r
}

/// Up to `max` grasps passing `feasible`: the `prior` ones first, in
/// order, then farthest-point picks from `pool` (ties to the lower index).
pub fn select_grasps(prior: &[Pose], pool: &[Pose], max: usize, mut feasible: impl FnMut(&Pose) -> bool) -> Vec<Pose> {
    let mut chosen: Vec<Pose> = Vec::new();
    for p in prior {
        if chosen.len() < max && feasible(p) {
            chosen.push(*p);
        }
    }
    let mut open: Vec<bool> = pool
        .iter()
        .map(|g| !prior.iter().any(|p| grasp_gap(p, g) < 1e-9))
        .collect();
    while chosen.len() < max {
        let gap = |i: usize| chosen.iter().map(|c| grasp_gap(c, &pool[i])).fold(f64::INFINITY, f64::min);
        let next = (0..pool.len())
            .filter(|&i| open[i])
            .max_by(|&a, &b| gap(a).total_cmp(&gap(b)).then(b.cmp(&a)));
        let Some(i) = next else { break };
        open[i] = false;
        if feasible(&pool[i]) {
            chosen.push(pool[i]);
        }
    }
    chosen
}

/// Nearest grasp by `t / pos_tol + r / rot_tol`; returns its translation
/// and rotation errors.
pub fn nearest_grasp_error(x: &Pose, grasps: &[Pose], latch: &LatchConfig) -> (f64, f64) {
    grasps
        .iter()
        .map(|g| x.distance_to(g))
        .min_by(|a, b| (a.0 / latch.position + a.1 / latch.rotation).total_cmp(&(b.0 / latch.position + b.1 / latch.rotation)))
        .unwrap_or((f64::INFINITY, f64::INFINITY))
}

/// Everything computed once before the loop: the grasp set sampled at
/// time 0 and the initial controller.
#[derive(Clone, Debug)]
pub struct Setup {
    pub set: GraspSet,
    pub start_pose: Pose,
    /// Filtered grasps at time 0, world frame.
    pub grasps: Vec<Pose>,
    pub task: Option<TaskController>,
    pub joint: Option<JointController>,
}

impl Setup {
    /// Grasps the controller is currently steering to.
    pub fn accepted(&self) -> Vec<Pose> {
        match (&self.task, &self.joint) {
            (Some(c), _) => c.grasp_mixture.components.iter().map(|c| c.mean).collect(),
            (_, Some(j)) => j.grasps.clone(),
            _ => Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
enum Active {
    Task(TaskController),
    Joint(JointController),
}

impl Active {
    fn targets(&self) -> Vec<Pose> {
        match self {
            Active::Task(c) => c.grasp_mixture.components.iter().map(|c| c.mean).collect(),
            Active::Joint(j) => j.grasps.clone(),
        }
    }
}

pub fn ik_feasible(robot: &RobotModel, ik: &MultiStartConfig, x: &Pose) -> bool {
    !robot.ik_multistart(x, ik).is_empty()
}

/// Chooses IK-feasible grasps (prior targets first) and builds the
/// configured controller on them.
fn build_controller(scenario: &Scenario, prior: &[Pose], pool: &[Pose]) -> Result<Active, SimError> {
    let cfg = &scenario.cfg;
    let robot = &scenario.robot;
    let mut sols = Vec::new();
    let accepted = select_grasps(prior, pool, cfg.max_grasps, |x| {
        let s = robot.ik_multistart(x, &cfg.ik);
        let ok = !s.is_empty();
        if ok {
            sols.push(s);
        }
        ok
    });
    if accepted.is_empty() {
        return Err(ControlError::NoFeasibleGrasp.into());
    }
    Ok(match cfg.controller {
        ControllerKind::Task => Active::Task(TaskController::new(grasp_mixture(&accepted, cfg.grasp_variance)?, &cfg.control)?),
        ControllerKind::Joint => Active::Joint(JointController::assemble(accepted, &sols, &cfg.control, &cfg.ik)?),
    })
}

/// Samples grasps on the object at time 0 and builds the controller for
/// `scenario.cfg.controller`.
pub fn prepare(scenario: &Scenario) -> Result<Setup, SimError> {
    let cfg = &scenario.cfg;
    let start_pose = trajectory_pose(&cfg.trajectory, 0.0);
    let set = run_pipeline(&scenario.cloud.transformed(&start_pose), &cfg.pipeline)?;
    let grasps: Vec<Pose> = set.grasps.iter().map(|g| g.pose).collect();
    let (task, joint) = match build_controller(scenario, &[], &grasps)? {
        Active::Task(c) => (Some(c), None),
        Active::Joint(j) => (None, Some(j)),
    };
    Ok(Setup {
        set,
        start_pose,
        grasps,
        task,
        joint,
    })
}

/// Seeded start `center + U(-spread, spread)` per joint, clamped to the
/// limits, free of self-collision and with the tool above `z = 0.1`.
pub fn random_start(robot: &RobotModel, center: &JointState, spread: f64, seed: u64) -> JointState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let noise = DVector::from_fn(robot.dof(), |_, _| if spread > 0.0 { rng.random_range(-spread..spread) } else { 0.0 });
        let q = robot.clamp(&(center + noise));
        if spread == 0.0 || (!robot.self_collision(&q) && robot.fk(&q).translation.z > 0.1) {
            return q;
        }
    }
}

/// One logged control step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub time: f64,
    pub q: Vec<f64>,
    pub ee: [f64; 12],
    pub object: [f64; 12],
    /// Field distance of the tool point to the object surface, m (signed).
    pub surface_distance: f64,
    /// Tool point to object origin, m.
    pub origin_distance: f64,
    pub position_error: f64,
    pub rotation_error: f64,
    pub manipulability: f64,
    pub self_collision: bool,
    pub limit_violation: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetrics {
    pub name: String,
    pub controller: ControllerKind,
    pub trajectory: TrajectoryKind,
    pub steps: usize,
    pub self_collision_pct: f64,
    pub joint_limit_violation_pct: f64,
    pub mean_manipulability: f64,
    /// Tool point to object surface (zero inside), cm.
    pub mean_gripper_object_distance: f64,
    /// Tool point to object origin, cm.
    pub mean_gripper_origin_distance: f64,
    pub final_gripper_object_distance: f64,
    pub final_position_error: f64,
    pub final_rotation_error: f64,
    pub grasp_latched: bool,
    pub latch_time: Option<f64>,
    pub failure: Option<String>,
    #[serde(skip)]
    pub per_step_log: Vec<StepRecord>,
}

impl ScenarioMetrics {
    /// Summary of a log. Pure: the same log always gives the same metrics.
    pub fn from_log(
        name: &str,
        controller: ControllerKind,
        trajectory: TrajectoryKind,
        log: Vec<StepRecord>,
        latch: &LatchConfig,
        failure: Option<String>,
    ) -> Self {
        let n = log.len();
        let pct = |f: &dyn Fn(&StepRecord) -> bool| {
            if n == 0 {
                0.0
            } else {
                100.0 * log.iter().filter(|r| f(r)).count() as f64 / n as f64
            }
        };
        let mean = |f: &dyn Fn(&StepRecord) -> f64| {
            if n == 0 {
                0.0
            } else {
                log.iter().map(f).sum::<f64>() / n as f64
            }
        };
        let mut run = 0;
        let mut latch_time = None;
        for r in &log {
            if r.position_error < latch.position && r.rotation_error < latch.rotation {
                run += 1;
                if run >= latch.steps && latch_time.is_none() {
                    latch_time = Some(r.time);
                }
            } else {
                run = 0;
            }
        }
        let last = log.last();
        Self {
            name: name.to_string(),
            controller,
            trajectory,
            steps: n,
            self_collision_pct: pct(&|r| r.self_collision),
            joint_limit_violation_pct: pct(&|r| r.limit_violation),
            mean_manipulability: mean(&|r| r.manipulability),
            mean_gripper_object_distance: mean(&|r| r.surface_distance.max(0.0) * 100.0),
            mean_gripper_origin_distance: mean(&|r| r.origin_distance * 100.0),
            final_gripper_object_distance: last.map_or(0.0, |r| r.surface_distance.max(0.0) * 100.0),
            final_position_error: last.map_or(0.0, |r| r.position_error),
            final_rotation_error: last.map_or(0.0, |r| r.rotation_error),
            grasp_latched: latch_time.is_some(),
            latch_time,
            failure,
            per_step_log: log,
        }
    }

    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }

    /// Per-step table: time, joints, tool and object poses (row-major 3×4),
    /// distances, errors, manipulability and violation flags.
    pub fn log_csv(&self) -> String {
        let mut out = String::new();
        let dof = self.per_step_log.first().map_or(0, |r| r.q.len());
        let mut head = vec!["time".to_string()];
        head.extend((0..dof).map(|i| format!("q{i}")));
        head.extend((0..12).map(|i| format!("ee{i}")));
        head.extend((0..12).map(|i| format!("obj{i}")));
        for h in [
            "surface_distance",
            "origin_distance",
            "position_error",
            "rotation_error",
            "manipulability",
            "self_collision",
            "limit_violation",
        ] {
            head.push(h.into());
        }
        out.push_str(&head.join(","));
        out.push('\n');
        for r in &self.per_step_log {
            let mut row = vec![format!("{}", r.time)];
            row.extend(r.q.iter().map(|v| format!("{v}")));
            row.extend(r.ee.iter().map(|v| format!("{v}")));
            row.extend(r.object.iter().map(|v| format!("{v}")));
            for v in [r.surface_distance, r.origin_distance, r.position_error, r.rotation_error, r.manipulability] {
                row.push(format!("{v}"));
            }
            row.push((r.self_collision as u8).to_string());
            row.push((r.limit_violation as u8).to_string());
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Runs the scenario from its configured (or seeded random) start.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioMetrics, SimError> {
    let setup = prepare(scenario)?;
    let center = match &scenario.cfg.start {
        Some(v) => {
            if v.len() != scenario.robot.dof() {
                return Err(SimError::Invalid("start has the wrong joint count".into()));
            }
            DVector::from_column_slice(v)
        }
        None => DVector::zeros(scenario.robot.dof()),
    };
    let q0 = random_start(&scenario.robot, &center, scenario.cfg.start_spread, scenario.cfg.seed);
    Ok(run_from(scenario, &setup, &q0))
}

/// The control loop proper, from a prepared setup and a start state.
pub fn run_from(scenario: &Scenario, setup: &Setup, q0: &JointState) -> ScenarioMetrics {
    let cfg = &scenario.cfg;
    let robot = &scenario.robot;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut active = match cfg.controller {
        ControllerKind::Task => Active::Task(setup.task.clone().expect("task controller prepared")),
        ControllerKind::Joint => Active::Joint(setup.joint.clone().expect("joint controller prepared")),
    };
    // Targets as placed at the last refresh, and that placement.
    let mut targets = active.targets();
    let mut refreshed_at = setup.start_pose;
    let mut last_refresh = 0.0;
    let mut q = q0.clone();
    let mut log = Vec::with_capacity(cfg.steps());
    let mut failure = None;
    for k in 0..cfg.steps() {
        let time = k as f64 * cfg.dt;
        let object = trajectory_pose(&cfg.trajectory, time);
        if time - last_refresh >= cfg.refresh_period - 1e-9 {
            // The sampler is equivariant, so the time-0 grasps moved with
            // the object are what it would return now.
            let motion = object.compose(&refreshed_at.inverse());
            if motion != Pose::identity() {
                let from_start = object.compose(&setup.start_pose.inverse());
                let pool: Vec<Pose> = setup.grasps.iter().map(|g| from_start.compose(g)).collect();
                let prior: Vec<Pose> = targets.iter().map(|g| motion.compose(g)).collect();
                match build_controller(scenario, &prior, &pool) {
                    Ok(a) => {
                        active = a;
                        targets = active.targets();
                        refreshed_at = object;
                    }
                    Err(e) => {
                        failure = Some(e.to_string());
                        break;
                    }
                }
            }
            last_refresh = time;
        }
        let since = object.compose(&refreshed_at.inverse());
        let current: Vec<Pose> = targets.iter().map(|g| since.compose(g)).collect();
        let x = robot.fk(&q);
        let tool = x.translation;
        let (pe, re) = nearest_grasp_error(&x, &current, &cfg.latch);
        let moved_from_start = object.compose(&setup.start_pose.inverse());
        log.push(StepRecord {
            time,
            q: q.iter().copied().collect(),
            ee: x.to_row_major(),
            object: object.to_row_major(),
            surface_distance: setup.set.distance(&moved_from_start, &tool),
            origin_distance: (tool - object.translation).norm(),
            position_error: pe,
            rotation_error: re,
            manipulability: robot.manipulability(&q),
            self_collision: robot.self_collision(&q),
            limit_violation: !robot.within_limits(&q),
        });
        let mut next = match &active {
            Active::Task(c) => {
                // Means follow the object every step; reachability is
                // rechecked only at refresh.
                let moved = TaskController {
                    grasp_mixture: c.grasp_mixture.transform(&since),
                    ..c.clone()
                };
                let mut qn = &q + moved.task_step(robot, &q) * cfg.dt;
                if let Some(d) = moved.escape_if_stuck(&x, &mut rng) {
                    let w = body_to_world(&x, &d);
                    let v = DVector::from_column_slice(w.as_slice());
                    qn += damped_pinv_apply(&robot.jacobian(&q), &v, PINV_DAMPING);
                }
                qn
            }
            Active::Joint(j) => &q + j.joint_step(&q) * cfg.dt,
        };
        if !cfg.free_running {
            next = robot.clamp(&next);
        }
        q = next;
    }
    ScenarioMetrics::from_log(&cfg.name, cfg.controller, cfg.trajectory.kind, log, &cfg.latch, failure)
}

/// Side-by-side metrics of several runs plus deltas of every run against
/// the first run on the same trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub trajectory: TrajectoryKind,
    pub method: ControllerKind,
    pub self_collision_pct: f64,
    pub joint_limit_violation_pct: f64,
    pub mean_manipulability: f64,
    pub mean_gripper_object_distance: f64,
    pub delta: [f64; 4],
}

impl ComparisonRow {
    fn values(&self) -> [f64; 4] {
        [
            self.self_collision_pct,
            self.joint_limit_violation_pct,
            self.mean_manipulability,
            self.mean_gripper_object_distance,
        ]
    }
}

pub fn compare_controllers(runs: &[ScenarioMetrics]) -> Comparison {
    let mut rows: Vec<ComparisonRow> = runs
        .iter()
        .map(|m| ComparisonRow {
            trajectory: m.trajectory,
            method: m.controller,
            self_collision_pct: m.self_collision_pct,
            joint_limit_violation_pct: m.joint_limit_violation_pct,
            mean_manipulability: m.mean_manipulability,
            mean_gripper_object_distance: m.mean_gripper_object_distance,
            delta: [0.0; 4],
        })
        .collect();
    for i in 0..rows.len() {
        if let Some(base) = rows.iter().find(|r| r.trajectory == rows[i].trajectory).map(|r| r.values()) {
            let v = rows[i].values();
            rows[i].delta = std::array::from_fn(|j| v[j] - base[j]);
        }
    }
    Comparison { rows }
}

/// Runs `scenario` once per controller kind.
pub fn run_comparison(scenario: &Scenario, kinds: &[ControllerKind]) -> Result<Vec<ScenarioMetrics>, SimError> {
    kinds.iter().map(|k| run_scenario(&scenario.with_controller(*k))).collect()
}

impl Comparison {
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<11} {:<6} {:>10} {:>10} {:>9} {:>10} {:>9} {:>9} {:>9} {:>9}",
            "trajectory", "method", "collide%", "limits%", "manip", "dist_cm", "d_coll", "d_lim", "d_manip", "d_dist"
        );
        for r in &self.rows {
            let traj = format!("{:?}", r.trajectory).to_lowercase();
            let _ = writeln!(
                out,
                "{:<11} {:<6} {:>10.2} {:>10.2} {:>9.4} {:>10.3} {:>9.2} {:>9.2} {:>9.4} {:>9.3}",
                traj,
                r.method.name(),
                r.self_collision_pct,
                r.joint_limit_violation_pct,
                r.mean_manipulability,
                r.mean_gripper_object_distance,
                r.delta[0],
                r.delta[1],
                r.delta[2],
                r.delta[3]
            );
        }
        out
    }
}
