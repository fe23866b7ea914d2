use std::path::Path;

use fdgrasp::sim::{prepare, run_from, ControllerKind, Scenario, StepRecord};
use nalgebra::DVector;

fn static_scenario(kind: ControllerKind) -> Scenario {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/scenarios/static_sphere.json");
    Scenario::load(&path).unwrap().with_controller(kind)
}

fn increases(values: &[f64], from: usize) -> Vec<(usize, f64)> {
    (from.max(1)..values.len())
        .filter(|&i| values[i] > values[i - 1] + 1e-6)
        .map(|i| (i, values[i] - values[i - 1]))
        .collect()
}

fn pose_errors(log: &[StepRecord]) -> (Vec<f64>, Vec<f64>) {
    (log.iter().map(|r| r.position_error).collect(), log.iter().map(|r| r.rotation_error).collect())
}

#[test]
fn task_pose_error_is_monotone_after_ten_steps() {
    let s = static_scenario(ControllerKind::Task);
    let setup = prepare(&s).unwrap();
    let q0 = DVector::from_vec(s.cfg.start.clone().unwrap());
    let m = run_from(&s, &setup, &q0);
    assert!(m.grasp_latched);
    let (pos, rot) = pose_errors(&m.per_step_log);
    assert!(increases(&pos, 10).is_empty(), "position error rises: {:?}", increases(&pos, 10));
    assert!(increases(&rot, 10).is_empty(), "rotation error rises: {:?}", increases(&rot, 10));
}

#[test]
fn joint_field_distance_is_monotone() {
    let s = static_scenario(ControllerKind::Joint);
    let setup = prepare(&s).unwrap();
    let joint = setup.joint.as_ref().unwrap();
    let q0 = DVector::from_vec(s.cfg.start.clone().unwrap());
    let m = run_from(&s, &setup, &q0);
    assert!(m.grasp_latched);
    let d: Vec<f64> = m
        .per_step_log
        .iter()
        .map(|r| joint.distance(&DVector::from_vec(r.q.clone())))
        .collect();
    assert!(increases(&d, 0).is_empty(), "field distance rises: {:?}", increases(&d, 0));
}

#[test]
fn runs_are_deterministic() {
    for kind in [ControllerKind::Task, ControllerKind::Joint] {
        let s = static_scenario(kind);
        let setup = prepare(&s).unwrap();
        let q0 = DVector::from_vec(s.cfg.start.clone().unwrap());
        let a = run_from(&s, &setup, &q0);
        let b = run_from(&s, &prepare(&s).unwrap(), &q0);
        assert_eq!(a.log_csv(), b.log_csv());
        assert_eq!(a.summary_json(), b.summary_json());
    }
}
