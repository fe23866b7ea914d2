//! Rigid transforms, the SE(3) exponential/logarithm, and the manifold
//! Log/Exp maps used by every pose statistic in the crate.
//!
//! Tangent vectors are 6-vectors `[rho, omega]`: translational part first,
//! rotational part last. Perturbations are applied on the right,
//! `x ⊕ v = x · Exp(v)`, so tangent vectors at a pose live in its body frame.

use std::f64::consts::PI;
use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Matrix6, Rotation3, Unit, Vector3, Vector6};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Below this rotation angle the closed-form coefficients switch to series.
pub const SMALL_ANGLE: f64 = 1e-8;
/// Log is refused for angles within this margin of pi.
pub const BRANCH_MARGIN: f64 = 1e-6;
/// Step used for the finite-difference right Jacobian.
pub const JACOBIAN_STEP: f64 = 1e-5;

const ALGEBRA_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Se3Error {
    #[error("matrix is not in se(3): {0}")]
    MalformedAlgebra(&'static str),
    #[error("rotation angle {angle} is too close to pi for a unique logarithm")]
    BranchAmbiguity { angle: f64 },
    #[error("expected 12 pose values, got {0}")]
    BadLength(usize),
    #[error("rotation block is not orthonormal")]
    NotOrthonormal,
}

/// A rigid transform `[R t; 0 1]`.
#[derive(Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl fmt::Debug for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (axis, angle) = rotation_axis_angle(&self.rotation);
        write!(
            f,
            "Pose(t=[{:.6}, {:.6}, {:.6}], angle={:.6}, axis=[{:.4}, {:.4}, {:.4}])",
            self.translation.x, self.translation.y, self.translation.z, angle, axis.x, axis.y, axis.z
        )
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    pub fn from_rotation(r: Matrix3<f64>) -> Self {
        Self::new(r, Vector3::zeros())
    }

    /// Rotation of `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        Self::from_rotation(axis_angle_matrix(axis, angle))
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt * self.translation))
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> Self {
        Self::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    /// Row-major `[R|t]`, the serialized form used in every file format.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t[0], //
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t[1], //
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t[2],
        ]
    }

    /// Inverse of [`Pose::to_row_major`]. The rotation block is checked for
    /// orthonormality (1e-6) and then re-orthonormalized.
    pub fn from_row_major(v: &[f64]) -> Result<Self, Se3Error> {
        if v.len() != 12 {
            return Err(Se3Error::BadLength(v.len()));
        }
        let r = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        let t = Vector3::new(v[3], v[7], v[11]);
        if (r.transpose() * r - Matrix3::identity()).norm() > 1e-6 || r.determinant() < 0.0 {
            return Err(Se3Error::NotOrthonormal);
        }
        Ok(Self::new(orthonormalize(&r), t))
    }

    /// Frobenius error of the orthonormality and unit-determinant constraints.
    pub fn orthonormality_error(&self) -> f64 {
        let r = &self.rotation;
        (r.transpose() * r - Matrix3::identity()).norm() + (r.determinant() - 1.0).abs()
    }

    /// Rotation angle in `[0, pi]`.
    pub fn rotation_angle(&self) -> f64 {
        rotation_axis_angle(&self.rotation).1
    }

    /// Translation distance and rotation angle between two poses.
    pub fn distance_to(&self, other: &Pose) -> (f64, f64) {
        let rel = self.inverse().compose(other);
        (
            (self.translation - other.translation).norm(),
            rel.rotation_angle(),
        )
    }

    /// Right perturbation `self · Exp(v)`.
    pub fn oplus(&self, v: &Tangent) -> Pose {
        exp_at(self, v)
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl Mul<&Pose> for &Pose {
    type Output = Pose;
    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_row_major().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        Pose::from_row_major(&v).map_err(serde::de::Error::custom)
    }
}

/// Element of se(3) in compact form, `[rho; omega]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tangent(pub Vector6<f64>);

impl Tangent {
    pub fn zeros() -> Self {
        Self(Vector6::zeros())
    }

    pub fn new(rho: Vector3<f64>, omega: Vector3<f64>) -> Self {
        Self(Vector6::new(rho.x, rho.y, rho.z, omega.x, omega.y, omega.z))
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self(Vector6::from_column_slice(v))
    }

    pub fn rho(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn omega(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl std::ops::Add for Tangent {
    type Output = Tangent;
    fn add(self, rhs: Tangent) -> Tangent {
        Tangent(self.0 + rhs.0)
    }
}

impl std::ops::Sub for Tangent {
    type Output = Tangent;
    fn sub(self, rhs: Tangent) -> Tangent {
        Tangent(self.0 - rhs.0)
    }
}

impl std::ops::Mul<f64> for Tangent {
    type Output = Tangent;
    fn mul(self, rhs: f64) -> Tangent {
        Tangent(self.0 * rhs)
    }
}

pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

fn unskew(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

pub fn hat(v: &Tangent) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&v.omega()));
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&v.rho());
    m
}

pub fn vee(m: &Matrix4<f64>) -> Result<Tangent, Se3Error> {
    let w = m.fixed_view::<3, 3>(0, 0);
    if (w + w.transpose()).norm() > ALGEBRA_TOL {
        return Err(Se3Error::MalformedAlgebra("rotation block is not skew-symmetric"));
    }
    if m.fixed_view::<1, 4>(3, 0).norm() > ALGEBRA_TOL {
        return Err(Se3Error::MalformedAlgebra("bottom row is not zero"));
    }
    let w = w.into_owned();
    Ok(Tangent::new(
        m.fixed_view::<3, 1>(0, 3).into_owned(),
        unskew(&w),
    ))
}

pub fn axis_angle_matrix(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let n = axis.norm();
    if n == 0.0 {
        return Matrix3::identity();
    }
    Rotation3::from_axis_angle(&Unit::new_unchecked(axis / n), angle).into_inner()
}

/// Axis and angle of a rotation, valid on the whole of SO(3) including pi.
pub fn rotation_axis_angle(r: &Matrix3<f64>) -> (Vector3<f64>, f64) {
    let s = unskew(&(r - r.transpose())) * 0.5;
    let sin = s.norm();
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let angle = sin.atan2(cos);
    if sin > 1e-6 {
        return (s / sin, angle);
    }
    if cos > 0.0 {
        if sin > 0.0 {
            return (s / sin, angle);
        }
        return (Vector3::z(), 0.0);
    }
    // Near pi: R + I = 2 a a^T, take its largest column.
    let b = r + Matrix3::identity();
    let mut best = 0;
    for j in 1..3 {
        if b.column(j).norm() > b.column(best).norm() {
            best = j;
        }
    }
    let mut axis = b.column(best).into_owned().normalize();
    if axis.dot(&s) < 0.0 {
        axis = -axis;
    }
    (axis, angle)
}

/// `(sin θ / θ, (1 - cos θ) / θ², (θ - sin θ) / θ³)`
fn exp_coeffs(theta: f64) -> (f64, f64, f64) {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let half = (0.5 * theta).sin();
        (
            theta.sin() / theta,
            2.0 * half * half / (theta * theta),
            (theta - theta.sin()) / (theta * theta * theta),
        )
    }
}

/// Left Jacobian of SO(3), the `V` matrix of the SE(3) exponential.
fn so3_left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let (_, b, c) = exp_coeffs(theta);
    let w = skew(omega);
    Matrix3::identity() + w * b + w * w * c
}

fn so3_left_jacobian_inv(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let w = skew(omega);
    let d = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half * half.cos() / half.sin()) / (theta * theta)
    };
    Matrix3::identity() - w * 0.5 + w * w * d
}

fn so3_exp(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let (a, b, _) = exp_coeffs(theta);
    let w = skew(omega);
    Matrix3::identity() + w * a + w * w * b
}

/// Lie-group exponential, closed form.
pub fn exp_group(v: &Tangent) -> Pose {
    let omega = v.omega();
    Pose::new(so3_exp(&omega), so3_left_jacobian(&omega) * v.rho())
}

/// Lie-group logarithm on the principal branch.
pub fn log_group(t: &Pose) -> Result<Tangent, Se3Error> {
    let (axis, angle) = rotation_axis_angle(&t.rotation);
    if angle > PI - BRANCH_MARGIN {
        return Err(Se3Error::BranchAmbiguity { angle });
    }
    let omega = if angle < SMALL_ANGLE {
        unskew(&(t.rotation - t.rotation.transpose())) * 0.5
    } else {
        axis * angle
    };
    let rho = so3_left_jacobian_inv(&omega) * t.translation;
    Ok(Tangent::new(rho, omega))
}

/// `Log_mu(x) = Log(mu⁻¹ x)`.
pub fn log_at(mu: &Pose, x: &Pose) -> Result<Tangent, Se3Error> {
    log_group(&mu.inverse().compose(x))
}

/// `Exp_mu(v) = mu · Exp(v)`.
pub fn exp_at(mu: &Pose, v: &Tangent) -> Pose {
    mu.compose(&exp_group(v))
}

/// Derivative of `log_at(mu, x ⊕ δ)` with respect to `δ` at `δ = 0`,
/// by central differences with step [`JACOBIAN_STEP`]. Column `j` is the
/// response to a perturbation along tangent axis `j`.
pub fn right_jacobian_inv(mu: &Pose, x: &Pose) -> Result<Matrix6<f64>, Se3Error> {
    let h = JACOBIAN_STEP;
    let mut jac = Matrix6::zeros();
    for j in 0..6 {
        let mut delta = Vector6::zeros();
        delta[j] = h;
        let plus = log_at(mu, &x.oplus(&Tangent(delta)))?;
        let minus = log_at(mu, &x.oplus(&Tangent(-delta)))?;
        jac.set_column(j, &((plus.0 - minus.0) / (2.0 * h)));
    }
    Ok(jac)
}

/// Maps a body-frame tangent `[rho, omega]` at pose `x` to the world-frame
/// `[linear, angular]` velocity its right perturbation induces.
pub fn body_to_world(x: &Pose, v: &Tangent) -> Vector6<f64> {
    let lin = x.rotation * v.rho();
    let ang = x.rotation * v.omega();
    Vector6::new(lin.x, lin.y, lin.z, ang.x, ang.y, ang.z)
}

/// Closest rotation matrix in the Frobenius sense.
pub fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut out = u * vt;
    if out.determinant() < 0.0 {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        out = u2 * vt;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_tangent(max_angle: f64) -> impl Strategy<Value = Tangent> {
        (
            prop::array::uniform3(-2.0f64..2.0),
            prop::array::uniform3(-1.0f64..1.0),
            0.0..max_angle,
        )
            .prop_map(|(rho, w, angle)| {
                let w = Vector3::from(w);
                let omega = if w.norm() < 1e-3 {
                    Vector3::zeros()
                } else {
                    w.normalize() * angle
                };
                Tangent::new(Vector3::from(rho), omega)
            })
    }

    fn arb_pose(max_angle: f64) -> impl Strategy<Value = Pose> {
        arb_tangent(max_angle).prop_map(|v| exp_group(&v))
    }

    #[test]
    fn hat_of_zero_is_zero() {
        assert_eq!(hat(&Tangent::zeros()), Matrix4::zeros());
    }

    #[test]
    fn hat_rotation_block_is_skew() {
        let theta = 0.7;
        let m = hat(&Tangent::from_slice(&[0.0, 0.0, 0.0, 0.0, 0.0, theta]));
        let expect = Matrix3::new(0.0, -theta, 0.0, theta, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(m.fixed_view::<3, 3>(0, 0).into_owned(), expect);
        assert_eq!(m.row(3).norm(), 0.0);
    }

    #[test]
    fn vee_examples() {
        assert_eq!(vee(&Matrix4::zeros()).unwrap(), Tangent::zeros());
        let v = Tangent::from_slice(&[1.0, 2.0, 3.0, 0.0, 0.0, 0.0]);
        assert_eq!(vee(&hat(&v)).unwrap(), v);
        let mut bad = Matrix4::zeros();
        bad[(1, 1)] = 1.0;
        assert!(matches!(vee(&bad), Err(Se3Error::MalformedAlgebra(_))));
        let mut bad_row = Matrix4::zeros();
        bad_row[(3, 0)] = 1.0;
        assert!(vee(&bad_row).is_err());
    }

    #[test]
    fn exp_examples() {
        assert_eq!(exp_group(&Tangent::zeros()), Pose::identity());
        let p = exp_group(&Tangent::from_slice(&[0.3, -1.0, 2.0, 0.0, 0.0, 0.0]));
        assert_eq!(p.rotation, Matrix3::identity());
        assert_eq!(p.translation, Vector3::new(0.3, -1.0, 2.0));

        // Rodrigues at 90 degrees about z is [[0,-1,0],[1,0,0],[0,0,1]].
        let q = exp_group(&Tangent::from_slice(&[0.0, 0.0, 0.0, 0.0, 0.0, PI / 2.0]));
        let expect = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((q.rotation - expect).norm() < 1e-15);
        assert!(q.translation.norm() < 1e-15);
    }

    #[test]
    fn log_examples() {
        assert_eq!(log_group(&Pose::identity()).unwrap(), Tangent::zeros());
        let rz = Pose::from_rotation(Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0));
        let v = log_group(&rz).unwrap();
        let expect = Vector6::new(0.0, 0.0, 0.0, 0.0, 0.0, PI / 2.0);
        assert!((v.0 - expect).norm() < 1e-14);
    }

    #[test]
    fn log_refuses_pi() {
        let p = Pose::from_axis_angle(&Vector3::x(), PI);
        assert!(matches!(log_group(&p), Err(Se3Error::BranchAmbiguity { .. })));
        let near = Pose::from_axis_angle(&Vector3::y(), PI - 1e-7);
        assert!(log_group(&near).is_err());
        let ok = Pose::from_axis_angle(&Vector3::y(), PI - 1e-4);
        assert!(log_group(&ok).is_ok());
    }

    #[test]
    fn tiny_angles_roundtrip() {
        for &a in &[0.0, 1e-12, 1e-9, 1e-7, 1e-5, 1e-3] {
            let v = Tangent::from_slice(&[0.1, 0.2, -0.3, a, -a, 0.5 * a]);
            let back = log_group(&exp_group(&v)).unwrap();
            assert!((back.0 - v.0).norm() < 1e-12, "angle {a}");
        }
    }

    #[test]
    fn log_exp_at_basepoint() {
        let mu = exp_group(&Tangent::from_slice(&[0.5, 0.1, -0.2, 0.3, 0.2, -0.4]));
        assert!(log_at(&mu, &mu).unwrap().norm() < 1e-12);
        assert_eq!(exp_at(&mu, &Tangent::zeros()), mu);
        let x = exp_group(&Tangent::from_slice(&[0.1, 0.0, 1.0, 0.0, 1.2, 0.0]));
        assert_eq!(log_at(&Pose::identity(), &x).unwrap(), log_group(&x).unwrap());
        let v = Tangent::from_slice(&[0.3, 0.3, 0.3, -0.2, 0.1, 0.0]);
        assert_eq!(exp_at(&Pose::identity(), &v), exp_group(&v));
    }

    #[test]
    fn right_jacobian_at_basepoint_is_identity() {
        let mu = exp_group(&Tangent::from_slice(&[1.0, -0.5, 0.2, 0.4, -0.9, 0.3]));
        let j = right_jacobian_inv(&mu, &mu).unwrap();
        assert!((j - Matrix6::identity()).abs().max() < 1e-5);
    }

    #[test]
    fn right_jacobian_for_translations() {
        // For xi = (rho, 0) the series I + ad/2 + ... terminates after the
        // first order term, leaving a single skew(rho)/2 block.
        let mu = Pose::from_translation(Vector3::new(0.2, 0.1, -0.4));
        let x = Pose::from_translation(Vector3::new(-1.0, 0.5, 0.3));
        let rho = x.translation - mu.translation;
        let j = right_jacobian_inv(&mu, &x).unwrap();
        let mut expect = Matrix6::identity();
        expect.fixed_view_mut::<3, 3>(0, 3).copy_from(&(skew(&rho) * 0.5));
        assert!((j - expect).abs().max() < 1e-6);
        // Translation-only perturbations act flatly.
        let block = j.fixed_view::<6, 3>(0, 0).into_owned();
        assert!((block - Matrix6::identity().fixed_view::<6, 3>(0, 0)).abs().max() < 1e-6);
    }

    #[test]
    fn right_jacobian_matches_definition() {
        let mu = exp_group(&Tangent::from_slice(&[0.3, 0.1, 0.2, 0.5, 0.2, -0.1]));
        let x = exp_group(&Tangent::from_slice(&[-0.4, 0.8, 0.0, -0.3, 0.9, 0.7]));
        let j = right_jacobian_inv(&mu, &x).unwrap();
        let h = JACOBIAN_STEP;
        for col in 0..6 {
            let mut d = Vector6::zeros();
            d[col] = h;
            let p = log_at(&mu, &x.oplus(&Tangent(d))).unwrap();
            let m = log_at(&mu, &x.oplus(&Tangent(-d))).unwrap();
            let fd = (p.0 - m.0) / (2.0 * h);
            assert!((j.column(col) - fd).norm() < 1e-12);
        }
    }

    #[test]
    fn pose_row_major_rejects_garbage() {
        assert!(matches!(Pose::from_row_major(&[0.0; 11]), Err(Se3Error::BadLength(11))));
        let mut v = Pose::identity().to_row_major();
        v[0] = 2.0;
        assert!(matches!(Pose::from_row_major(&v), Err(Se3Error::NotOrthonormal)));
    }

    #[test]
    fn axis_angle_near_pi() {
        for axis in [Vector3::x(), Vector3::new(1.0, 1.0, 0.0).normalize()] {
            let r = axis_angle_matrix(&axis, PI);
            let (a, t) = rotation_axis_angle(&r);
            assert!((t - PI).abs() < 1e-9);
            assert!((a.cross(&axis)).norm() < 1e-7);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn hat_vee_inverse(v in prop::array::uniform6(-10.0f64..10.0)) {
            let t = Tangent(Vector6::from(v));
            prop_assert_eq!(vee(&hat(&t)).unwrap(), t);
        }

        #[test]
        fn group_roundtrip(v in arb_tangent(3.0)) {
            let p = exp_group(&v);
            prop_assert!(p.orthonormality_error() < 1e-9);
            let back = log_group(&p).unwrap();
            prop_assert!((back.0 - v.0).norm() < 1e-8);
            prop_assert!(exp_group(&back).to_matrix().relative_eq(&p.to_matrix(), 1e-8, 1e-8));
        }

        #[test]
        fn manifold_roundtrip(mu in arb_pose(3.0), v in arb_tangent(3.0)) {
            let x = exp_at(&mu, &v);
            prop_assert!((x.to_matrix() - mu.to_matrix() * exp_group(&v).to_matrix()).norm() < 1e-12);
            let back = exp_at(&mu, &log_at(&mu, &x).unwrap());
            prop_assert!((back.to_matrix() - x.to_matrix()).norm() < 1e-8);
        }

        #[test]
        fn left_invariance(g in arb_pose(3.0), mu in arb_pose(1.5), v in arb_tangent(2.5)) {
            let x = exp_at(&mu, &v);
            let a = log_at(&mu, &x).unwrap();
            let b = log_at(&g.compose(&mu), &g.compose(&x)).unwrap();
            prop_assert!((a.0 - b.0).norm() < 1e-8);
        }

        #[test]
        fn operations_keep_rotations_orthonormal(a in arb_pose(3.0), b in arb_pose(3.0)) {
            prop_assert!(a.compose(&b).orthonormality_error() < 1e-9);
            prop_assert!(a.inverse().orthonormality_error() < 1e-9);
            let rt = Pose::from_row_major(&a.to_row_major()).unwrap();
            prop_assert!((rt.to_matrix() - a.to_matrix()).norm() < 1e-12);
        }
    }
}
