//! Screw-theoretic kinematics of a 3P-2R eye robot.
//!
//! Forward kinematics is the product of joint exponentials applied to the
//! home configuration, and the body Jacobian is assembled column by column
//! from inverse adjoints of the trailing products.

use nalgebra::{Matrix3, Matrix4, Matrix6, SMatrix, Vector3, Vector5, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::joints::JointLimits;

pub type Jacobian = SMatrix<f64, 6, 5>;

const UNIT_TOL: f64 = 1e-12;
const SMALL_ANGLE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("joint {index}: direction vector has norm {norm}, expected 1")]
    NonUnitAxis { index: usize, norm: f64 },
    #[error("robot model needs axes 1-3 prismatic and 4-5 revolute (axis {0} has the wrong kind)")]
    AxisOrder(usize),
    #[error("home transform is not a proper rigid transform")]
    InvalidHome,
    #[error("joint {index} position {value} outside [{min}, {max}]")]
    OutOfLimits { index: usize, value: f64, min: f64, max: f64 },
}

/// A joint axis expressed in the spatial frame at the home configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum JointAxis {
    Prismatic { v: Vector3<f64> },
    Revolute { omega: Vector3<f64>, q: Vector3<f64> },
}

impl JointAxis {
    pub fn prismatic(v: Vector3<f64>) -> Self {
        JointAxis::Prismatic { v }
    }

    pub fn revolute(omega: Vector3<f64>, q: Vector3<f64>) -> Self {
        JointAxis::Revolute { omega, q }
    }

    pub fn is_prismatic(&self) -> bool {
        matches!(self, JointAxis::Prismatic { .. })
    }

    fn direction(&self) -> &Vector3<f64> {
        match self {
            JointAxis::Prismatic { v } => v,
            JointAxis::Revolute { omega, .. } => omega,
        }
    }

    pub fn validate(&self, index: usize) -> Result<(), KinematicsError> {
        let norm = self.direction().norm();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOL {
            return Err(KinematicsError::NonUnitAxis { index, norm });
        }
        Ok(())
    }
}

/// Six-vector twist `(linear, angular)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Twist {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

impl Twist {
    pub fn new(linear: Vector3<f64>, angular: Vector3<f64>) -> Self {
        Twist { linear, angular }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.linear.x,
            self.linear.y,
            self.linear.z,
            self.angular.x,
            self.angular.y,
            self.angular.z,
        )
    }

    /// The se(3) matrix form.
    pub fn hat(&self) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.angular.cross_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.linear);
        m
    }
}

/// Rigid-body velocity (or any twist-valued quantity) as `(linear, angular)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BodyVelocity {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

impl BodyVelocity {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        BodyVelocity {
            linear: Vector3::new(v[0], v[1], v[2]),
            angular: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.linear.x,
            self.linear.y,
            self.linear.z,
            self.angular.x,
            self.angular.y,
            self.angular.z,
        )
    }

    pub fn scaled(&self, s: f64) -> Self {
        BodyVelocity { linear: self.linear * s, angular: self.angular * s }
    }

    pub fn is_finite(&self) -> bool {
        self.linear.iter().chain(self.angular.iter()).all(|x| x.is_finite())
    }
}

/// Element of SE(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        RigidTransform { rotation, translation }
    }

    pub fn identity() -> Self {
        RigidTransform { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        RigidTransform { rotation: Matrix3::identity(), translation }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn compose(&self, other: &RigidTransform) -> Self {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> Self {
        RigidTransform {
            rotation: m.fixed_view::<3, 3>(0, 0).into_owned(),
            translation: m.fixed_view::<3, 1>(0, 3).into_owned(),
        }
    }

    /// Orthonormality and orientation check.
    pub fn is_valid(&self, tol: f64) -> bool {
        let r = &self.rotation;
        let orth = (r.transpose() * r - Matrix3::identity()).amax();
        orth <= tol && (r.determinant() - 1.0).abs() <= tol && self.translation.iter().all(|x| x.is_finite())
    }
}

impl std::ops::Mul for RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

/// Twist of a single joint.
pub fn make_twist(axis: &JointAxis) -> Result<Twist, KinematicsError> {
    axis.validate(0)?;
    Ok(match axis {
        JointAxis::Prismatic { v } => Twist::new(*v, Vector3::zeros()),
        JointAxis::Revolute { omega, q } => Twist::new(-omega.cross(q), *omega),
    })
}

/// Closed-form exponential of `xi * theta`.
pub fn exp_twist(xi: &Twist, theta: f64) -> RigidTransform {
    let w_norm = xi.angular.norm();
    if w_norm == 0.0 {
        return RigidTransform::from_translation(xi.linear * theta);
    }
    let angle = w_norm * theta;
    let w_hat = xi.angular.cross_matrix();
    let w_hat2 = w_hat * w_hat;
    if angle.abs() < SMALL_ANGLE {
        // Second-order Taylor expansion; the dropped terms are below 1e-27.
        let rotation = Matrix3::identity() + w_hat * theta + w_hat2 * (theta * theta / 2.0);
        let translation = xi.linear * theta + w_hat * xi.linear * (theta * theta / 2.0);
        return RigidTransform { rotation, translation };
    }
    let (s, c) = angle.sin_cos();
    // Rodrigues with a non-unit axis folded into the coefficients.
    let a = s / w_norm;
    let b = (1.0 - c) / (w_norm * w_norm);
    let rotation = Matrix3::identity() + w_hat * a + w_hat2 * b;
    // V = I*theta + w_hat*(1-c)/|w|^2 + w_hat^2*(angle - s)/|w|^3
    let v = Matrix3::identity() * theta + w_hat * b + w_hat2 * ((angle - s) / (w_norm * w_norm * w_norm));
    RigidTransform { rotation, translation: v * xi.linear }
}

/// `[R, p^ R; 0, R]`.
pub fn adjoint(g: &RigidTransform) -> Matrix6<f64> {
    let r = &g.rotation;
    let mut ad = Matrix6::zeros();
    ad.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    ad.fixed_view_mut::<3, 3>(0, 3).copy_from(&(g.translation.cross_matrix() * r));
    ad.fixed_view_mut::<3, 3>(3, 3).copy_from(r);
    ad
}

/// `Ad_g^-1 = [R^T, -R^T p^; 0, R^T]`.
pub fn adjoint_inverse(g: &RigidTransform) -> Matrix6<f64> {
    let rt = g.rotation.transpose();
    let mut ad = Matrix6::zeros();
    ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
    ad.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-rt * g.translation.cross_matrix()));
    ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&rt);
    ad
}

/// Joint positions and rates.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct JointState {
    pub theta: Vector5<f64>,
    pub theta_dot: Vector5<f64>,
}

/// Five-axis robot: three prismatic joints followed by yaw and pitch.
#[derive(Clone, Debug, PartialEq)]
pub struct RobotModel {
    axes: [JointAxis; 5],
    twists: [Twist; 5],
    home: RigidTransform,
    limits: JointLimits,
}

impl RobotModel {
    pub fn new(axes: [JointAxis; 5], home: RigidTransform, limits: JointLimits) -> Result<Self, KinematicsError> {
        for (i, axis) in axes.iter().enumerate() {
            axis.validate(i + 1)?;
            if axis.is_prismatic() != (i < 3) {
                return Err(KinematicsError::AxisOrder(i + 1));
            }
        }
        if !home.is_valid(1e-10) {
            return Err(KinematicsError::InvalidHome);
        }
        let mut twists = [Twist::new(Vector3::zeros(), Vector3::zeros()); 5];
        for (t, axis) in twists.iter_mut().zip(axes.iter()) {
            *t = make_twist(axis)?;
        }
        Ok(RobotModel { axes, twists, home, limits })
    }

    /// Default geometry: x/y/z slides, yaw about z through (0,0,0.1) m,
    /// pitch about y through (0,0,0.15) m, handle at (0,0,0.2) m.
    pub fn sher_default() -> Self {
        let axes = default_axes();
        RobotModel::new(axes, RigidTransform::from_translation(Vector3::new(0.0, 0.0, 0.2)), JointLimits::sher_default())
            .expect("default geometry is valid")
    }

    pub fn axes(&self) -> &[JointAxis; 5] {
        &self.axes
    }

    pub fn twists(&self) -> &[Twist; 5] {
        &self.twists
    }

    pub fn home(&self) -> &RigidTransform {
        &self.home
    }

    pub fn limits(&self) -> &JointLimits {
        &self.limits
    }

    pub fn check_limits(&self, theta: &Vector5<f64>) -> Result<(), KinematicsError> {
        for i in 0..5 {
            let (min, max) = (self.limits.pos_min[i], self.limits.pos_max[i]);
            if !(theta[i] >= min && theta[i] <= max) {
                return Err(KinematicsError::OutOfLimits { index: i + 1, value: theta[i], min, max });
            }
        }
        Ok(())
    }
}

pub(crate) fn default_axes() -> [JointAxis; 5] {
    [
        JointAxis::prismatic(Vector3::x()),
        JointAxis::prismatic(Vector3::y()),
        JointAxis::prismatic(Vector3::z()),
        JointAxis::revolute(Vector3::z(), Vector3::new(0.0, 0.0, 0.1)),
        JointAxis::revolute(Vector3::y(), Vector3::new(0.0, 0.0, 0.15)),
    ]
}

/// `g_SB(theta) = exp(xi1 th1) ... exp(xi5 th5) g_SB(0)`.
pub fn forward_kinematics(model: &RobotModel, theta: &Vector5<f64>) -> RigidTransform {
    model
        .twists
        .iter()
        .enumerate()
        .rev()
        .fold(model.home, |acc, (i, xi)| exp_twist(xi, theta[i]).compose(&acc))
}

/// Body Jacobian; column i is `Ad^-1_{exp(xi_i th_i)...exp(xi_5 th_5) g(0)} xi_i`.
pub fn body_jacobian(model: &RobotModel, theta: &Vector5<f64>) -> Jacobian {
    let mut jac = Jacobian::zeros();
    let mut tail = model.home;
    for i in (0..5).rev() {
        let xi = &model.twists[i];
        tail = exp_twist(xi, theta[i]).compose(&tail);
        jac.set_column(i, &(adjoint_inverse(&tail) * xi.to_vector()));
    }
    jac
}

/// `V_SB^b = J_SB(theta) theta_dot`.
pub fn end_effector_velocity(model: &RobotModel, theta: &Vector5<f64>, theta_dot: &Vector5<f64>) -> BodyVelocity {
    BodyVelocity::from_vector(&(body_jacobian(model, theta) * theta_dot))
}
