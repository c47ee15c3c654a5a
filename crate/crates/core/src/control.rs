//! High-level control: adaptive sclera-force law, per-axis hybrid
//! kinematic/force switching, master-to-body mapping, admittance mode and
//! pedal scaling.
//!
//! Forces are in mN, velocities in m/s (rad/s for angular channels).

use nalgebra::{Matrix3, Rotation3, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::BodyVelocity;

/// Fraction of the threshold at which an active axis hands back to kinematic control.
pub const RELEASE_FRACTION: f64 = 0.75;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("adaptive force control is not active on this axis")]
    Inactive,
    #[error("invalid gains: {0}")]
    InvalidGains(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub const BOTH: [Axis; 2] = [Axis::X, Axis::Y];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AfcGains {
    /// Activation threshold T_s, mN.
    pub threshold_mn: f64,
    /// Reported safe limit, mN.
    pub safe_limit_mn: f64,
    /// Force-error gain per axis, (m/s)/mN.
    pub k_f: [f64; 2],
    /// Adaptation gain per axis.
    pub gamma: [f64; 2],
    /// Initial compliance estimate per axis, m/mN.
    pub alpha0: [f64; 2],
}

impl Default for AfcGains {
    fn default() -> Self {
        AfcGains {
            threshold_mn: 100.0,
            safe_limit_mn: 120.0,
            k_f: [5e-5; 2],
            gamma: [1e-8; 2],
            alpha0: [0.0; 2],
        }
    }
}

impl AfcGains {
    pub fn validate(&self) -> Result<(), ControlError> {
        if !(self.threshold_mn > 0.0 && self.threshold_mn < self.safe_limit_mn) {
            return Err(ControlError::InvalidGains("need 0 < threshold < safe limit"));
        }
        if !self.k_f.iter().all(|&k| k > 0.0 && k.is_finite()) {
            return Err(ControlError::InvalidGains("k_f must be positive"));
        }
        if !self.gamma.iter().all(|&g| g > 0.0 && g.is_finite()) {
            return Err(ControlError::InvalidGains("gamma must be positive"));
        }
        if !self.alpha0.iter().all(|a| a.is_finite()) {
            return Err(ControlError::InvalidGains("alpha0 must be finite"));
        }
        Ok(())
    }
}

/// Switching and adaptation state of one lateral axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AfcAxisState {
    pub active: bool,
    pub t_activation: f64,
    pub sign: f64,
    /// Magnitude the reference starts from at activation, mN.
    pub level: f64,
    /// Compliance estimate, m/mN. Kept across episodes.
    pub alpha: f64,
    pub f_d: f64,
    pub f_d_dot: f64,
}

impl AfcAxisState {
    pub fn new(alpha0: f64) -> Self {
        AfcAxisState { active: false, t_activation: 0.0, sign: 1.0, level: 0.0, alpha: alpha0, f_d: 0.0, f_d_dot: 0.0 }
    }

    pub fn delta(&self) -> f64 {
        if self.active {
            1.0
        } else {
            0.0
        }
    }
}

/// Reference decaying exponentially from the activation level to half of it,
/// and its rate.
pub fn desired_force_trajectory(state: &AfcAxisState, t: f64) -> Result<(f64, f64), ControlError> {
    if !state.active {
        return Err(ControlError::Inactive);
    }
    let half = state.level * state.sign / 2.0;
    let decay = (-(t - state.t_activation)).exp();
    Ok((half * (decay + 1.0), -half * decay))
}

/// Adaptive velocity for one axis plus an explicit-Euler compliance update.
pub fn afc_axis_velocity(
    gains: &AfcGains,
    axis: Axis,
    state: &AfcAxisState,
    force_mn: f64,
    t: f64,
    dt: f64,
) -> Result<(f64, AfcAxisState), ControlError> {
    let (f_d, f_d_dot) = desired_force_trajectory(state, t)?;
    let i = axis.index();
    let error = force_mn - f_d;
    let velocity = state.alpha * f_d_dot - gains.k_f[i] * error;
    let next = AfcAxisState {
        alpha: state.alpha - gains.gamma[i] * f_d_dot * error * dt,
        f_d,
        f_d_dot,
        ..*state
    };
    Ok((velocity, next))
}

fn activate(state: &AfcAxisState, level: f64, force_mn: f64, t: f64) -> AfcAxisState {
    AfcAxisState {
        active: true,
        t_activation: t,
        sign: if force_mn < 0.0 { -1.0 } else { 1.0 },
        level,
        ..*state
    }
}

/// One tick of the single-axis switching rule with hysteresis: activate when
/// |F| reaches the threshold, release once |F| falls to 0.75 of it.
pub fn switching_policy(threshold_mn: f64, state: &AfcAxisState, force_mn: f64, t: f64) -> AfcAxisState {
    if !state.active {
        if force_mn.abs() >= threshold_mn {
            return activate(state, threshold_mn, force_mn, t);
        }
    } else if force_mn.abs() <= RELEASE_FRACTION * state.level {
        return AfcAxisState { active: false, ..*state };
    }
    *state
}

/// An idle axis joins a norm-triggered activation only if it carries at
/// least this fraction of the lateral force.
pub const JOIN_FRACTION: f64 = 0.5;

/// Switching rule for both lateral axes.
///
/// An idle axis activates when the lateral force norm reaches the threshold
/// and the axis carries a substantial share of it (or its own component
/// reaches the threshold). Its reference starts from its share of the
/// threshold, `T_s |F_i| / |F|`, so the two references together decay along
/// the direction of the force at activation. An active axis releases once
/// its component falls to 0.75 of its starting level. With force on a single
/// axis this is exactly [`switching_policy`].
pub fn lateral_switching_policy(threshold_mn: f64, states: &[AfcAxisState; 2], forces_mn: [f64; 2], t: f64) -> [AfcAxisState; 2] {
    let norm = forces_mn[0].hypot(forces_mn[1]);
    let mut next = *states;
    for i in 0..2 {
        let (state, force) = (&states[i], forces_mn[i]);
        if !state.active {
            let joins = force.abs() >= JOIN_FRACTION * norm || force.abs() >= threshold_mn;
            if norm >= threshold_mn && joins {
                next[i] = activate(state, threshold_mn * force.abs() / norm, force, t);
            }
        } else if force.abs() <= RELEASE_FRACTION * state.level {
            next[i] = AfcAxisState { active: false, ..*state };
        }
    }
    next
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionScaling {
    pub kappa: [f64; 6],
}

impl Default for MotionScaling {
    fn default() -> Self {
        MotionScaling { kappa: [1.0; 6] }
    }
}

impl MotionScaling {
    pub fn is_valid(&self) -> bool {
        self.kappa.iter().all(|&k| k >= 0.0 && k.is_finite())
    }
}

/// Blend of scaled master velocity and adaptive lateral velocities.
/// The adaptive terms are not scaled by kappa.
pub fn hybrid_command(delta: [bool; 2], scaling: &MotionScaling, master_body: &BodyVelocity, adaptive: [f64; 2]) -> BodyVelocity {
    let xo = master_body.to_vector();
    let k = &scaling.kappa;
    let mut out = Vector6::zeros();
    for i in 0..2 {
        let d = if delta[i] { 1.0 } else { 0.0 };
        out[i] = (1.0 - d) * k[i] * xo[i] + d * adaptive[i];
    }
    for i in 2..6 {
        out[i] = k[i] * xo[i];
    }
    BodyVelocity::from_vector(&out)
}

/// Rotation taking master-device axes onto the robot body axes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MasterBodyMap {
    pub rotation: Matrix3<f64>,
}

impl Default for MasterBodyMap {
    fn default() -> Self {
        MasterBodyMap { rotation: Matrix3::identity() }
    }
}

impl MasterBodyMap {
    /// From a rotation vector (axis * angle, rad).
    pub fn from_rotation_vector(v: Vector3<f64>) -> Self {
        MasterBodyMap { rotation: Rotation3::new(v).into_inner() }
    }

    pub fn is_valid(&self) -> bool {
        let r = &self.rotation;
        (r.transpose() * r - Matrix3::identity()).amax() <= 1e-10 && (r.determinant() - 1.0).abs() <= 1e-10
    }
}

pub fn map_master_to_body(map: &MasterBodyMap, master: &BodyVelocity) -> BodyVelocity {
    BodyVelocity { linear: map.rotation * master.linear, angular: map.rotation * master.angular }
}

/// Diagonal admittance: handle wrench (N, N m) to body velocity.
pub fn admittance_command(wrench: &Vector6<f64>, gain: &Vector6<f64>) -> BodyVelocity {
    BodyVelocity::from_vector(&wrench.component_mul(gain))
}

/// Scale a kinematic command by pedal depression, clamped to [0, 1].
pub fn pedal_scale(cmd: &BodyVelocity, pedal: f64) -> BodyVelocity {
    let p = if pedal.is_nan() { 0.0 } else { pedal.clamp(0.0, 1.0) };
    cmd.scaled(p)
}
