//! Mid-level joint-velocity optimizer and the simulated low-level velocity loop.

use nalgebra::{Matrix5, Matrix6, Vector5, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{BodyVelocity, Jacobian};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("non-finite value in solver input ({0})")]
    NonFinite(&'static str),
    #[error("time step must be positive, got {0}")]
    BadTimeStep(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JointLimits {
    pub pos_min: Vector5<f64>,
    pub pos_max: Vector5<f64>,
    pub vel_max: Vector5<f64>,
}

impl Default for JointLimits {
    fn default() -> Self {
        Self::sher_default()
    }
}

impl JointLimits {
    /// +/-50 mm and +/-30 deg; 50 mm/s and 0.5 rad/s.
    pub fn sher_default() -> Self {
        let rot = 30f64.to_radians();
        JointLimits {
            pos_min: Vector5::new(-0.05, -0.05, -0.05, -rot, -rot),
            pos_max: Vector5::new(0.05, 0.05, 0.05, rot, rot),
            vel_max: Vector5::new(0.05, 0.05, 0.05, 0.5, 0.5),
        }
    }

    pub fn is_valid(&self) -> bool {
        (0..5).all(|i| {
            self.pos_min[i] < self.pos_max[i] && self.vel_max[i] > 0.0 && self.vel_max[i].is_finite()
        })
    }

    /// Per-joint rate interval that respects the speed bound and keeps
    /// `theta + rate * dt` inside the position range. Always contains zero.
    pub fn rate_bounds(&self, theta: &Vector5<f64>, dt: f64) -> (Vector5<f64>, Vector5<f64>) {
        let mut lo = Vector5::zeros();
        let mut hi = Vector5::zeros();
        for i in 0..5 {
            let room_down = (self.pos_min[i] - theta[i]) / dt;
            let room_up = (self.pos_max[i] - theta[i]) / dt;
            lo[i] = (-self.vel_max[i]).max(room_down).min(0.0);
            hi[i] = self.vel_max[i].min(room_up).max(0.0);
        }
        (lo, hi)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Tikhonov damping lambda.
    pub damping: f64,
    /// Per-channel weights on the task-space residual.
    pub weights: Vector6<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { damping: 1e-3, weights: Vector6::repeat(1.0) }
    }
}

/// Box-constrained damped least squares:
/// minimize `|W^(1/2)(J qd - v)|^2 + lambda^2 |qd|^2` over the rate box.
pub fn solve_joint_velocities(
    jacobian: &Jacobian,
    v_des: &BodyVelocity,
    limits: &JointLimits,
    theta: &Vector5<f64>,
    dt: f64,
    config: &SolverConfig,
) -> Result<Vector5<f64>, SolverError> {
    if !(dt > 0.0) {
        return Err(SolverError::BadTimeStep(dt));
    }
    if jacobian.iter().any(|x| !x.is_finite()) {
        return Err(SolverError::NonFinite("jacobian"));
    }
    if !v_des.is_finite() {
        return Err(SolverError::NonFinite("desired velocity"));
    }
    if theta.iter().any(|x| !x.is_finite()) {
        return Err(SolverError::NonFinite("joint positions"));
    }
    let w = Matrix6::from_diagonal(&config.weights);
    let hessian = jacobian.transpose() * w * jacobian + Matrix5::identity() * config.damping.powi(2);
    let gradient = -(jacobian.transpose() * w * v_des.to_vector());
    let (lo, hi) = limits.rate_bounds(theta, dt);
    Ok(solve_box_qp(&hessian, &gradient, &lo, &hi))
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Bound {
    Free,
    Lower,
    Upper,
}

/// Primal active-set method for `min 1/2 x'Hx + g'x, lo <= x <= hi` with
/// `H` positive definite and `lo <= 0 <= hi`. Starts from the origin.
pub fn solve_box_qp(h: &Matrix5<f64>, g: &Vector5<f64>, lo: &Vector5<f64>, hi: &Vector5<f64>) -> Vector5<f64> {
    const MAX_ITER: usize = 64;
    let mut x = Vector5::zeros();
    let mut state = [Bound::Free; 5];
    for i in 0..5 {
        if lo[i] == hi[i] {
            x[i] = lo[i];
            state[i] = Bound::Lower;
        }
    }

    for _ in 0..MAX_ITER {
        let free: Vec<usize> = (0..5).filter(|&i| state[i] == Bound::Free).collect();
        let target = solve_free(h, g, &x, &free);

        // Walk toward the subspace minimizer; stop at the first blocking bound.
        let mut step = 1.0;
        let mut blocking = None;
        for (k, &i) in free.iter().enumerate() {
            let d = target[k] - x[i];
            if d > 0.0 && target[k] > hi[i] {
                let s = (hi[i] - x[i]) / d;
                if s < step {
                    step = s;
                    blocking = Some((i, Bound::Upper));
                }
            } else if d < 0.0 && target[k] < lo[i] {
                let s = (lo[i] - x[i]) / d;
                if s < step {
                    step = s;
                    blocking = Some((i, Bound::Lower));
                }
            }
        }
        for (k, &i) in free.iter().enumerate() {
            x[i] += step * (target[k] - x[i]);
        }
        if let Some((i, side)) = blocking {
            x[i] = if side == Bound::Upper { hi[i] } else { lo[i] };
            state[i] = side;
            continue;
        }

        // Subspace optimum reached; release the most violated bound, if any.
        let grad = h * x + g;
        let mut release = None;
        let mut worst = 0.0;
        for i in 0..5 {
            if lo[i] == hi[i] {
                continue;
            }
            let violation = match state[i] {
                Bound::Lower => -grad[i],
                Bound::Upper => grad[i],
                Bound::Free => 0.0,
            };
            if violation > worst {
                worst = violation;
                release = Some(i);
            }
        }
        match release {
            Some(i) => state[i] = Bound::Free,
            None => break,
        }
    }
    for i in 0..5 {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
    x
}

fn solve_free(h: &Matrix5<f64>, g: &Vector5<f64>, x: &Vector5<f64>, free: &[usize]) -> Vec<f64> {
    let n = free.len();
    if n == 0 {
        return Vec::new();
    }
    let fixed: Vec<usize> = (0..5).filter(|i| !free.contains(i)).collect();
    let mut a = nalgebra::DMatrix::zeros(n, n);
    let mut b = nalgebra::DVector::zeros(n);
    for (r, &i) in free.iter().enumerate() {
        for (c, &j) in free.iter().enumerate() {
            a[(r, c)] = h[(i, j)];
        }
        b[r] = -g[i] - fixed.iter().map(|&j| h[(i, j)] * x[j]).sum::<f64>();
    }
    let sol = a
        .cholesky()
        .map(|c| c.solve(&b))
        .expect("damped normal matrix is positive definite");
    sol.iter().copied().collect()
}

/// First-order, rate-limited joint velocity servo.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VelocityPlant {
    pub time_constant: f64,
    /// Per-joint bound on |d(rate)/dt|.
    pub rate_limit: Vector5<f64>,
    pub velocity: Vector5<f64>,
}

impl VelocityPlant {
    pub fn new(time_constant: f64, rate_limit: Vector5<f64>) -> Self {
        VelocityPlant { time_constant, rate_limit, velocity: Vector5::zeros() }
    }
}

/// Exact discrete first-order lag toward `desired`, then per-joint rate clamp.
pub fn track_joint_velocity(plant: &VelocityPlant, desired: &Vector5<f64>, dt: f64) -> VelocityPlant {
    let blend = 1.0 - (-dt / plant.time_constant).exp();
    let mut next = *plant;
    for i in 0..5 {
        let change = blend * (desired[i] - plant.velocity[i]);
        let max_change = plant.rate_limit[i] * dt;
        next.velocity[i] = plant.velocity[i] + change.clamp(-max_change, max_change);
    }
    next
}
