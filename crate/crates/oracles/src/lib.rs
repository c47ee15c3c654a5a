//! Reference computations for tests.
//!
//! Nothing in here calls into `shertwin`; every routine takes plain
//! nalgebra values (or closures) so it can check the library from the
//! outside.

use nalgebra::{Matrix4, Matrix5, Matrix6, SMatrix, Vector5, Vector6};

/// 4x4 lift of a twist `(linear, angular)`.
pub fn twist_hat(linear: [f64; 3], angular: [f64; 3]) -> Matrix4<f64> {
    let [wx, wy, wz] = angular;
    Matrix4::new(
        0.0, -wz, wy, linear[0], //
        wz, 0.0, -wx, linear[1], //
        -wy, wx, 0.0, linear[2], //
        0.0, 0.0, 0.0, 0.0,
    )
}

/// Dense matrix exponential by scaling and squaring of a truncated Taylor series.
pub fn dense_expm(m: &Matrix4<f64>) -> Matrix4<f64> {
    let norm = m.abs().row_sum().max();
    let mut squarings = 0;
    let mut scale = 1.0;
    while norm * scale > 0.125 {
        scale *= 0.5;
        squarings += 1;
    }
    let a = m * scale;
    let mut term = Matrix4::identity();
    let mut sum = Matrix4::identity();
    for k in 1..=24 {
        term = term * a / k as f64;
        sum += term;
    }
    for _ in 0..squarings {
        sum = sum * sum;
    }
    sum
}

/// Body velocity `(g^-1 gdot)^vee` by central differences along `theta_dot`.
pub fn fd_body_velocity<F>(fk: F, theta: &[f64; 5], theta_dot: &[f64; 5], h: f64) -> Vector6<f64>
where
    F: Fn(&[f64; 5]) -> Matrix4<f64>,
{
    let shifted = |s: f64| {
        let mut q = *theta;
        for i in 0..5 {
            q[i] += s * theta_dot[i];
        }
        fk(&q)
    };
    let g = fk(theta);
    let gdot = (shifted(h) - shifted(-h)) / (2.0 * h);
    let ginv = g.try_inverse().expect("forward kinematics returned a singular matrix");
    let xi = ginv * gdot;
    Vector6::new(
        xi[(0, 3)],
        xi[(1, 3)],
        xi[(2, 3)],
        xi[(2, 1)],
        xi[(0, 2)],
        xi[(1, 0)],
    )
}

/// Damped weighted least squares objective `|W^(1/2)(J q - v)|^2 + lambda^2 |q|^2`.
pub fn damped_ls_objective(
    j: &SMatrix<f64, 6, 5>,
    v: &Vector6<f64>,
    weights: &Vector6<f64>,
    lambda: f64,
    q: &Vector5<f64>,
) -> f64 {
    let r = j * q - v;
    let mut acc = 0.0;
    for i in 0..6 {
        acc += weights[i] * r[i] * r[i];
    }
    acc + lambda * lambda * q.norm_squared()
}

/// Accelerated projected gradient (FISTA with gradient restart) on the damped
/// least squares objective over the box `[lo, hi]`, run until the iterate stalls.
pub fn projected_gradient_qp(
    j: &SMatrix<f64, 6, 5>,
    v: &Vector6<f64>,
    weights: &Vector6<f64>,
    lambda: f64,
    lo: &Vector5<f64>,
    hi: &Vector5<f64>,
) -> Vector5<f64> {
    let w = Matrix6::from_diagonal(weights);
    let h: Matrix5<f64> = 2.0 * (j.transpose() * w * j + Matrix5::identity() * lambda * lambda);
    let g: Vector5<f64> = -2.0 * (j.transpose() * w * v);
    // Lipschitz constant: Gershgorin bound on the symmetric Hessian.
    let lip = (0..5)
        .map(|r| (0..5).map(|c| h[(r, c)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
        .max(1e-300);
    let project = |x: Vector5<f64>| {
        let mut y = x;
        for i in 0..5 {
            y[i] = y[i].clamp(lo[i], hi[i]);
        }
        y
    };
    let mut x = project(Vector5::zeros());
    let mut y = x;
    let mut t = 1.0_f64;
    for _ in 0..2_000_000 {
        let grad = h * y + g;
        let x_next = project(y - grad / lip);
        if (x_next - x).amax() < 1e-17 {
            x = x_next;
            break;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        // Restart momentum when it points uphill.
        if (y - x_next).dot(&(x_next - x)) > 0.0 {
            t = 1.0;
            y = x_next;
        } else {
            y = x_next + (x_next - x) * ((t - 1.0) / t_next);
            t = t_next;
        }
        x = x_next;
    }
    x
}

/// Eq.-10-style block matrices built entry by entry: returns `(kinematic, adaptive)`
/// so that `xdes = kinematic * xo + adaptive * [xa_x, xa_y, 0, 0, 0, 0]`.
pub fn hybrid_blocks(delta: [f64; 2], kappa: [f64; 6]) -> (Matrix6<f64>, Matrix6<f64>) {
    let mut kin = Matrix6::zeros();
    kin[(0, 0)] = (1.0 - delta[0]) * kappa[0];
    kin[(1, 1)] = (1.0 - delta[1]) * kappa[1];
    for i in 2..6 {
        kin[(i, i)] = kappa[i];
    }
    let mut ada = Matrix6::zeros();
    ada[(0, 0)] = delta[0];
    ada[(1, 1)] = delta[1];
    (kin, ada)
}

/// One sample of the single-axis adaptive force loop reference.
#[derive(Clone, Copy, Debug)]
pub struct AfcSample {
    pub t: f64,
    pub force_mn: f64,
    pub desired_mn: f64,
}

/// Reference integration of the decaying force reference, the adaptive velocity
/// law, the compliance update and a linear spring `F = k x` (k in N/m, F in mN),
/// starting at activation with `F = force0_mn`. Classic RK4 on `(x, alpha)`.
pub fn afc_spring_reference(
    stiffness: f64,
    threshold_mn: f64,
    k_f: f64,
    gamma: f64,
    alpha0: f64,
    force0_mn: f64,
    dt: f64,
    duration: f64,
) -> Vec<AfcSample> {
    let sign = force0_mn.signum();
    let fd = |t: f64| threshold_mn * sign / 2.0 * ((-t).exp() + 1.0);
    let fd_dot = |t: f64| -threshold_mn * sign / 2.0 * (-t).exp();
    let rhs = |t: f64, x: f64, alpha: f64| {
        let force = 1000.0 * stiffness * x;
        let err = force - fd(t);
        (alpha * fd_dot(t) - k_f * err, -gamma * fd_dot(t) * err)
    };
    let mut x = force0_mn / (1000.0 * stiffness);
    let mut alpha = alpha0;
    let steps = (duration / dt).round() as usize;
    let mut out = Vec::with_capacity(steps + 1);
    for n in 0..=steps {
        let t = n as f64 * dt;
        out.push(AfcSample { t, force_mn: 1000.0 * stiffness * x, desired_mn: fd(t) });
        let (k1x, k1a) = rhs(t, x, alpha);
        let (k2x, k2a) = rhs(t + dt / 2.0, x + dt / 2.0 * k1x, alpha + dt / 2.0 * k1a);
        let (k3x, k3a) = rhs(t + dt / 2.0, x + dt / 2.0 * k2x, alpha + dt / 2.0 * k2a);
        let (k4x, k4a) = rhs(t + dt, x + dt * k3x, alpha + dt * k3a);
        x += dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        alpha += dt / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a);
    }
    out
}

/// Step response of a first-order lag: `target * (1 - exp(-t / tau))`.
pub fn first_order_step(target: f64, tau: f64, t: f64) -> f64 {
    target * (1.0 - (-t / tau).exp())
}

/// Rotation angle of a first-order rotational system `D theta' = tau - K theta`
/// released from rest.
pub fn first_order_rotation(torque: f64, stiffness: f64, damping: f64, t: f64) -> f64 {
    torque / stiffness * (1.0 - (-stiffness * t / damping).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expm_of_zero_is_identity() {
        assert_eq!(dense_expm(&Matrix4::zeros()), Matrix4::identity());
    }

    #[test]
    fn expm_rotation_about_z() {
        let m = twist_hat([0.0; 3], [0.0, 0.0, std::f64::consts::FRAC_PI_2]);
        let e = dense_expm(&m);
        assert!((e[(0, 1)] + 1.0).abs() < 1e-14);
        assert!((e[(1, 0)] - 1.0).abs() < 1e-14);
        assert!(e[(0, 0)].abs() < 1e-14);
    }

    #[test]
    fn pg_solves_unconstrained_identity() {
        let mut j = SMatrix::<f64, 6, 5>::zeros();
        for i in 0..5 {
            j[(i, i)] = 1.0;
        }
        let v = Vector6::new(0.1, -0.2, 0.3, 0.0, 0.05, 0.0);
        let q = projected_gradient_qp(&j, &v, &Vector6::repeat(1.0), 0.0, &Vector5::repeat(-1.0), &Vector5::repeat(1.0));
        for i in 0..5 {
            assert!((q[i] - v[i]).abs() < 1e-9);
        }
    }
}
