//! Compliant eye phantom and the virtual force/depth sensor.
//!
//! Forces reported to controllers are in mN and expressed in the tool body
//! frame; forces fed to the eye dynamics are SI vectors in the world frame.

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::RigidTransform;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("tool is disengaged from its port")]
    Disengaged,
    #[error("invalid eye phantom: {0}")]
    Invalid(&'static str),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EyePhantom {
    pub center: Vector3<f64>,
    pub radius: f64,
    /// World-from-eye rotation.
    pub orientation: Matrix3<f64>,
    /// Sclerotomy directions (unit, eye frame).
    pub ports: [Vector3<f64>; 2],
    pub rot_stiffness: f64,
    pub rot_damping: f64,
    /// Lateral port stiffness k_s in N/m.
    pub sclera_stiffness: f64,
    /// Tip contact stiffness k_t in N/m.
    pub retina_stiffness: f64,
    /// A shaft further than this from its port has slipped out.
    pub guard_radius: f64,
}

impl EyePhantom {
    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.radius > 0.0) {
            return Err(SceneError::Invalid("radius must be positive"));
        }
        if !(self.rot_stiffness >= 0.0 && self.sclera_stiffness >= 0.0 && self.retina_stiffness >= 0.0) {
            return Err(SceneError::Invalid("stiffnesses must be non-negative"));
        }
        if !(self.rot_damping > 0.0) {
            return Err(SceneError::Invalid("rotational damping must be positive"));
        }
        if self.ports.iter().any(|p| (p.norm() - 1.0).abs() > 1e-9) {
            return Err(SceneError::Invalid("port directions must be unit vectors"));
        }
        Ok(())
    }

    /// Sclerotomy point in world coordinates.
    pub fn port_world(&self, port: usize) -> Vector3<f64> {
        self.center + self.orientation * (self.ports[port] * self.radius)
    }

    /// Eye-frame point to world.
    pub fn to_world(&self, p_eye: &Vector3<f64>) -> Vector3<f64> {
        self.center + self.orientation * p_eye
    }
}

/// Tool pose: body origin at the handle, shaft along body z.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToolState {
    pub pose: RigidTransform,
    pub shaft_dir: Vector3<f64>,
    pub tip: Vector3<f64>,
    pub shaft_length: f64,
}

impl ToolState {
    pub fn from_pose(pose: RigidTransform, shaft_length: f64) -> Self {
        let shaft_dir = pose.rotation.column(2).into_owned();
        ToolState { pose, shaft_dir, tip: pose.translation + shaft_dir * shaft_length, shaft_length }
    }

    pub fn handle(&self) -> Vector3<f64> {
        self.pose.translation
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScleraForceReading {
    /// mN, body x.
    pub fsx: f64,
    /// mN, body y.
    pub fsy: f64,
    /// mN.
    pub norm: f64,
    /// mN.
    pub tip_force: f64,
    /// mm.
    pub insertion_depth: f64,
    pub timestamp: f64,
    pub disengaged: bool,
}

/// Shaft offset from the port, perpendicular to the shaft (world, m), and the
/// signed port-to-tip distance along the shaft (m).
fn port_geometry(scene: &EyePhantom, tool: &ToolState, port: usize) -> (Vector3<f64>, f64) {
    let p = scene.port_world(port);
    let along = (p - tool.handle()).dot(&tool.shaft_dir);
    let closest = tool.handle() + tool.shaft_dir * along;
    (closest - p, tool.shaft_length - along)
}

fn engaged(scene: &EyePhantom, deviation: &Vector3<f64>, depth: f64) -> bool {
    depth >= 0.0 && deviation.norm() <= scene.guard_radius
}

/// Lateral spring force of the tissue at the port, as measured by the tool.
/// `tip_force` is left at zero; see [`tip_contact_force`].
pub fn sclera_force(scene: &EyePhantom, tool: &ToolState, port: usize, t: f64) -> ScleraForceReading {
    let (deviation, depth) = port_geometry(scene, tool, port);
    if !engaged(scene, &deviation, depth) {
        return ScleraForceReading { timestamp: t, disengaged: true, ..Default::default() };
    }
    let body = tool.pose.rotation.transpose() * deviation * (scene.sclera_stiffness * 1000.0);
    ScleraForceReading {
        fsx: body.x,
        fsy: body.y,
        norm: body.x.hypot(body.y),
        tip_force: 0.0,
        insertion_depth: depth * 1000.0,
        timestamp: t,
        disengaged: false,
    }
}

/// World-frame force (N) the tool applies to the eye at its port; zero when disengaged.
pub fn port_force_on_eye(scene: &EyePhantom, tool: &ToolState, port: usize) -> Vector3<f64> {
    let (deviation, depth) = port_geometry(scene, tool, port);
    if !engaged(scene, &deviation, depth) {
        return Vector3::zeros();
    }
    deviation * scene.sclera_stiffness
}

/// Signed port-to-tip distance along the shaft, mm.
pub fn insertion_depth(scene: &EyePhantom, tool: &ToolState, port: usize) -> Result<f64, SceneError> {
    let (deviation, depth) = port_geometry(scene, tool, port);
    if !engaged(scene, &deviation, depth) {
        return Err(SceneError::Disengaged);
    }
    Ok(depth * 1000.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pin {
    pub id: u8,
    pub color: String,
    /// Eye frame, relative to the eye center (m).
    pub position: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskLayout {
    /// Vessel intersection where a trial starts and ends (eye frame, m).
    pub start: Vector3<f64>,
    pub pins: Vec<Pin>,
    pub capture_radius: f64,
}

impl Default for TaskLayout {
    /// Intersection 1 mm above the retina at the bottom of a 12 mm eye, with
    /// red/green/blue/yellow pins 0.8 mm away along +x, +y, -x, -y.
    fn default() -> Self {
        let inner: f64 = 0.011;
        let tilt = 0.0008 / inner;
        let pins = ["red", "green", "blue", "yellow"]
            .iter()
            .enumerate()
            .map(|(k, color)| {
                let az = k as f64 * std::f64::consts::FRAC_PI_2;
                Pin {
                    id: k as u8 + 1,
                    color: color.to_string(),
                    position: Vector3::new(tilt.sin() * az.cos(), tilt.sin() * az.sin(), -tilt.cos()) * inner,
                }
            })
            .collect();
        TaskLayout { start: Vector3::new(0.0, 0.0, -inner), pins, capture_radius: 0.0005 }
    }
}

/// Contact force at the tip, mN: retina wall penetration or pin capture-sphere
/// penetration, whichever is deeper.
pub fn tip_contact_force(scene: &EyePhantom, tool: &ToolState, task: &TaskLayout) -> f64 {
    let retina = (tool.tip - scene.center).norm() - scene.radius;
    let pins = task
        .pins
        .iter()
        .map(|pin| task.capture_radius - (tool.tip - scene.to_world(&pin.position)).norm())
        .fold(f64::NEG_INFINITY, f64::max);
    let penetration = retina.max(pins).max(0.0);
    penetration * scene.retina_stiffness * 1000.0
}

/// Pin whose capture sphere holds the tip; nearest wins, ties go to the lowest id.
pub fn check_pin_touch(scene: &EyePhantom, tool: &ToolState, task: &TaskLayout) -> Option<u8> {
    let mut best: Option<(u8, f64)> = None;
    for pin in &task.pins {
        let d = (tool.tip - scene.to_world(&pin.position)).norm();
        if d > task.capture_radius {
            continue;
        }
        best = match best {
            Some((id, bd)) if bd < d || (bd == d && id < pin.id) => Some((id, bd)),
            _ => Some((pin.id, d)),
        };
    }
    best.map(|(id, _)| id)
}

/// Is the tip at the vessel intersection?
pub fn at_start(scene: &EyePhantom, tool: &ToolState, task: &TaskLayout) -> bool {
    (tool.tip - scene.to_world(&task.start)).norm() <= task.capture_radius
}

/// Advance the eye orientation under external torque (N m), first order.
pub fn step_eye_torque(scene: &EyePhantom, torque: &Vector3<f64>, dt: f64) -> EyePhantom {
    let deflection = Rotation3::from_matrix_unchecked(scene.orientation).scaled_axis();
    let omega = (torque - deflection * scene.rot_stiffness) / scene.rot_damping;
    let mut next = scene.clone();
    next.orientation = Rotation3::new(omega * dt).into_inner() * scene.orientation;
    next
}

/// Advance the eye under the forces (N, world) applied at each port.
pub fn step_eye_dynamics(scene: &EyePhantom, port_forces: &[Vector3<f64>; 2], dt: f64) -> EyePhantom {
    let torque = (0..2).fold(Vector3::zeros(), |acc, i| {
        acc + (scene.port_world(i) - scene.center).cross(&port_forces[i])
    });
    step_eye_torque(scene, &torque, dt)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorNoise {
    pub force_sigma_mn: f64,
    pub depth_sigma_mm: f64,
}

impl Default for SensorNoise {
    fn default() -> Self {
        SensorNoise { force_sigma_mn: 2.0, depth_sigma_mm: 0.05 }
    }
}

/// Additive zero-mean Gaussian noise on every channel; disengaged readings
/// and zero-sigma channels are passed through untouched.
pub fn add_sensor_noise<R: Rng + ?Sized>(reading: &ScleraForceReading, noise: &SensorNoise, rng: &mut R) -> ScleraForceReading {
    if reading.disengaged {
        return *reading;
    }
    let mut out = *reading;
    if noise.force_sigma_mn > 0.0 {
        let n = Normal::new(0.0, noise.force_sigma_mn).expect("finite sigma");
        out.fsx += n.sample(rng);
        out.fsy += n.sample(rng);
        out.tip_force += n.sample(rng);
        out.norm = out.fsx.hypot(out.fsy);
    }
    if noise.depth_sigma_mm > 0.0 {
        let n = Normal::new(0.0, noise.depth_sigma_mm).expect("finite sigma");
        out.insertion_depth += n.sample(rng);
    }
    out
}
