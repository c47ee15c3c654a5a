//! Scenario JSON: every simulation parameter, with defaults materialized on load.

use std::path::Path;

use nalgebra::{Vector3, Vector5, Vector6};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::FormatError;
use crate::control::{AfcGains, MasterBodyMap, MotionScaling};
use crate::joints::{JointLimits, SolverConfig, VelocityPlant};
use crate::kinematics::{default_axes, JointAxis, RigidTransform, RobotModel};
use crate::scene::{EyePhantom, SensorNoise, TaskLayout};
use crate::sim::{ControlConfig, Hand, Mode, Mount, RobotUnit, World};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub mode: Mode,
    pub posture: String,
    /// Control period, s.
    pub dt: f64,
    pub seed: u64,
    /// Trial time cap, s.
    pub max_duration: f64,
    pub scene: SceneConfig,
    pub task: TaskLayout,
    pub controller: ControllerConfig,
    pub optimizer: SolverConfig,
    pub plant: PlantConfig,
    pub robots: RobotsConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            mode: Mode::Teleoperation,
            posture: "sitting".into(),
            dt: 1e-3,
            seed: 0,
            max_duration: 300.0,
            scene: SceneConfig::default(),
            task: TaskLayout::default(),
            controller: ControllerConfig::default(),
            optimizer: SolverConfig::default(),
            plant: PlantConfig::default(),
            robots: RobotsConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    /// m
    pub radius: f64,
    /// N m / rad
    pub rot_stiffness: f64,
    /// N m s / rad
    pub rot_damping: f64,
    /// N/m
    pub sclera_stiffness: f64,
    /// N/m
    pub retina_stiffness: f64,
    /// m
    pub guard_radius: f64,
    /// Unit directions of the two sclerotomies in the eye frame.
    pub ports: [Vector3<f64>; 2],
    pub noise: SensorNoise,
}

impl Default for SceneConfig {
    fn default() -> Self {
        let (s, c) = 30f64.to_radians().sin_cos();
        SceneConfig {
            radius: 0.012,
            rot_stiffness: 0.05,
            rot_damping: 0.005,
            sclera_stiffness: 100.0,
            retina_stiffness: 500.0,
            guard_radius: 0.005,
            ports: [Vector3::new(s, 0.0, c), Vector3::new(-s, 0.0, c)],
            noise: SensorNoise::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub afc: AfcGains,
    /// Motion scaling diagonal, one entry per body velocity channel.
    pub kappa: [f64; 6],
    /// Cooperative-mode admittance diagonal, (m/s)/N and (rad/s)/(N m).
    pub admittance: [f64; 6],
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            afc: AfcGains::default(),
            kappa: [1.0; 6],
            admittance: [0.005, 0.005, 0.005, 0.05, 0.05, 0.05],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantConfig {
    /// s
    pub time_constant: f64,
    /// Acceleration bound as a multiple of each joint's speed bound, 1/s.
    pub rate_limit_factor: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig { time_constant: 0.02, rate_limit_factor: 10.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomeConfig {
    /// Rotation vector, rad.
    pub rotation: Vector3<f64>,
    /// m
    pub translation: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotConfig {
    pub axes: [JointAxis; 5],
    pub home: HomeConfig,
    pub limits: JointLimits,
    /// Master-to-body rotation vector, rad.
    pub master_map: Vector3<f64>,
    /// Filled with the hand's default on load when absent.
    pub mount: Option<Mount>,
}

impl Default for RobotConfig {
    fn default() -> Self {
        RobotConfig {
            axes: default_axes(),
            home: HomeConfig { rotation: Vector3::zeros(), translation: Vector3::new(0.0, 0.0, 0.2) },
            limits: JointLimits::sher_default(),
            master_map: Vector3::zeros(),
            mount: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotsConfig {
    pub right: RobotConfig,
    pub left: RobotConfig,
}

impl RobotsConfig {
    pub fn get(&self, hand: Hand) -> &RobotConfig {
        match hand {
            Hand::Right => &self.right,
            Hand::Left => &self.left,
        }
    }
}

/// Right tool aims at the vessel intersection, 2 mm short of it;
/// left tool aims at the eye center, 8 mm deep.
pub fn default_mount(hand: Hand, scene: &SceneConfig, task: &TaskLayout) -> Mount {
    match hand {
        Hand::Right => {
            let port = scene.ports[0] * scene.radius;
            Mount { port: 0, aim: task.start, insertion_depth: (task.start - port).norm() - 0.002, shaft_length: 0.03 }
        }
        Hand::Left => Mount { port: 1, aim: Vector3::zeros(), insertion_depth: 0.008, shaft_length: 0.03 },
    }
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> FormatError {
    FormatError::Schema { path: path.into(), message: message.into() }
}

fn all_finite<'a>(xs: impl IntoIterator<Item = &'a f64>) -> bool {
    xs.into_iter().all(|x| x.is_finite())
}

impl Scenario {
    /// Parse, fill defaults and validate.
    pub fn from_json(text: &str) -> Result<Scenario, FormatError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { "$".to_string() } else { format!("$.{path}") };
            invalid(path, e.into_inner().to_string())
        })?;
        scenario.materialize();
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn materialize(&mut self) {
        for hand in Hand::BOTH {
            let mount = default_mount(hand, &self.scene, &self.task);
            let robot = match hand {
                Hand::Right => &mut self.robots.right,
                Hand::Left => &mut self.robots.left,
            };
            robot.mount.get_or_insert(mount);
        }
    }

    pub fn validate(&self) -> Result<(), FormatError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("$.dt", "must be positive"));
        }
        if !(self.max_duration > 0.0) {
            return Err(invalid("$.max_duration", "must be positive"));
        }
        let sc = &self.scene;
        if !(sc.radius > 0.0 && sc.radius.is_finite()) {
            return Err(invalid("$.scene.radius", "must be positive"));
        }
        for (name, v) in [
            ("rot_stiffness", sc.rot_stiffness),
            ("sclera_stiffness", sc.sclera_stiffness),
            ("retina_stiffness", sc.retina_stiffness),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("$.scene.{name}"), "must be non-negative"));
            }
        }
        if !(sc.rot_damping > 0.0 && sc.rot_damping.is_finite()) {
            return Err(invalid("$.scene.rot_damping", "must be positive"));
        }
        if !(sc.guard_radius > 0.0) {
            return Err(invalid("$.scene.guard_radius", "must be positive"));
        }
        for (i, p) in sc.ports.iter().enumerate() {
            if (p.norm() - 1.0).abs() > 1e-9 {
                return Err(invalid(format!("$.scene.ports[{i}]"), "must be a unit vector"));
            }
        }
        if !(sc.noise.force_sigma_mn >= 0.0 && sc.noise.depth_sigma_mm >= 0.0) {
            return Err(invalid("$.scene.noise", "sigmas must be non-negative"));
        }

        if self.task.pins.len() != 4 {
            return Err(invalid("$.task.pins", "exactly four pins are required"));
        }
        let mut ids: Vec<u8> = self.task.pins.iter().map(|p| p.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != 4 {
            return Err(invalid("$.task.pins", "pin ids must be distinct"));
        }
        if !(self.task.capture_radius > 0.0) {
            return Err(invalid("$.task.capture_radius", "must be positive"));
        }

        let afc = &self.controller.afc;
        if !(afc.threshold_mn > 0.0 && afc.threshold_mn < afc.safe_limit_mn) {
            return Err(invalid("$.controller.afc.threshold_mn", "must be positive and below safe_limit_mn"));
        }
        for (name, v) in [("k_f", afc.k_f), ("gamma", afc.gamma)] {
            if !v.iter().all(|&x| x > 0.0 && x.is_finite()) {
                return Err(invalid(format!("$.controller.afc.{name}"), "must be positive"));
            }
        }
        if !all_finite(&afc.alpha0) {
            return Err(invalid("$.controller.afc.alpha0", "must be finite"));
        }
        if !(MotionScaling { kappa: self.controller.kappa }).is_valid() {
            return Err(invalid("$.controller.kappa", "entries must be non-negative"));
        }
        if !self.controller.admittance.iter().all(|&x| x >= 0.0 && x.is_finite()) {
            return Err(invalid("$.controller.admittance", "entries must be non-negative"));
        }
        if !(self.optimizer.damping >= 0.0 && self.optimizer.damping.is_finite()) {
            return Err(invalid("$.optimizer.damping", "must be non-negative"));
        }
        if !self.optimizer.weights.iter().all(|&w| w >= 0.0 && w.is_finite()) {
            return Err(invalid("$.optimizer.weights", "entries must be non-negative"));
        }
        if !(self.plant.time_constant > 0.0) {
            return Err(invalid("$.plant.time_constant", "must be positive"));
        }
        if !(self.plant.rate_limit_factor > 0.0) {
            return Err(invalid("$.plant.rate_limit_factor", "must be positive"));
        }

        for hand in Hand::BOTH {
            let name = match hand {
                Hand::Right => "right",
                Hand::Left => "left",
            };
            let r = self.robots.get(hand);
            for (i, axis) in r.axes.iter().enumerate() {
                if axis.validate(i + 1).is_err() {
                    return Err(invalid(format!("$.robots.{name}.axes[{i}]"), "direction must be a unit vector"));
                }
                if axis.is_prismatic() != (i < 3) {
                    return Err(invalid(format!("$.robots.{name}.axes[{i}]"), "axes 1-3 must be prismatic, 4-5 revolute"));
                }
            }
            if !all_finite(r.home.rotation.iter().chain(r.home.translation.iter())) {
                return Err(invalid(format!("$.robots.{name}.home"), "must be finite"));
            }
            if !r.limits.is_valid() {
                return Err(invalid(format!("$.robots.{name}.limits"), "need pos_min < pos_max and vel_max > 0"));
            }
            if !all_finite(r.master_map.iter()) {
                return Err(invalid(format!("$.robots.{name}.master_map"), "must be finite"));
            }
            if let Some(m) = &r.mount {
                if m.port > 1 {
                    return Err(invalid(format!("$.robots.{name}.mount.port"), "must be 0 or 1"));
                }
                if !(m.shaft_length > 0.0 && m.insertion_depth >= 0.0 && m.insertion_depth < m.shaft_length) {
                    return Err(invalid(
                        format!("$.robots.{name}.mount"),
                        "need 0 <= insertion_depth < shaft_length",
                    ));
                }
                if (m.aim - sc.ports[m.port] * sc.radius).norm() < 1e-9 {
                    return Err(invalid(format!("$.robots.{name}.mount.aim"), "must differ from the port"));
                }
            }
        }
        Ok(())
    }

    /// Short content hash of the fully materialized scenario.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(&bytes))[..16].to_string()
    }

    pub fn eye(&self) -> EyePhantom {
        let sc = &self.scene;
        EyePhantom {
            center: Vector3::zeros(),
            radius: sc.radius,
            orientation: nalgebra::Matrix3::identity(),
            ports: sc.ports,
            rot_stiffness: sc.rot_stiffness,
            rot_damping: sc.rot_damping,
            sclera_stiffness: sc.sclera_stiffness,
            retina_stiffness: sc.retina_stiffness,
            guard_radius: sc.guard_radius,
        }
    }

    pub fn control_config(&self) -> ControlConfig {
        ControlConfig {
            mode: self.mode,
            dt: self.dt,
            gains: self.controller.afc,
            scaling: MotionScaling { kappa: self.controller.kappa },
            admittance: Vector6::from_column_slice(&self.controller.admittance),
            solver: self.optimizer,
            noise: self.scene.noise,
        }
    }

    pub fn robot_model(&self, hand: Hand) -> Result<RobotModel, FormatError> {
        let r = self.robots.get(hand);
        let home = RigidTransform::new(nalgebra::Rotation3::new(r.home.rotation).into_inner(), r.home.translation);
        RobotModel::new(r.axes, home, r.limits).map_err(|e| invalid("$.robots", e.to_string()))
    }

    /// Build the simulation world for this scenario.
    pub fn build_world(&self) -> Result<World, FormatError> {
        let eye = self.eye();
        let gains = self.controller.afc;
        let mut units = Vec::with_capacity(2);
        for hand in Hand::BOTH {
            let r = self.robots.get(hand);
            let model = self.robot_model(hand)?;
            let rate_limit: Vector5<f64> = r.limits.vel_max * self.plant.rate_limit_factor;
            let plant = VelocityPlant::new(self.plant.time_constant, rate_limit);
            let mount = r.mount.unwrap_or_else(|| default_mount(hand, &self.scene, &self.task));
            let unit = RobotUnit::mounted(
                hand,
                model,
                mount,
                &eye,
                MasterBodyMap::from_rotation_vector(r.master_map),
                plant,
                &gains,
            )
            .map_err(|e| invalid("$.robots", e.to_string()))?;
            units.push(unit);
        }
        let left = units.pop().expect("two robots");
        let right = units.pop().expect("two robots");
        let mut world = World::new(self.control_config(), [right, left], eye, self.task.clone(), self.seed);
        world.posture = self.posture.clone();
        world.scenario_hash = self.hash();
        Ok(world)
    }
}

/// Read and validate a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario, FormatError> {
    let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    Scenario::from_json(&text).map_err(|e| FormatError::in_file(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_documented_defaults() {
        let s = Scenario::from_json("{}").unwrap();
        assert_eq!(s.dt, 1e-3);
        assert_eq!(s.mode, Mode::Teleoperation);
        assert_eq!(s.controller.afc.threshold_mn, 100.0);
        assert_eq!(s.controller.afc.safe_limit_mn, 120.0);
        assert_eq!(s.scene.sclera_stiffness, 100.0);
        assert_eq!(s.task.pins.len(), 4);
        assert!(s.robots.right.mount.is_some() && s.robots.left.mount.is_some());
        assert_eq!(s.robots.right.mount.unwrap().port, 0);
        assert_eq!(s.robots.left.mount.unwrap().port, 1);
    }

    #[test]
    fn materialized_form_round_trips() {
        let s = Scenario::from_json(r#"{"mode":"BMAC","seed":9}"#).unwrap();
        let text = serde_json::to_string_pretty(&s).unwrap();
        let back = Scenario::from_json(&text).unwrap();
        assert_eq!(s, back);
        assert_eq!(s.hash(), back.hash());
    }

    #[test]
    fn negative_radius_names_its_path() {
        let err = Scenario::from_json(r#"{"scene":{"radius":-0.01}}"#).unwrap_err();
        match err {
            FormatError::Schema { path, .. } => assert_eq!(path, "$.scene.radius"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn short_kappa_is_rejected() {
        let err = Scenario::from_json(r#"{"controller":{"kappa":[1,1,1,1,1]}}"#).unwrap_err();
        match err {
            FormatError::Schema { path, message } => {
                assert_eq!(path, "$.controller.kappa");
                assert!(message.contains("length 5"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = Scenario::from_json(r#"{"scene":{"radius":0.012,"colour":"red"}}"#).unwrap_err();
        match err {
            FormatError::Schema { path, message } => {
                assert_eq!(path, "$.scene.colour");
                assert!(message.contains("unknown field"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn world_builds_with_tools_seated() {
        let s = Scenario::default();
        let mut s2 = s.clone();
        s2.materialize();
        let world = s2.build_world().unwrap();
        for robot in &world.robots {
            let r = crate::scene::sclera_force(&world.scene, &robot.tool, robot.mount.port, 0.0);
            assert!(!r.disengaged);
            assert!(r.norm < 1e-9, "{r:?}");
            assert!((r.insertion_depth - robot.mount.insertion_depth * 1000.0).abs() < 1e-9);
        }
    }
}
