//! Fixed-step bimanual world loop.
//!
//! Per robot, each tick runs: sense, noise, switching, adaptive law,
//! master mapping (or admittance), pedal scaling, hybrid blend, Jacobian,
//! constrained joint rates, velocity servo, integration, forward kinematics.
//! The eye is then advanced under both port forces and task progress is
//! checked on the dominant tool tip.
//!
//! Nothing in one robot's control path reads the other robot's state.

use std::fmt;

use nalgebra::{Vector3, Vector5, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{
    admittance_command, afc_axis_velocity, hybrid_command, map_master_to_body, lateral_switching_policy, pedal_scale, AfcAxisState,
    AfcGains, Axis, MasterBodyMap, MotionScaling,
};
use crate::joints::{solve_joint_velocities, track_joint_velocity, SolverConfig, VelocityPlant};
use crate::kinematics::{adjoint, body_jacobian, forward_kinematics, BodyVelocity, JointState, RigidTransform, RobotModel};
use crate::scene::{
    add_sensor_noise, at_start, check_pin_touch, port_force_on_eye, sclera_force, step_eye_dynamics, tip_contact_force,
    EyePhantom, ScleraForceReading, SensorNoise, TaskLayout, ToolState,
};

/// Right robot holds the primary tool (dominant hand).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hand {
    Right,
    Left,
}

impl Hand {
    pub const BOTH: [Hand; 2] = [Hand::Right, Hand::Left];

    pub fn index(self) -> usize {
        match self {
            Hand::Right => 0,
            Hand::Left => 1,
        }
    }

    pub fn prefix(self) -> &'static str {
        match self {
            Hand::Right => "r",
            Hand::Left => "l",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Teleoperation: inputs are master end-effector velocities.
    #[serde(rename = "BMAT")]
    Teleoperation,
    /// Cooperative: inputs are handle wrenches.
    #[serde(rename = "BMAC")]
    Cooperative,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Teleoperation => "BMAT",
            Mode::Cooperative => "BMAC",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "BMAT" => Some(Mode::Teleoperation),
            "BMAC" => Some(Mode::Cooperative),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("non-finite value at stage `{stage}` ({hand:?} robot, tick {tick})")]
    NonFinite { stage: &'static str, hand: Hand, tick: u64 },
    #[error("robot setup: {0}")]
    Setup(String),
}

/// Operator input for one robot over one tick.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RobotInput {
    /// Master velocity (BMAT) or handle wrench (BMAC).
    pub command: Vector6<f64>,
    pub pedal: f64,
    /// Engaged clutch lets master motion through.
    pub clutch: bool,
}

impl RobotInput {
    pub fn idle() -> Self {
        RobotInput::default()
    }

    pub fn is_finite(&self) -> bool {
        self.command.iter().all(|x| x.is_finite()) && self.pedal.is_finite()
    }
}

/// Time-stamped inputs for both robots, indexed by [`Hand::index`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InputSample {
    pub t: f64,
    pub robots: [RobotInput; 2],
}

/// How a tool is seated in the eye at the home configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mount {
    pub port: usize,
    /// Eye-frame point the shaft aims at when the robot is at home (m).
    pub aim: Vector3<f64>,
    /// Port-to-tip distance at home (m).
    pub insertion_depth: f64,
    /// Handle-to-tip distance (m).
    pub shaft_length: f64,
}

#[derive(Clone, Debug)]
pub struct RobotUnit {
    pub hand: Hand,
    pub model: RobotModel,
    /// World-from-robot-base transform. Used only by the world model.
    pub base: RigidTransform,
    pub mount: Mount,
    pub master_map: MasterBodyMap,
    pub joints: JointState,
    pub plant: VelocityPlant,
    pub afc: [AfcAxisState; 2],
    pub tool: ToolState,
}

impl RobotUnit {
    /// Place the robot base so that at home the shaft passes through its port
    /// toward `mount.aim` with the requested insertion depth.
    pub fn mounted(
        hand: Hand,
        model: RobotModel,
        mount: Mount,
        scene: &EyePhantom,
        master_map: MasterBodyMap,
        plant: VelocityPlant,
        gains: &AfcGains,
    ) -> Result<Self, SimError> {
        if mount.port > 1 {
            return Err(SimError::Setup(format!("port index {} out of range", mount.port)));
        }
        let port = scene.port_world(mount.port);
        let aim = scene.to_world(&mount.aim);
        let dir = (aim - port)
            .try_normalize(1e-12)
            .ok_or_else(|| SimError::Setup("aim point coincides with the port".into()))?;
        let tool_rot = nalgebra::Rotation3::rotation_between(&Vector3::z(), &dir)
            .unwrap_or_else(|| nalgebra::Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI))
            .into_inner();
        let home = model.home();
        let base_rot = tool_rot * home.rotation.transpose();
        let handle = port + dir * (mount.insertion_depth - mount.shaft_length);
        let base = RigidTransform::new(base_rot, handle - base_rot * home.translation);
        let tool = ToolState::from_pose(base.compose(home), mount.shaft_length);
        Ok(RobotUnit {
            hand,
            model,
            base,
            mount,
            master_map,
            joints: JointState::default(),
            plant,
            afc: [AfcAxisState::new(gains.alpha0[0]), AfcAxisState::new(gains.alpha0[1])],
            tool,
        })
    }

    fn update_tool(&mut self) {
        let pose = self.base.compose(&forward_kinematics(&self.model, &self.joints.theta));
        self.tool = ToolState::from_pose(pose, self.mount.shaft_length);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlConfig {
    pub mode: Mode,
    pub dt: f64,
    pub gains: AfcGains,
    pub scaling: MotionScaling,
    /// Diagonal admittance for cooperative mode.
    pub admittance: Vector6<f64>,
    pub solver: SolverConfig,
    pub noise: SensorNoise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskEvent {
    /// Tip first reached the vessel intersection.
    Start,
    /// Tip entered a pin's capture sphere.
    Pin(u8),
    /// All pins touched and tip back at the intersection.
    Complete,
}

impl fmt::Display for TaskEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskEvent::Start => write!(f, "start"),
            TaskEvent::Pin(id) => write!(f, "pin{id}"),
            TaskEvent::Complete => write!(f, "complete"),
        }
    }
}

impl std::str::FromStr for TaskEvent {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "start" => Ok(TaskEvent::Start),
            "complete" => Ok(TaskEvent::Complete),
            _ => s
                .strip_prefix("pin")
                .and_then(|id| id.parse().ok())
                .map(TaskEvent::Pin)
                .ok_or_else(|| format!("unknown task event `{s}`")),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TaskProgress {
    pub started: bool,
    pub touched: Vec<u8>,
    pub last_pin: Option<u8>,
    pub completed: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RobotRecord {
    pub theta: Vector5<f64>,
    pub theta_dot: Vector5<f64>,
    /// Actual end-effector velocity in the robot's spatial frame.
    pub spatial_velocity: Vector6<f64>,
    /// Commanded body velocity after the hybrid blend.
    pub desired_velocity: Vector6<f64>,
    pub input: Vector6<f64>,
    pub tip: Vector3<f64>,
    /// Sensed (post-noise) reading that drove the switching rule.
    pub reading: ScleraForceReading,
    pub delta: [bool; 2],
    pub alpha: [f64; 2],
    pub pedal: f64,
    pub clutch: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TickRecord {
    pub tick: u64,
    pub t: f64,
    pub robots: [RobotRecord; 2],
    pub events: Vec<TaskEvent>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Completion {
    Completed,
    TraceExhausted,
    Timeout,
}

impl Completion {
    pub fn label(self) -> &'static str {
        match self {
            Completion::Completed => "completed",
            Completion::TraceExhausted => "trace_exhausted",
            Completion::Timeout => "timeout",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Completion::Completed, Completion::TraceExhausted, Completion::Timeout]
            .into_iter()
            .find(|c| c.label() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialMeta {
    pub mode: Mode,
    pub posture: String,
    pub scenario_hash: String,
    pub seed: u64,
    pub dt: f64,
    pub completion: Completion,
    pub completion_time: Option<f64>,
    pub pin_order: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialLog {
    pub meta: TrialMeta,
    pub records: Vec<TickRecord>,
}

pub struct World {
    pub config: ControlConfig,
    pub robots: [RobotUnit; 2],
    pub scene: EyePhantom,
    pub task: TaskLayout,
    pub progress: TaskProgress,
    pub tick: u64,
    pub posture: String,
    pub scenario_hash: String,
    pub seed: u64,
    rng: ChaCha8Rng,
}

impl World {
    pub fn new(
        config: ControlConfig,
        robots: [RobotUnit; 2],
        scene: EyePhantom,
        task: TaskLayout,
        seed: u64,
    ) -> Self {
        World {
            config,
            robots,
            scene,
            task,
            progress: TaskProgress::default(),
            tick: 0,
            posture: "sitting".into(),
            scenario_hash: String::new(),
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn clock(&self) -> f64 {
        self.tick as f64 * self.config.dt
    }

    pub fn dt(&self) -> f64 {
        self.config.dt
    }

    /// Advance one tick.
    pub fn step(&mut self, inputs: &[RobotInput; 2]) -> Result<TickRecord, SimError> {
        let t = self.clock();
        let dt = self.config.dt;
        let tick = self.tick;
        let mut records = [RobotRecord::default(); 2];
        for hand in Hand::BOTH {
            let i = hand.index();
            records[i] = self.step_robot(hand, &inputs[i], t, dt)?;
        }

        let forces = [
            port_force_on_eye(&self.scene, &self.robots[0].tool, self.robots[0].mount.port),
            port_force_on_eye(&self.scene, &self.robots[1].tool, self.robots[1].mount.port),
        ];
        self.scene = step_eye_dynamics(&self.scene, &forces, dt);
        if self.scene.orientation.iter().any(|x| !x.is_finite()) {
            return Err(SimError::NonFinite { stage: "eye_dynamics", hand: Hand::Right, tick });
        }

        let events = self.update_task();
        self.tick += 1;
        Ok(TickRecord { tick, t, robots: records, events })
    }

    fn step_robot(&mut self, hand: Hand, input: &RobotInput, t: f64, dt: f64) -> Result<RobotRecord, SimError> {
        let tick = self.tick;
        let nan = |stage| SimError::NonFinite { stage, hand, tick };
        if !input.is_finite() {
            return Err(nan("input"));
        }
        let cfg = &self.config;
        let gains = &cfg.gains;
        let scene = &self.scene;
        let task = &self.task;
        let robot = &mut self.robots[hand.index()];

        let mut reading = sclera_force(scene, &robot.tool, robot.mount.port, t);
        if hand == Hand::Right {
            reading.tip_force = tip_contact_force(scene, &robot.tool, task);
        }
        let reading = add_sensor_noise(&reading, &cfg.noise, &mut self.rng);
        if ![reading.fsx, reading.fsy, reading.tip_force, reading.insertion_depth].iter().all(|x| x.is_finite()) {
            return Err(nan("sense"));
        }

        let forces = [reading.fsx, reading.fsy];
        let switched = lateral_switching_policy(gains.threshold_mn, &robot.afc, forces, t);
        let mut adaptive = [0.0; 2];
        for axis in Axis::BOTH {
            let k = axis.index();
            robot.afc[k] = if switched[k].active {
                let (v, next) = afc_axis_velocity(gains, axis, &switched[k], forces[k], t, dt).map_err(|_| nan("afc"))?;
                adaptive[k] = v;
                next
            } else {
                switched[k]
            };
        }
        if !adaptive.iter().chain(robot.afc.iter().map(|s| &s.alpha)).all(|x| x.is_finite()) {
            return Err(nan("afc"));
        }

        let kinematic = match cfg.mode {
            Mode::Teleoperation => {
                let master = if input.clutch { BodyVelocity::from_vector(&input.command) } else { BodyVelocity::zero() };
                map_master_to_body(&robot.master_map, &master)
            }
            Mode::Cooperative => admittance_command(&input.command, &cfg.admittance),
        };
        let kinematic = pedal_scale(&kinematic, input.pedal);
        let delta = [robot.afc[0].active, robot.afc[1].active];
        let desired = hybrid_command(delta, &cfg.scaling, &kinematic, adaptive);
        if !desired.is_finite() {
            return Err(nan("hybrid_command"));
        }

        let theta = robot.joints.theta;
        let jac = body_jacobian(&robot.model, &theta);
        let rates = solve_joint_velocities(&jac, &desired, robot.model.limits(), &theta, dt, &cfg.solver)
            .map_err(|_| nan("solve_joint_velocities"))?;
        robot.plant = track_joint_velocity(&robot.plant, &rates, dt);
        if robot.plant.velocity.iter().any(|x| !x.is_finite()) {
            return Err(nan("track_joint_velocity"));
        }

        // Integrate with hard end stops.
        let limits = *robot.model.limits();
        let mut next_theta = theta + robot.plant.velocity * dt;
        for j in 0..5 {
            if next_theta[j] < limits.pos_min[j] || next_theta[j] > limits.pos_max[j] {
                next_theta[j] = next_theta[j].clamp(limits.pos_min[j], limits.pos_max[j]);
                robot.plant.velocity[j] = 0.0;
            }
        }
        robot.joints = JointState { theta: next_theta, theta_dot: robot.plant.velocity };
        robot.update_tool();
        if !robot.tool.pose.is_valid(1e-6) {
            return Err(nan("forward_kinematics"));
        }

        let body_vel = body_jacobian(&robot.model, &robot.joints.theta) * robot.joints.theta_dot;
        let g = forward_kinematics(&robot.model, &robot.joints.theta);
        Ok(RobotRecord {
            theta: robot.joints.theta,
            theta_dot: robot.joints.theta_dot,
            spatial_velocity: adjoint(&g) * body_vel,
            desired_velocity: desired.to_vector(),
            input: input.command,
            tip: robot.tool.tip,
            reading,
            delta,
            alpha: [robot.afc[0].alpha, robot.afc[1].alpha],
            pedal: input.pedal,
            clutch: input.clutch,
        })
    }

    fn update_task(&mut self) -> Vec<TaskEvent> {
        let mut events = Vec::new();
        if self.progress.completed {
            return events;
        }
        let tool = &self.robots[Hand::Right.index()].tool;
        let home = at_start(&self.scene, tool, &self.task);
        if !self.progress.started {
            if home {
                self.progress.started = true;
                events.push(TaskEvent::Start);
            }
            return events;
        }
        let pin = check_pin_touch(&self.scene, tool, &self.task);
        if let Some(id) = pin {
            if self.progress.last_pin != Some(id) {
                events.push(TaskEvent::Pin(id));
                if !self.progress.touched.contains(&id) {
                    self.progress.touched.push(id);
                }
            }
        }
        self.progress.last_pin = pin;
        let all = self.task.pins.iter().all(|p| self.progress.touched.contains(&p.id));
        if all && home && pin.is_none() {
            self.progress.completed = true;
            events.push(TaskEvent::Complete);
        }
        events
    }

    /// Trial metadata for the run so far.
    pub fn meta(&self, completion: Completion, completion_time: Option<f64>) -> TrialMeta {
        TrialMeta {
            mode: self.config.mode,
            posture: self.posture.clone(),
            scenario_hash: self.scenario_hash.clone(),
            seed: self.seed,
            dt: self.config.dt,
            completion,
            completion_time,
            pin_order: self.progress.touched.clone(),
        }
    }
}

/// Supplier of operator inputs, sampled at tick times.
pub trait InputSource {
    /// Inputs in effect at `t`, or `None` once the source is exhausted.
    fn sample_at(&mut self, t: f64) -> Option<[RobotInput; 2]>;
}

/// Zero-order hold over a recorded trace. Before the first sample, robots idle.
pub struct TraceSource {
    samples: Vec<InputSample>,
    cursor: usize,
}

impl TraceSource {
    pub fn new(samples: Vec<InputSample>) -> Self {
        TraceSource { samples, cursor: 0 }
    }
}

impl InputSource for TraceSource {
    fn sample_at(&mut self, t: f64) -> Option<[RobotInput; 2]> {
        let last = self.samples.last()?;
        if t > last.t + 1e-9 {
            return None;
        }
        while self.cursor + 1 < self.samples.len() && self.samples[self.cursor + 1].t <= t + 1e-12 {
            self.cursor += 1;
        }
        let s = &self.samples[self.cursor];
        Some(if s.t <= t + 1e-12 { s.robots } else { [RobotInput::idle(); 2] })
    }
}

/// Run until completion, source exhaustion or `max_duration`.
pub fn run_trial(world: &mut World, source: &mut dyn InputSource, max_duration: f64) -> Result<TrialLog, SimError> {
    let mut records = Vec::new();
    let mut completion_time = None;
    let completion = loop {
        let t = world.clock();
        if t >= max_duration - 1e-12 {
            break Completion::Timeout;
        }
        let Some(inputs) = source.sample_at(t) else {
            break Completion::TraceExhausted;
        };
        let record = world.step(&inputs)?;
        let done = record.events.contains(&TaskEvent::Complete);
        if done {
            completion_time = Some(record.t);
        }
        records.push(record);
        if done {
            break Completion::Completed;
        }
    };
    Ok(TrialLog { meta: world.meta(completion, completion_time), records })
}
