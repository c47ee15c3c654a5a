//! Synthetic operator traces: constant drifts and a closed-loop pursuit that
//! records a vessel-following trial as an ordinary input trace.

use nalgebra::{Vector3, Vector6};

use crate::io::{FormatError, Scenario};
use crate::sim::{Hand, InputSample, Mode, RobotInput, SimError, TaskEvent, World};

/// Constant inputs on both robots, one sample per tick over `duration`.
pub fn constant_trace(duration: f64, dt: f64, inputs: [RobotInput; 2]) -> Vec<InputSample> {
    let n = (duration / dt).round() as u64;
    (0..n).map(|k| InputSample { t: k as f64 * dt, robots: inputs }).collect()
}

/// Drop samples that repeat the previous inputs, keeping the final sample so
/// the trace still ends on the same tick. Replaying the result under
/// zero-order hold gives exactly the same per-tick inputs.
pub fn compress_trace(samples: &[InputSample]) -> Vec<InputSample> {
    let mut out: Vec<InputSample> = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let repeat = out.last().is_some_and(|prev| prev.robots == s.robots);
        if !repeat || i + 1 == samples.len() {
            out.push(*s);
        }
    }
    out
}

/// Master velocity input with pedal fully pressed and clutch engaged.
pub fn engaged(command: Vector6<f64>) -> RobotInput {
    RobotInput { command, pedal: 1.0, clutch: true }
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error(transparent)]
    Scenario(#[from] FormatError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("pursuit requires teleoperation mode")]
    Mode,
    #[error("unknown pin id {0}")]
    UnknownPin(u8),
    #[error("pursuit did not finish within {0} s")]
    Timeout(f64),
}

/// Pursuit tuning for [`vessel_following_trace`].
#[derive(Clone, Copy, Debug)]
pub struct Pursuit {
    /// Proportional gain on tip position error, 1/s.
    pub gain: f64,
    /// Tip speed cap, m/s.
    pub max_speed: f64,
    pub max_duration: f64,
    /// Ticks between command updates; the trace holds each command.
    pub hold_ticks: u64,
}

impl Default for Pursuit {
    fn default() -> Self {
        Pursuit { gain: 4.0, max_speed: 0.002, max_duration: 60.0, hold_ticks: 1 }
    }
}

/// Drive the dominant tool from its mount to the start point, through the
/// pins in `order`, and back to the start, recording the master commands.
/// The left robot idles. Replaying the returned trace on a fresh world built
/// from the same scenario reproduces the run exactly.
pub fn vessel_following_trace(scenario: &Scenario, order: &[u8], pursuit: &Pursuit) -> Result<Vec<InputSample>, ScriptError> {
    if scenario.mode != Mode::Teleoperation {
        return Err(ScriptError::Mode);
    }
    for id in order {
        if !scenario.task.pins.iter().any(|p| p.id == *id) {
            return Err(ScriptError::UnknownPin(*id));
        }
    }
    let mut world = scenario.build_world()?;
    let mut samples = Vec::new();
    let mut next_pin = 0;
    let mut inputs = [RobotInput::idle(); 2];
    loop {
        let t = world.clock();
        if t >= pursuit.max_duration {
            return Err(ScriptError::Timeout(pursuit.max_duration));
        }
        let target_eye = if !world.progress.started || next_pin >= order.len() {
            world.task.start
        } else {
            world.task.pins.iter().find(|p| p.id == order[next_pin]).expect("checked above").position
        };
        if world.tick % pursuit.hold_ticks.max(1) == 0 {
            let command = pursuit_command(&world, &world.scene.to_world(&target_eye), pursuit);
            inputs = [engaged(command), RobotInput::idle()];
            samples.push(InputSample { t, robots: inputs });
        }
        let record = world.step(&inputs)?;
        for e in &record.events {
            match e {
                TaskEvent::Pin(id) if next_pin < order.len() && *id == order[next_pin] => next_pin += 1,
                TaskEvent::Complete => {
                    // Close the trace on the completing tick.
                    if samples.last().is_some_and(|s| s.t < t) {
                        samples.push(InputSample { t, robots: inputs });
                    }
                    return Ok(samples);
                }
                _ => {}
            }
        }
    }
}

fn pursuit_command(world: &World, target: &Vector3<f64>, pursuit: &Pursuit) -> Vector6<f64> {
    let robot = &world.robots[Hand::Right.index()];
    let error = target - robot.tool.tip;
    let mut v = error * pursuit.gain;
    if v.norm() > pursuit.max_speed {
        v *= pursuit.max_speed / v.norm();
    }
    let body = robot.tool.pose.rotation.transpose() * v;
    let master = robot.master_map.rotation.transpose() * body;
    Vector6::new(master.x, master.y, master.z, 0.0, 0.0, 0.0)
}
