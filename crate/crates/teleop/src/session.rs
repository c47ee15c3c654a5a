//! Tick-synchronous session state: applies queued operator messages at tick
//! boundaries, enforces the input failsafe, and accumulates the trial log.
//! Everything here runs on the sim thread and depends only on the sim clock,
//! so it is tested without sockets.

use nalgebra::Vector6;
use shertwin::io::{format_trace, format_trial_csv, FormatError};
use shertwin::sim::{Completion, InputSample, RobotInput, SimError, TaskEvent, TickRecord, TrialLog, World};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

use crate::protocol::InputMessage;

/// Default silence after which a robot's pedal is forced to zero, s.
pub const FAILSAFE_SECONDS: f64 = 0.2;
/// Default snapshot decimation: one state message every 10th tick.
pub const DEFAULT_DECIMATION: u64 = 10;

/// Traffic from the connection side to the sim loop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Inbound {
    Input(InputMessage),
    Disconnected,
}

/// One accepted input message, stamped with the tick that applied it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReceivedInput {
    pub tick: u64,
    pub message: InputMessage,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SessionOptions {
    pub decimation: u64,
    pub failsafe_seconds: f64,
}

impl Default for SessionOptions {
    fn default() -> Self {
        SessionOptions { decimation: DEFAULT_DECIMATION, failsafe_seconds: FAILSAFE_SECONDS }
    }
}

pub struct Session {
    world: World,
    options: SessionOptions,
    held: [RobotInput; 2],
    /// Tick at which each robot last received input.
    last_input: [Option<u64>; 2],
    records: Vec<TickRecord>,
    received: Vec<ReceivedInput>,
    /// Effective inputs, one entry per tick.
    applied: Vec<InputSample>,
    completion_time: Option<f64>,
}

impl Session {
    pub fn new(world: World, options: SessionOptions) -> Self {
        Session {
            world,
            options,
            held: [RobotInput::idle(); 2],
            last_input: [None; 2],
            records: Vec::new(),
            received: Vec::new(),
            applied: Vec::new(),
            completion_time: None,
        }
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn options(&self) -> &SessionOptions {
        &self.options
    }

    pub fn records(&self) -> &[TickRecord] {
        &self.records
    }

    /// Inputs currently held for the next tick, before the failsafe.
    pub fn held(&self) -> &[RobotInput; 2] {
        &self.held
    }

    /// Apply all messages that arrived since the previous tick, in arrival
    /// order (so the last message per robot wins), then advance one tick.
    pub fn tick(&mut self, inbound: impl IntoIterator<Item = Inbound>) -> Result<&TickRecord, SimError> {
        let tick = self.world.tick;
        for msg in inbound {
            match msg {
                Inbound::Input(m) => {
                    let i = m.robot.hand().index();
                    self.held[i] = RobotInput { command: Vector6::from(m.v), pedal: m.pedal, clutch: m.clutch };
                    self.last_input[i] = Some(tick);
                    self.received.push(ReceivedInput { tick, message: m });
                }
                Inbound::Disconnected => {
                    for (held, last) in self.held.iter_mut().zip(&mut self.last_input) {
                        held.pedal = 0.0;
                        *last = None;
                    }
                }
            }
        }
        let inputs = self.effective_inputs(tick);
        self.applied.push(InputSample { t: self.world.clock(), robots: inputs });
        let record = self.world.step(&inputs)?;
        if self.completion_time.is_none() && record.events.contains(&TaskEvent::Complete) {
            self.completion_time = Some(record.t);
        }
        self.records.push(record);
        Ok(self.records.last().expect("just pushed"))
    }

    /// Held inputs with the silence failsafe applied for the given tick.
    fn effective_inputs(&self, tick: u64) -> [RobotInput; 2] {
        let limit = (self.options.failsafe_seconds / self.world.dt()).round() as u64;
        let mut inputs = self.held;
        for (input, last) in inputs.iter_mut().zip(&self.last_input) {
            if last.is_none_or(|t0| tick - t0 > limit) {
                input.pedal = 0.0;
            }
        }
        inputs
    }

    /// Whether the record for this tick is published to the client.
    pub fn publishes(&self, record: &TickRecord) -> bool {
        record.tick % self.options.decimation.max(1) == 0
    }

    pub fn finish(self) -> SessionLog {
        let completion = if self.completion_time.is_some() { Completion::Completed } else { Completion::TraceExhausted };
        let meta = self.world.meta(completion, self.completion_time);
        SessionLog { trial: TrialLog { meta, records: self.records }, received: self.received, applied: self.applied }
    }
}

/// Everything a session leaves behind.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionLog {
    pub trial: TrialLog,
    /// Accepted messages with client timestamps, as received.
    pub received: Vec<ReceivedInput>,
    /// Per-tick effective inputs; replaying them as a trace reproduces the
    /// trial log.
    pub applied: Vec<InputSample>,
}

pub const RECEIVED_HEADER: &str = "tick,robot,t_client,v1,v2,v3,v4,v5,v6,pedal,clutch";

impl SessionLog {
    /// Stable identifier: scenario hash plus the applied inputs.
    pub fn id(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.trial.meta.scenario_hash.as_bytes());
        h.update(self.trace_csv().as_bytes());
        hex::encode(h.finalize())[..16].to_string()
    }

    pub fn trace_csv(&self) -> String {
        format_trace(&self.applied, self.trial.meta.mode)
    }

    pub fn received_csv(&self) -> String {
        let mut out = String::from(RECEIVED_HEADER);
        out.push('\n');
        for r in &self.received {
            let m = &r.message;
            let v: Vec<String> = m.v.iter().map(|x| x.to_string()).collect();
            let robot = if m.robot.hand().index() == 0 { "right" } else { "left" };
            out.push_str(&format!("{},{robot},{},{},{},{}\n", r.tick, m.t_client, v.join(","), m.pedal, u8::from(m.clutch)));
        }
        out
    }

    /// Write `trial_<id>.csv`, `session_trace_<id>.csv` (replayable with the
    /// `run` command) and `session_inputs_<id>.csv` (raw client messages).
    pub fn write(&self, dir: &Path) -> Result<[PathBuf; 3], FormatError> {
        std::fs::create_dir_all(dir).map_err(|e| FormatError::Io { path: dir.display().to_string(), source: e })?;
        let id = self.id();
        let files = [
            (dir.join(format!("trial_{id}.csv")), format_trial_csv(&self.trial)),
            (dir.join(format!("session_trace_{id}.csv")), self.trace_csv()),
            (dir.join(format!("session_inputs_{id}.csv")), self.received_csv()),
        ];
        for (path, text) in &files {
            std::fs::write(path, text).map_err(|e| FormatError::Io { path: path.display().to_string(), source: e })?;
        }
        Ok(files.map(|(p, _)| p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::RobotName;
    use shertwin::io::{parse_trace_str, Scenario};
    use shertwin::sim::{run_trial, TraceSource};

    fn session() -> Session {
        let mut s = Scenario::default();
        s.materialize();
        Session::new(s.build_world().unwrap(), SessionOptions::default())
    }

    fn msg(robot: RobotName, vx: f64, pedal: f64) -> Inbound {
        Inbound::Input(InputMessage { robot, t_client: 123.0, v: [vx, 0.0, 0.0, 0.0, 0.0, 0.0], pedal, clutch: true })
    }

    #[test]
    fn input_applies_at_the_next_tick() {
        let mut s = session();
        s.tick([]).unwrap();
        let rec = s.tick([msg(RobotName::Right, 0.001, 1.0)]).unwrap();
        assert_eq!(rec.tick, 1);
        assert_eq!(rec.robots[0].input[0], 0.001);
        assert_eq!(rec.robots[0].pedal, 1.0);
        assert_eq!(rec.robots[1].pedal, 0.0);
        assert_eq!(s.records()[0].robots[0].input[0], 0.0);
    }

    #[test]
    fn last_writer_wins_within_a_tick() {
        let mut s = session();
        let burst: Vec<_> = (1..=10).map(|k| msg(RobotName::Left, k as f64 * 1e-4, 1.0)).collect();
        let rec = s.tick(burst).unwrap();
        assert_eq!(rec.robots[1].input[0], 1e-3);
        assert_eq!(rec.robots[0].input[0], 0.0);
    }

    #[test]
    fn silence_engages_failsafe_after_200_ms() {
        let mut s = session();
        s.tick([msg(RobotName::Right, 0.0, 1.0)]).unwrap();
        for _ in 1..=200 {
            assert_eq!(s.tick([]).unwrap().robots[0].pedal, 1.0);
        }
        assert_eq!(s.tick([]).unwrap().robots[0].pedal, 0.0);
        // Fresh input releases it.
        assert_eq!(s.tick([msg(RobotName::Right, 0.0, 0.7)]).unwrap().robots[0].pedal, 0.7);
    }

    #[test]
    fn disconnect_forces_both_pedals_to_zero_at_the_next_tick() {
        let mut s = session();
        s.tick([msg(RobotName::Right, 0.001, 1.0), msg(RobotName::Left, -0.001, 1.0)]).unwrap();
        let rec = s.tick([Inbound::Disconnected]).unwrap();
        for r in &rec.robots {
            assert_eq!(r.pedal, 0.0);
            assert_eq!(r.desired_velocity, Vector6::zeros());
        }
        // The velocity plant lag decays; after that the robots stay put.
        for _ in 0..400 {
            s.tick([]).unwrap();
        }
        let n = s.records().len();
        let (a, b) = (&s.records()[n - 100], &s.records()[n - 1]);
        for i in 0..2 {
            assert!((a.robots[i].theta - b.robots[i].theta).amax() < 1e-12, "robot {i} kept moving");
        }
        assert_eq!(s.tick([]).unwrap().robots[0].pedal, 0.0);
    }

    #[test]
    fn decimation_selects_every_tenth_tick() {
        let mut s = session();
        let mut published = 0;
        for _ in 0..1000 {
            let tick = s.tick([]).unwrap().clone();
            published += usize::from(s.publishes(&tick));
        }
        assert_eq!(published, 100);
    }

    #[test]
    fn applied_inputs_replay_to_the_same_log() {
        let mut s = session();
        for k in 0..600u64 {
            let inbound = match k {
                5 => vec![msg(RobotName::Right, 0.004, 1.0), msg(RobotName::Left, 0.0, 1.0)],
                300 => vec![msg(RobotName::Left, -0.003, 0.5)],
                450 => vec![Inbound::Disconnected],
                _ => vec![],
            };
            s.tick(inbound).unwrap();
        }
        let log = s.finish();
        assert_eq!(log.received.len(), 3);
        assert!(log.received_csv().lines().nth(1).unwrap().starts_with("5,right,123,0.004,"));
        let mut scenario = Scenario::default();
        scenario.materialize();
        let trace = parse_trace_str(&log.trace_csv(), scenario.mode).unwrap();
        let mut world = scenario.build_world().unwrap();
        let replay = run_trial(&mut world, &mut TraceSource::new(trace), scenario.max_duration).unwrap();
        assert_eq!(replay, log.trial);
        let dir = tempfile::tempdir().unwrap();
        let paths = log.write(dir.path()).unwrap();
        assert!(paths.iter().all(|p| p.exists()));
    }
}
