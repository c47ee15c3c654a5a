//! Python bindings: scenarios, the stepping world, whole trials, metrics and
//! the individual kinematics, control, solver and statistics operations.
//!
//! Vectors and matrices cross the boundary as plain lists (row-major for
//! matrices). Structured results (metrics, world snapshots) are returned as
//! dictionaries with the same shape as the JSON files and wire messages.

use nalgebra::{Matrix5, Vector5, Vector6};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;

use shertwin::control::{self, AfcAxisState, AfcGains, Axis, MotionScaling};
use shertwin::io::{self, FormatError};
use shertwin::joints;
use shertwin::kinematics::{self, BodyVelocity, RobotModel};
use shertwin::metrics;
use shertwin::sim::{self, Completion, RobotInput, SimError, TraceSource, TrialLog};
use shertwin_teleop::protocol::StateSnapshot;

create_exception!(shertwin, SimulationError, PyException, "The simulation produced a non-finite value.");

fn format_err(e: FormatError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn sim_err(e: SimError) -> PyErr {
    SimulationError::new_err(e.to_string())
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn vector5(v: [f64; 5]) -> Vector5<f64> {
    Vector5::from_column_slice(&v)
}

fn rows<const R: usize, const C: usize>(m: &nalgebra::SMatrix<f64, R, C>) -> Vec<Vec<f64>> {
    (0..R).map(|r| (0..C).map(|c| m[(r, c)]).collect()).collect()
}

fn axis_from(name: &str) -> PyResult<Axis> {
    match name {
        "x" => Ok(Axis::X),
        "y" => Ok(Axis::Y),
        _ => Err(PyValueError::new_err(format!("axis must be 'x' or 'y', not {name:?}"))),
    }
}

/// A validated scenario with every default filled in.
#[pyclass(name = "Scenario", module = "shertwin", from_py_object)]
#[derive(Clone)]
struct PyScenario {
    inner: io::Scenario,
}

#[pymethods]
impl PyScenario {
    /// Defaults when `json` is omitted.
    #[new]
    #[pyo3(signature = (json = "{}"))]
    fn new(json: &str) -> PyResult<Self> {
        io::Scenario::from_json(json).map(|inner| PyScenario { inner }).map_err(format_err)
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        io::load_scenario(&path).map(|inner| PyScenario { inner }).map_err(format_err)
    }

    /// Fully materialized JSON.
    fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.inner).expect("scenario serializes")
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.inner.mode.label()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    /// A copy with a different noise seed.
    fn with_seed(&self, seed: u64) -> Self {
        let mut inner = self.inner.clone();
        inner.seed = seed;
        PyScenario { inner }
    }

    fn __repr__(&self) -> String {
        format!("Scenario(mode={}, dt={}, seed={}, hash={})", self.mode(), self.inner.dt, self.inner.seed, self.inner.hash())
    }
}

fn robot_input(command: Option<[f64; 6]>, pedal: f64, clutch: bool) -> RobotInput {
    match command {
        Some(c) => RobotInput { command: Vector6::from_column_slice(&c), pedal, clutch },
        None => RobotInput::idle(),
    }
}

/// Tick-by-tick simulation of both robots and the eye.
#[pyclass(name = "World", module = "shertwin", unsendable)]
struct PyWorld {
    inner: sim::World,
}

#[pymethods]
impl PyWorld {
    #[new]
    fn new(scenario: &PyScenario) -> PyResult<Self> {
        scenario.inner.build_world().map(|inner| PyWorld { inner }).map_err(format_err)
    }

    /// Advance one tick. `right` and `left` are six master values (velocity
    /// or handle wrench, by mode); `None` leaves that robot idle. Returns the
    /// same dictionary as a `state` wire message, minus its `type`.
    #[pyo3(signature = (right = None, left = None, pedal = (1.0, 1.0), clutch = (true, true)))]
    fn step<'py>(
        &mut self,
        py: Python<'py>,
        right: Option<[f64; 6]>,
        left: Option<[f64; 6]>,
        pedal: (f64, f64),
        clutch: (bool, bool),
    ) -> PyResult<Bound<'py, PyAny>> {
        let inputs = [robot_input(right, pedal.0, clutch.0), robot_input(left, pedal.1, clutch.1)];
        let record = self.inner.step(&inputs).map_err(sim_err)?;
        let text = serde_json::to_string(&StateSnapshot::from_record(&record)).expect("snapshot serializes");
        json_to_py(py, &text)
    }

    #[getter]
    fn tick(&self) -> u64 {
        self.inner.tick
    }

    #[getter]
    fn t(&self) -> f64 {
        self.inner.clock()
    }
}

/// A finished trial.
#[pyclass(name = "Trial", module = "shertwin")]
struct PyTrial {
    log: TrialLog,
}

#[pymethods]
impl PyTrial {
    fn __len__(&self) -> usize {
        self.log.records.len()
    }

    /// `completed`, `trace_exhausted` or `timeout`.
    #[getter]
    fn completion(&self) -> &'static str {
        self.log.meta.completion.label()
    }

    #[getter]
    fn completion_time(&self) -> Option<f64> {
        self.log.meta.completion_time
    }

    #[getter]
    fn pin_order(&self) -> Vec<u32> {
        self.log.meta.pin_order.iter().map(|&p| u32::from(p)).collect()
    }

    /// Tick times, s.
    fn times(&self) -> Vec<f64> {
        self.log.records.iter().map(|r| r.t).collect()
    }

    /// Sclera force magnitude per tick for `"right"` or `"left"`, mN.
    fn sclera_force(&self, robot: &str) -> PyResult<Vec<f64>> {
        let i = match robot {
            "right" => 0,
            "left" => 1,
            _ => return Err(PyValueError::new_err(format!("robot must be 'right' or 'left', not {robot:?}"))),
        };
        Ok(self.log.records.iter().map(|r| r.robots[i].reading.norm).collect())
    }

    /// The trial CSV text, byte-identical to what the command line writes.
    fn to_csv(&self) -> String {
        io::format_trial_csv(&self.log)
    }

    #[pyo3(signature = (limit_mn = 120.0))]
    fn metrics<'py>(&self, py: Python<'py>, limit_mn: f64) -> PyResult<Bound<'py, PyAny>> {
        let m = metrics::trial_metrics(&self.log, limit_mn).map_err(|e| PyValueError::new_err(e.to_string()))?;
        json_to_py(py, &serde_json::to_string(&m).expect("metrics serialize"))
    }
}

/// Run a whole trial from trace CSV text (`trace`) or a trace file (`path`).
#[pyfunction]
#[pyo3(signature = (scenario, trace = None, path = None))]
fn run_trial(scenario: &PyScenario, trace: Option<&str>, path: Option<std::path::PathBuf>) -> PyResult<PyTrial> {
    let s = &scenario.inner;
    let samples = match (trace, path) {
        (Some(text), None) => io::parse_trace_str(text, s.mode),
        (None, Some(p)) => io::parse_trace(&p, s.mode),
        _ => return Err(PyValueError::new_err("give exactly one of `trace` or `path`")),
    }
    .map_err(format_err)?;
    let mut world = s.build_world().map_err(format_err)?;
    let log = sim::run_trial(&mut world, &mut TraceSource::new(samples), s.max_duration).map_err(sim_err)?;
    Ok(PyTrial { log })
}

/// Metrics of a trial CSV file, as a dictionary.
#[pyfunction]
#[pyo3(signature = (path, limit_mn = 120.0))]
fn trial_metrics<'py>(py: Python<'py>, path: std::path::PathBuf, limit_mn: f64) -> PyResult<Bound<'py, PyAny>> {
    let log = io::parse_trial_csv(&path).map_err(format_err)?;
    PyTrial { log }.metrics(py, limit_mn)
}

/// Two-sided Welch t-test: `(t, dof, p)`.
#[pyfunction]
fn welch_ttest(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let r = metrics::welch_ttest(&a, &b).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((r.t, r.dof, r.p))
}

/// End-effector pose of the default robot as a 4x4 row-major matrix.
#[pyfunction]
fn forward_kinematics(theta: [f64; 5]) -> Vec<Vec<f64>> {
    rows(&kinematics::forward_kinematics(&RobotModel::sher_default(), &vector5(theta)).to_matrix())
}

/// Body Jacobian of the default robot, 6x5 row-major (linear rows first).
#[pyfunction]
fn body_jacobian(theta: [f64; 5]) -> Vec<Vec<f64>> {
    rows(&kinematics::body_jacobian(&RobotModel::sher_default(), &vector5(theta)))
}

/// Force reference and its rate at time `t` for an axis activated at
/// `t_activation` from `level` mN with direction `sign`.
#[pyfunction]
#[pyo3(signature = (t, t_activation = 0.0, level = 100.0, sign = 1.0))]
fn desired_force_trajectory(t: f64, t_activation: f64, level: f64, sign: f64) -> PyResult<(f64, f64)> {
    let state = AfcAxisState { active: true, t_activation, level, sign, ..AfcAxisState::new(0.0) };
    control::desired_force_trajectory(&state, t).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Switching and adaptation state of one lateral axis.
#[pyclass(name = "AxisState", module = "shertwin", from_py_object)]
#[derive(Clone)]
struct PyAxisState {
    inner: AfcAxisState,
}

#[pymethods]
impl PyAxisState {
    #[new]
    #[pyo3(signature = (alpha = 0.0))]
    fn new(alpha: f64) -> Self {
        PyAxisState { inner: AfcAxisState::new(alpha) }
    }

    #[getter]
    fn active(&self) -> bool {
        self.inner.active
    }

    #[getter]
    fn t_activation(&self) -> f64 {
        self.inner.t_activation
    }

    #[getter]
    fn level(&self) -> f64 {
        self.inner.level
    }

    #[getter]
    fn sign(&self) -> f64 {
        self.inner.sign
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }

    fn __repr__(&self) -> String {
        let s = &self.inner;
        format!("AxisState(active={}, t_activation={}, level={}, sign={}, alpha={})", s.active, s.t_activation, s.level, s.sign, s.alpha)
    }
}

/// One tick of the single-axis switching rule with hysteresis.
#[pyfunction]
#[pyo3(signature = (state, force_mn, t, threshold_mn = 100.0))]
fn switching_policy(state: &PyAxisState, force_mn: f64, t: f64, threshold_mn: f64) -> PyAxisState {
    PyAxisState { inner: control::switching_policy(threshold_mn, &state.inner, force_mn, t) }
}

/// Switching rule for both lateral axes from the force components.
#[pyfunction]
#[pyo3(signature = (states, forces_mn, t, threshold_mn = 100.0))]
fn lateral_switching_policy(states: (PyAxisState, PyAxisState), forces_mn: [f64; 2], t: f64, threshold_mn: f64) -> (PyAxisState, PyAxisState) {
    let [x, y] = control::lateral_switching_policy(threshold_mn, &[states.0.inner, states.1.inner], forces_mn, t);
    (PyAxisState { inner: x }, PyAxisState { inner: y })
}

/// Adaptive velocity (m/s) for an active axis and the updated state.
#[pyfunction]
#[pyo3(signature = (state, force_mn, t, dt, axis = "x", k_f = None, gamma = None))]
fn afc_axis_velocity(
    state: &PyAxisState,
    force_mn: f64,
    t: f64,
    dt: f64,
    axis: &str,
    k_f: Option<f64>,
    gamma: Option<f64>,
) -> PyResult<(f64, PyAxisState)> {
    let mut gains = AfcGains::default();
    if let Some(k) = k_f {
        gains.k_f = [k; 2];
    }
    if let Some(g) = gamma {
        gains.gamma = [g; 2];
    }
    gains.validate().map_err(|e| PyValueError::new_err(e.to_string()))?;
    let (v, next) = control::afc_axis_velocity(&gains, axis_from(axis)?, &state.inner, force_mn, t, dt)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((v, PyAxisState { inner: next }))
}

/// Blend of the scaled master body velocity and the adaptive x/y velocities.
#[pyfunction]
#[pyo3(signature = (delta, master, adaptive, kappa = [1.0; 6]))]
fn hybrid_command(delta: (bool, bool), master: [f64; 6], adaptive: [f64; 2], kappa: [f64; 6]) -> Vec<f64> {
    let cmd = control::hybrid_command(
        [delta.0, delta.1],
        &MotionScaling { kappa },
        &BodyVelocity::from_vector(&Vector6::from_column_slice(&master)),
        adaptive,
    );
    cmd.to_vector().iter().copied().collect()
}

/// Minimize `x'Hx/2 + g'x` subject to `lo <= x <= hi` (five variables).
#[pyfunction]
fn solve_box_qp(h: [[f64; 5]; 5], g: [f64; 5], lo: [f64; 5], hi: [f64; 5]) -> PyResult<Vec<f64>> {
    let hm = Matrix5::from_fn(|r, c| h[r][c]);
    if (hm - hm.transpose()).amax() > 1e-12 * hm.amax().max(1.0) || hm.cholesky().is_none() {
        return Err(PyValueError::new_err("H must be symmetric positive definite"));
    }
    if (0..5).any(|i| !(lo[i] <= 0.0 && 0.0 <= hi[i])) {
        return Err(PyValueError::new_err("bounds must satisfy lo <= 0 <= hi"));
    }
    Ok(joints::solve_box_qp(&hm, &vector5(g), &vector5(lo), &vector5(hi)).iter().copied().collect())
}

/// Joint rates for a desired body velocity on the default robot at `theta`.
#[pyfunction]
#[pyo3(signature = (theta, body_velocity, dt = 1e-3))]
fn solve_joint_velocities(theta: [f64; 5], body_velocity: [f64; 6], dt: f64) -> PyResult<Vec<f64>> {
    let model = RobotModel::sher_default();
    let th = vector5(theta);
    let j = kinematics::body_jacobian(&model, &th);
    let v = BodyVelocity::from_vector(&Vector6::from_column_slice(&body_velocity));
    let q = joints::solve_joint_velocities(&j, &v, model.limits(), &th, dt, &joints::SolverConfig::default())
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(q.iter().copied().collect())
}

#[pymodule(name = "shertwin")]
fn shertwin_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SimulationError", m.py().get_type::<SimulationError>())?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyWorld>()?;
    m.add_class::<PyTrial>()?;
    m.add_class::<PyAxisState>()?;
    for f in [
        wrap_pyfunction!(run_trial, m)?,
        wrap_pyfunction!(trial_metrics, m)?,
        wrap_pyfunction!(welch_ttest, m)?,
        wrap_pyfunction!(forward_kinematics, m)?,
        wrap_pyfunction!(body_jacobian, m)?,
        wrap_pyfunction!(desired_force_trajectory, m)?,
        wrap_pyfunction!(switching_policy, m)?,
        wrap_pyfunction!(lateral_switching_policy, m)?,
        wrap_pyfunction!(afc_axis_velocity, m)?,
        wrap_pyfunction!(hybrid_command, m)?,
        wrap_pyfunction!(solve_box_qp, m)?,
        wrap_pyfunction!(solve_joint_velocities, m)?,
    ] {
        m.add_function(f)?;
    }
    m.add("COMPLETIONS", [Completion::Completed.label(), Completion::TraceExhausted.label(), Completion::Timeout.label()])?;
    Ok(())
}
