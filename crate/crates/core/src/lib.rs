//! Deterministic digital twin of two 5-DoF eye-surgery robots working
//! through a compliant eye phantom, with adaptive sclera-force control.
//!
//! Units: SI inside the simulation; sclera and tip forces are reported in mN
//! and insertion depth in mm.

pub mod control;
pub mod io;
pub mod joints;
pub mod kinematics;
pub mod metrics;
pub mod scene;
pub mod script;
pub mod sim;

pub use control::{AfcAxisState, AfcGains, Axis, MasterBodyMap, MotionScaling};
pub use io::{FormatError, Scenario};
pub use joints::{JointLimits, SolverConfig, VelocityPlant};
pub use kinematics::{BodyVelocity, JointAxis, RigidTransform, RobotModel};
pub use metrics::{trial_metrics, welch_ttest, TrialMetrics, WelchResult};
pub use scene::{EyePhantom, ScleraForceReading, TaskLayout};
pub use sim::{run_trial, Hand, InputSample, Mode, RobotInput, TraceSource, TrialLog, World};
