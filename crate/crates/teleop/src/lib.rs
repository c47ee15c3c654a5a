//! Live teleoperation bridge: a WebSocket endpoint that feeds operator
//! master samples into the simulation loop and streams state snapshots back.
//!
//! * [`protocol`] — the JSON wire messages and their validation.
//! * [`session`] — tick-boundary input handling, failsafe and logging.
//! * [`server`] — threads and bounded queues around a [`session::Session`].

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{decode_client, ClientMessage, ErrorCode, InputMessage, RobotName, ServerMessage, StateSnapshot, PROTOCOL_VERSION};
pub use server::{ServeOptions, ServeOutcome, Server};
pub use session::{Inbound, Session, SessionLog, SessionOptions};
