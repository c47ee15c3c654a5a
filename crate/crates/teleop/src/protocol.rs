//! Wire messages exchanged with the operator console, one JSON object per
//! WebSocket text frame. `schemas/wire.schema.json` documents the same shapes.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use shertwin::sim::{Hand, Mode, TickRecord};

/// Version announced in the `hello` handshake. A client `hello` carrying a
/// different version is answered with a `version-mismatch` error.
pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RobotName {
    Right,
    Left,
}

impl RobotName {
    pub fn hand(self) -> Hand {
        match self {
            RobotName::Right => Hand::Right,
            RobotName::Left => Hand::Left,
        }
    }
}

/// Master sample for one robot. `v` is the master velocity (teleoperation)
/// or the handle wrench (cooperative mode), in the same units and order as
/// the trace CSV columns.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputMessage {
    pub robot: RobotName,
    pub t_client: f64,
    pub v: [f64; 6],
    pub pedal: f64,
    /// `true` while the master is coupled to the robot.
    pub clutch: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ClientMessage {
    Hello {
        version: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        client: Option<String>,
    },
    Input {
        robot: RobotName,
        t_client: f64,
        v: [f64; 6],
        pedal: f64,
        clutch: bool,
    },
    Bye {},
}

impl ClientMessage {
    pub fn input(msg: InputMessage) -> Self {
        ClientMessage::Input { robot: msg.robot, t_client: msg.t_client, v: msg.v, pedal: msg.pedal, clutch: msg.clutch }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorCode {
    /// Not JSON, wrong field types, missing or extra fields.
    Malformed,
    /// A numeric field is NaN, infinite or null.
    NanField,
    /// `type` is not one of the client message types.
    UnknownType,
    /// `pedal` outside [0, 1].
    OutOfRange,
    /// Client `hello` announced a different protocol version.
    VersionMismatch,
    /// Another operator already holds the session.
    SessionBusy,
}

impl ErrorCode {
    pub fn label(self) -> &'static str {
        match self {
            ErrorCode::Malformed => "malformed",
            ErrorCode::NanField => "nan-field",
            ErrorCode::UnknownType => "unknown-type",
            ErrorCode::OutOfRange => "out-of-range",
            ErrorCode::VersionMismatch => "version-mismatch",
            ErrorCode::SessionBusy => "session-busy",
        }
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
#[error("{}: {detail}", code.label())]
pub struct WireError {
    pub code: ErrorCode,
    pub detail: String,
}

impl WireError {
    fn new(code: ErrorCode, detail: impl Into<String>) -> Self {
        WireError { code, detail: detail.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSnapshot {
    pub theta: [f64; 5],
    /// World frame, m.
    pub tip: [f64; 3],
    /// mN.
    pub fsx: f64,
    pub fsy: f64,
    pub fs: f64,
    pub ft: f64,
    /// mm.
    pub depth: f64,
    pub delta: [bool; 2],
    pub pedal: f64,
}

/// Robots are listed right (dominant) first, then left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSnapshot {
    pub tick: u64,
    pub t: f64,
    pub robots: [RobotSnapshot; 2],
    pub events: Vec<String>,
}

impl StateSnapshot {
    pub fn from_record(record: &TickRecord) -> Self {
        let robot = |i: usize| {
            let r = &record.robots[i];
            RobotSnapshot {
                theta: r.theta.into(),
                tip: r.tip.into(),
                fsx: r.reading.fsx,
                fsy: r.reading.fsy,
                fs: r.reading.norm,
                ft: r.reading.tip_force,
                depth: r.reading.insertion_depth,
                delta: r.delta,
                pedal: r.pedal,
            }
        };
        StateSnapshot {
            tick: record.tick,
            t: record.t,
            robots: [robot(0), robot(1)],
            events: record.events.iter().map(|e| e.to_string()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ServerMessage {
    Hello { version: u32, mode: Mode, dt: f64, decimation: u64, tick: u64 },
    State(StateSnapshot),
    Error { error: ErrorCode, detail: String },
    Bye { reason: String },
}

impl ServerMessage {
    pub fn error(err: &WireError) -> Self {
        ServerMessage::Error { error: err.code, detail: err.detail.clone() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }
}

const CLIENT_TYPES: [&str; 3] = ["hello", "input", "bye"];

/// Decode one client frame, classifying failures into wire error codes.
pub fn decode_client(text: &str) -> Result<ClientMessage, WireError> {
    let value: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        // JSON has no NaN or infinity; encoders that emit them anyway write
        // bare tokens, and huge literals overflow to infinity.
        Err(e) if ["NaN", "Infinity"].iter().any(|tok| text.contains(tok)) || e.to_string().contains("out of range") => {
            return Err(WireError::new(ErrorCode::NanField, e.to_string()))
        }
        Err(e) => return Err(WireError::new(ErrorCode::Malformed, e.to_string())),
    };
    let Some(kind) = value.get("type").and_then(Value::as_str) else {
        return Err(WireError::new(ErrorCode::Malformed, "missing string field `type`"));
    };
    if !CLIENT_TYPES.contains(&kind) {
        return Err(WireError::new(ErrorCode::UnknownType, format!("unknown message type `{kind}`")));
    }
    if kind == "input" {
        // Browsers serialize NaN as null.
        let nulls = |field: &str| match value.get(field) {
            Some(Value::Null) => true,
            Some(Value::Array(items)) => items.iter().any(Value::is_null),
            _ => false,
        };
        if let Some(field) = ["v", "pedal", "t_client"].into_iter().find(|f| nulls(f)) {
            return Err(WireError::new(ErrorCode::NanField, format!("`{field}` is not a finite number")));
        }
    }
    let msg: ClientMessage = serde_json::from_value(value).map_err(|e| WireError::new(ErrorCode::Malformed, e.to_string()))?;
    match &msg {
        ClientMessage::Input { pedal, .. } if !(0.0..=1.0).contains(pedal) => {
            Err(WireError::new(ErrorCode::OutOfRange, format!("pedal {pedal} outside [0, 1]")))
        }
        ClientMessage::Hello { version, .. } if *version != PROTOCOL_VERSION => Err(WireError::new(
            ErrorCode::VersionMismatch,
            format!("client speaks version {version}, server speaks {PROTOCOL_VERSION}"),
        )),
        _ => Ok(msg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input_json(v: &str) -> String {
        format!(r#"{{"type":"input","robot":"right","t_client":1.5,"v":{v},"pedal":0.5,"clutch":true}}"#)
    }

    #[test]
    fn input_decodes() {
        let msg = decode_client(&input_json("[1,2,3,4,5,6]")).unwrap();
        assert_eq!(
            msg,
            ClientMessage::Input { robot: RobotName::Right, t_client: 1.5, v: [1.0, 2.0, 3.0, 4.0, 5.0, 6.0], pedal: 0.5, clutch: true }
        );
    }

    #[test]
    fn nan_in_vector_is_reported_as_nan_field() {
        for v in ["[1,2,null,4,5,6]", "[1,2,NaN,4,5,6]", "[1,2,1e999,4,5,6]", "[1,2,-Infinity,4,5,6]"] {
            let err = decode_client(&input_json(v)).unwrap_err();
            assert_eq!(err.code, ErrorCode::NanField, "{v}");
        }
    }

    #[test]
    fn unknown_type_is_rejected() {
        let err = decode_client(r#"{"type":"teleport","x":1}"#).unwrap_err();
        assert_eq!(err.code, ErrorCode::UnknownType);
        assert_eq!(decode_client(r#"{"x":1}"#).unwrap_err().code, ErrorCode::Malformed);
        assert_eq!(decode_client("not json").unwrap_err().code, ErrorCode::Malformed);
    }

    #[test]
    fn shape_errors_are_malformed() {
        for text in [
            input_json("[1,2,3]"),
            input_json(r#"[1,2,3,4,5,"6"]"#),
            r#"{"type":"input","robot":"middle","t_client":0,"v":[0,0,0,0,0,0],"pedal":0,"clutch":true}"#.into(),
            r#"{"type":"input","robot":"left","t_client":0,"v":[0,0,0,0,0,0],"pedal":0,"clutch":1}"#.into(),
            r#"{"type":"bye","extra":1}"#.into(),
        ] {
            assert_eq!(decode_client(&text).unwrap_err().code, ErrorCode::Malformed, "{text}");
        }
    }

    #[test]
    fn pedal_and_version_are_checked() {
        let text = r#"{"type":"input","robot":"left","t_client":0,"v":[0,0,0,0,0,0],"pedal":1.5,"clutch":true}"#;
        assert_eq!(decode_client(text).unwrap_err().code, ErrorCode::OutOfRange);
        assert_eq!(decode_client(r#"{"type":"hello","version":2}"#).unwrap_err().code, ErrorCode::VersionMismatch);
        assert!(decode_client(r#"{"type":"hello","version":1,"client":"console"}"#).is_ok());
    }

    #[test]
    fn server_messages_use_documented_tags() {
        let err = ServerMessage::error(&WireError::new(ErrorCode::SessionBusy, "x")).to_json();
        assert_eq!(err, r#"{"type":"error","error":"session-busy","detail":"x"}"#);
        let bye = ServerMessage::Bye { reason: "shutdown".into() }.to_json();
        assert_eq!(bye, r#"{"type":"bye","reason":"shutdown"}"#);
        let hello = ServerMessage::Hello { version: 1, mode: Mode::Teleoperation, dt: 1e-3, decimation: 10, tick: 0 }.to_json();
        assert_eq!(hello, r#"{"type":"hello","version":1,"mode":"BMAT","dt":0.001,"decimation":10,"tick":0}"#);
    }

    #[test]
    fn state_round_trips() {
        let record = TickRecord { tick: 7, t: 0.007, ..Default::default() };
        let msg = ServerMessage::State(StateSnapshot::from_record(&record));
        let json = msg.to_json();
        assert!(json.starts_with(r#"{"type":"state","tick":7,"t":0.007,"robots":[{"theta":[0.0,0.0,0.0,0.0,0.0]"#), "{json}");
        let back: ServerMessage = serde_json::from_str(&json).unwrap();
        assert_eq!(back, msg);
    }
}
