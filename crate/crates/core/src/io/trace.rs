//! Input trace CSV.
//!
//! Header (teleoperation):
//! `t,r_vx,r_vy,r_vz,r_wx,r_wy,r_wz,r_pedal,r_clutch,l_vx,l_vy,l_vz,l_wx,l_wy,l_wz,l_pedal,l_clutch`
//!
//! Cooperative traces replace the six motion columns of each robot with
//! `fx,fy,fz,tx,ty,tz` (N and N m). Units otherwise: s, m/s, rad/s; pedal in
//! [0, 1]; clutch 0 or 1. Lines starting with `#` are ignored. Timestamps must
//! be strictly increasing.

use std::path::Path;

use nalgebra::Vector6;

use super::FormatError;
use crate::sim::{Hand, InputSample, Mode, RobotInput};

const MOTION: [&str; 6] = ["vx", "vy", "vz", "wx", "wy", "wz"];
const WRENCH: [&str; 6] = ["fx", "fy", "fz", "tx", "ty", "tz"];

/// Column names for a trace in the given mode.
pub fn trace_header(mode: Mode) -> Vec<String> {
    let channels = match mode {
        Mode::Teleoperation => MOTION,
        Mode::Cooperative => WRENCH,
    };
    let mut cols = vec!["t".to_string()];
    for hand in Hand::BOTH {
        let p = hand.prefix();
        cols.extend(channels.iter().map(|c| format!("{p}_{c}")));
        cols.push(format!("{p}_pedal"));
        cols.push(format!("{p}_clutch"));
    }
    cols
}

pub fn parse_trace(path: &Path, mode: Mode) -> Result<Vec<InputSample>, FormatError> {
    let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    parse_trace_str(&text, mode).map_err(|e| FormatError::in_file(path, e))
}

pub fn parse_trace_str(text: &str, mode: Mode) -> Result<Vec<InputSample>, FormatError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let expected = trace_header(mode);
    let found: Vec<String> = reader
        .headers()
        .map_err(|e| FormatError::Parse { line: 1, message: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    if found != expected {
        return Err(FormatError::Header { expected: expected.join(","), found: found.join(",") });
    }

    let mut samples: Vec<InputSample> = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            FormatError::Parse { line, message: e.to_string() }
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let err = |message: String| FormatError::Parse { line, message };
        let mut values = [0.0; 17];
        for (i, field) in row.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| err(format!("column `{}`: `{field}` is not a number", expected[i])))?;
            if !v.is_finite() {
                return Err(err(format!("column `{}`: non-finite value", expected[i])));
            }
            values[i] = v;
        }
        let t = values[0];
        if let Some(prev) = samples.last() {
            if t <= prev.t {
                return Err(err(format!("timestamp {t} does not increase (previous {})", prev.t)));
            }
        }
        let mut robots = [RobotInput::idle(); 2];
        for hand in Hand::BOTH {
            let base = 1 + 8 * hand.index();
            let pedal = values[base + 6];
            if !(0.0..=1.0).contains(&pedal) {
                return Err(err(format!("column `{}`: pedal must lie in [0, 1]", expected[base + 6])));
            }
            let clutch = values[base + 7];
            if clutch != 0.0 && clutch != 1.0 {
                return Err(err(format!("column `{}`: clutch must be 0 or 1", expected[base + 7])));
            }
            robots[hand.index()] = RobotInput {
                command: Vector6::from_column_slice(&values[base..base + 6]),
                pedal,
                clutch: clutch == 1.0,
            };
        }
        samples.push(InputSample { t, robots });
    }
    Ok(samples)
}

/// Render samples in the trace format. Values use shortest round-trip
/// notation so write-then-parse is lossless.
/// Shortest text that parses back to exactly `v`; exponent form for very
/// small or very large magnitudes.
fn exact(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-4..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

/// Trace text that parses back to exactly `samples`.
pub fn format_trace(samples: &[InputSample], mode: Mode) -> String {
    let mut out = trace_header(mode).join(",");
    out.push('\n');
    for s in samples {
        let mut fields = vec![exact(s.t)];
        for hand in Hand::BOTH {
            let r = &s.robots[hand.index()];
            fields.extend(r.command.iter().map(|&v| exact(v)));
            fields.push(exact(r.pedal));
            fields.push(if r.clutch { "1" } else { "0" }.to_string());
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn write_trace(samples: &[InputSample], mode: Mode, path: &Path) -> Result<(), FormatError> {
    std::fs::write(path, format_trace(samples, mode)).map_err(|e| FormatError::io(path, e))
}
