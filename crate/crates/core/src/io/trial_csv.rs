//! Trial-log CSV.
//!
//! The file starts with `# key=value` metadata lines in this order:
//! `format`, `mode`, `posture`, `scenario_hash`, `seed`, `dt`, `completion`,
//! `completion_time` (`none` when the task was not completed) and `pin_order`
//! (pin ids separated by `;`). A single header row follows, then one row per
//! tick. Column order is given by [`trial_columns`]: `tick,t`, then the same
//! block for the right (`r_`) and left (`l_`) robot, then `events`.
//!
//! Per-robot block:
//! - `th1..th5` joint positions (m, m, m, rad, rad)
//! - `dth1..dth5` joint rates
//! - `xs_vx..xs_wz` actual end-effector velocity, robot spatial frame
//! - `xd_vx..xd_wz` commanded body velocity after blending
//! - `in1..in6` raw operator input (master velocity or handle wrench)
//! - `tip_x,tip_y,tip_z` tool tip, world frame (m)
//! - `fsx,fsy,fs,ft` sensed sclera components, norm and tip force (mN)
//! - `depth` insertion depth (mm), `disengaged` 0/1
//! - `dx,dy` adaptive-control switch states 0/1, `alpha_x,alpha_y`
//! - `pedal`, `clutch`
//!
//! `events` holds `start`, `pinN` and `complete` tokens separated by `;`.
//! Numbers are printed with 9 significant digits: fixed notation for decimal
//! exponents in [-5, 9), scientific otherwise, trailing zeros removed.

use std::path::Path;

use nalgebra::{Vector3, Vector5, Vector6};

use super::FormatError;
use crate::scene::ScleraForceReading;
use crate::sim::{Completion, Hand, Mode, RobotRecord, TickRecord, TrialLog, TrialMeta};

pub const FORMAT_TAG: &str = "shertwin-trial-1";

const ROBOT_COLUMNS: usize = 5 + 5 + 6 + 6 + 6 + 3 + 6 + 2 + 2 + 2;

/// 9-significant-digit rendering used for every numeric trial field.
pub fn format_number(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let fixed = format!("{:.*}", (8 - exp) as usize, v);
        strip_zeros(&fixed).to_string()
    } else {
        format!("{}e{exp}", strip_zeros(mantissa))
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn trial_columns() -> Vec<String> {
    let mut cols = vec!["tick".to_string(), "t".to_string()];
    let vel = ["vx", "vy", "vz", "wx", "wy", "wz"];
    for hand in Hand::BOTH {
        let p = hand.prefix();
        let mut block: Vec<String> = Vec::with_capacity(ROBOT_COLUMNS);
        block.extend((1..=5).map(|i| format!("th{i}")));
        block.extend((1..=5).map(|i| format!("dth{i}")));
        block.extend(vel.iter().map(|c| format!("xs_{c}")));
        block.extend(vel.iter().map(|c| format!("xd_{c}")));
        block.extend((1..=6).map(|i| format!("in{i}")));
        block.extend(["tip_x", "tip_y", "tip_z", "fsx", "fsy", "fs", "ft", "depth", "disengaged"].map(String::from));
        block.extend(["dx", "dy", "alpha_x", "alpha_y", "pedal", "clutch"].map(String::from));
        cols.extend(block.into_iter().map(|c| format!("{p}_{c}")));
    }
    cols.push("events".into());
    cols
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn robot_fields(r: &RobotRecord, out: &mut Vec<String>) {
    let sensed = [r.reading.fsx, r.reading.fsy, r.reading.norm, r.reading.tip_force, r.reading.insertion_depth];
    let nums = r
        .theta
        .iter()
        .chain(r.theta_dot.iter())
        .chain(r.spatial_velocity.iter())
        .chain(r.desired_velocity.iter())
        .chain(r.input.iter())
        .chain(r.tip.iter())
        .chain(sensed.iter());
    out.extend(nums.map(|&v| format_number(v)));
    out.push(flag(r.reading.disengaged).into());
    out.push(flag(r.delta[0]).into());
    out.push(flag(r.delta[1]).into());
    out.push(format_number(r.alpha[0]));
    out.push(format_number(r.alpha[1]));
    out.push(format_number(r.pedal));
    out.push(flag(r.clutch).into());
}

fn join_ids(ids: &[u8]) -> String {
    ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";")
}

/// Render a trial log; identical logs give identical bytes.
pub fn format_trial_csv(log: &TrialLog) -> String {
    let m = &log.meta;
    let mut out = String::new();
    let completion_time = m.completion_time.map_or("none".to_string(), format_number);
    for (k, v) in [
        ("format", FORMAT_TAG.to_string()),
        ("mode", m.mode.label().to_string()),
        ("posture", m.posture.clone()),
        ("scenario_hash", m.scenario_hash.clone()),
        ("seed", m.seed.to_string()),
        ("dt", format_number(m.dt)),
        ("completion", m.completion.label().to_string()),
        ("completion_time", completion_time),
        ("pin_order", join_ids(&m.pin_order)),
    ] {
        out.push_str(&format!("# {k}={v}\n"));
    }
    out.push_str(&trial_columns().join(","));
    out.push('\n');
    let mut fields = Vec::with_capacity(3 + 2 * ROBOT_COLUMNS);
    for rec in &log.records {
        fields.clear();
        fields.push(rec.tick.to_string());
        fields.push(format_number(rec.t));
        for r in &rec.robots {
            robot_fields(r, &mut fields);
        }
        fields.push(rec.events.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(";"));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn write_trial_csv(log: &TrialLog, path: &Path) -> Result<(), FormatError> {
    std::fs::write(path, format_trial_csv(log)).map_err(|e| FormatError::io(path, e))
}

pub fn parse_trial_csv(path: &Path) -> Result<TrialLog, FormatError> {
    let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    parse_trial_csv_str(&text).map_err(|e| FormatError::in_file(path, e))
}

fn parse_meta(text: &str) -> Result<(TrialMeta, usize), FormatError> {
    let mut meta = TrialMeta {
        mode: Mode::Teleoperation,
        posture: String::new(),
        scenario_hash: String::new(),
        seed: 0,
        dt: 0.0,
        completion: Completion::Timeout,
        completion_time: None,
        pin_order: Vec::new(),
    };
    let mut count = 0;
    for (i, line) in text.lines().enumerate() {
        let Some(rest) = line.strip_prefix('#') else { break };
        count += 1;
        let line_no = i as u64 + 1;
        let err = |message: String| FormatError::Parse { line: line_no, message };
        let (k, v) = rest.trim().split_once('=').ok_or_else(|| err("metadata must be `key=value`".into()))?;
        let num = |v: &str| v.parse::<f64>().map_err(|_| err(format!("`{k}`: bad number `{v}`")));
        match k {
            "format" if v != FORMAT_TAG => return Err(err(format!("unsupported format `{v}`"))),
            "format" => {}
            "mode" => meta.mode = Mode::parse(v).ok_or_else(|| err(format!("unknown mode `{v}`")))?,
            "posture" => meta.posture = v.to_string(),
            "scenario_hash" => meta.scenario_hash = v.to_string(),
            "seed" => meta.seed = v.parse().map_err(|_| err(format!("bad seed `{v}`")))?,
            "dt" => meta.dt = num(v)?,
            "completion" => meta.completion = Completion::parse(v).ok_or_else(|| err(format!("unknown completion `{v}`")))?,
            "completion_time" => meta.completion_time = if v == "none" { None } else { Some(num(v)?) },
            "pin_order" => {
                meta.pin_order = v
                    .split(';')
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse().map_err(|_| err(format!("bad pin id `{s}`"))))
                    .collect::<Result<_, _>>()?
            }
            _ => return Err(err(format!("unknown metadata key `{k}`"))),
        }
    }
    Ok((meta, count))
}

/// Parse a trial CSV back into a log (numeric fields to printed precision).
pub fn parse_trial_csv_str(text: &str) -> Result<TrialLog, FormatError> {
    let (meta, meta_lines) = parse_meta(text)?;
    let body_start: usize = text.lines().take(meta_lines).map(|l| l.len() + 1).sum();
    let mut reader = csv::ReaderBuilder::new().from_reader(text[body_start.min(text.len())..].as_bytes());
    let expected = trial_columns();
    let found: Vec<String> = reader
        .headers()
        .map_err(|e| FormatError::Parse { line: meta_lines as u64 + 1, message: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    if found != expected {
        return Err(FormatError::Header { expected: expected.join(","), found: found.join(",") });
    }
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| FormatError::Parse {
            line: meta_lines as u64 + e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = meta_lines as u64 + row.position().map_or(0, |p| p.line());
        let err = |message: String| FormatError::Parse { line, message };
        let num = |i: usize| -> Result<f64, FormatError> {
            row[i].parse::<f64>().map_err(|_| err(format!("column `{}`: bad number `{}`", expected[i], &row[i])))
        };
        let bit = |i: usize| -> Result<bool, FormatError> {
            match &row[i] {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(err(format!("column `{}`: expected 0 or 1, found `{other}`", expected[i]))),
            }
        };
        let tick: u64 = row[0].parse().map_err(|_| err(format!("bad tick `{}`", &row[0])))?;
        let t = num(1)?;
        let mut robots = [RobotRecord::default(); 2];
        for (k, r) in robots.iter_mut().enumerate() {
            let b = 2 + k * ROBOT_COLUMNS;
            let v = |off: usize| num(b + off);
            r.theta = Vector5::from_iterator((0..5).map(|i| v(i)).collect::<Result<Vec<_>, _>>()?);
            r.theta_dot = Vector5::from_iterator((5..10).map(|i| v(i)).collect::<Result<Vec<_>, _>>()?);
            r.spatial_velocity = Vector6::from_iterator((10..16).map(|i| v(i)).collect::<Result<Vec<_>, _>>()?);
            r.desired_velocity = Vector6::from_iterator((16..22).map(|i| v(i)).collect::<Result<Vec<_>, _>>()?);
            r.input = Vector6::from_iterator((22..28).map(|i| v(i)).collect::<Result<Vec<_>, _>>()?);
            r.tip = Vector3::new(v(28)?, v(29)?, v(30)?);
            r.reading = ScleraForceReading {
                fsx: v(31)?,
                fsy: v(32)?,
                norm: v(33)?,
                tip_force: v(34)?,
                insertion_depth: v(35)?,
                timestamp: t,
                disengaged: bit(b + 36)?,
            };
            r.delta = [bit(b + 37)?, bit(b + 38)?];
            r.alpha = [v(39)?, v(40)?];
            r.pedal = v(41)?;
            r.clutch = bit(b + 42)?;
        }
        let events = row[2 + 2 * ROBOT_COLUMNS]
            .split(';')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e: String| err(e)))
            .collect::<Result<Vec<_>, _>>()?;
        records.push(TickRecord { tick, t, robots, events });
    }
    Ok(TrialLog { meta, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::TaskEvent;

    fn meta() -> TrialMeta {
        TrialMeta {
            mode: Mode::Cooperative,
            posture: "standing".into(),
            scenario_hash: "0123456789abcdef".into(),
            seed: 42,
            dt: 1e-3,
            completion: Completion::Completed,
            completion_time: Some(12.345),
            pin_order: vec![4, 3, 2, 1],
        }
    }

    fn sample_log(n: u64) -> TrialLog {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(n);
        let mut u = |s: f64| rng.random_range(-s..s);
        let records = (0..n)
            .map(|tick| {
                let mut robots = [RobotRecord::default(); 2];
                for r in &mut robots {
                    r.theta = Vector5::from_fn(|_, _| u(0.05));
                    r.theta_dot = Vector5::from_fn(|_, _| u(0.01));
                    r.spatial_velocity = Vector6::from_fn(|_, _| u(1e-3));
                    r.desired_velocity = Vector6::from_fn(|_, _| u(1e-3));
                    r.input = Vector6::from_fn(|_, _| u(1.0));
                    r.tip = Vector3::from_fn(|_, _| u(0.012));
                    r.reading = ScleraForceReading {
                        fsx: u(150.0),
                        fsy: u(150.0),
                        norm: u(150.0).abs(),
                        tip_force: u(10.0).abs(),
                        insertion_depth: u(20.0).abs(),
                        timestamp: tick as f64 * 1e-3,
                        disengaged: u(1.0) > 0.9,
                    };
                    r.delta = [u(1.0) > 0.0, u(1.0) > 0.5];
                    r.alpha = [u(1e-3), u(1e-3)];
                    r.pedal = u(1.0).abs();
                    r.clutch = u(1.0) > 0.0;
                }
                let events = match tick {
                    1 => vec![TaskEvent::Start],
                    2 => vec![TaskEvent::Pin(3), TaskEvent::Complete],
                    _ => vec![],
                };
                TickRecord { tick, t: tick as f64 * 1e-3, robots, events }
            })
            .collect();
        TrialLog { meta: meta(), records }
    }

    #[test]
    fn number_format_uses_nine_significant_digits() {
        assert_eq!(format_number(0.0), "0");
        assert_eq!(format_number(-0.0), "0");
        assert_eq!(format_number(1.0), "1");
        assert_eq!(format_number(0.001), "0.001");
        assert_eq!(format_number(123.456789012), "123.456789");
        assert_eq!(format_number(-1.0 / 3.0), "-0.333333333");
        assert_eq!(format_number(1.5e-7), "1.5e-7");
        assert_eq!(format_number(2.0 / 3.0 * 1e12), "6.66666667e11");
        assert_eq!(format_number(99999.99999), "100000");
        assert_eq!(format_number(1e-5), "0.00001");
    }

    #[test]
    fn empty_log_is_header_only() {
        let log = TrialLog { meta: meta(), records: vec![] };
        let text = format_trial_csv(&log);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 10);
        assert!(lines[..9].iter().all(|l| l.starts_with('#')));
        assert_eq!(lines[9], trial_columns().join(","));
        assert_eq!(parse_trial_csv_str(&text).unwrap(), log);
    }

    #[test]
    fn identical_logs_give_identical_bytes() {
        assert_eq!(format_trial_csv(&sample_log(50)), format_trial_csv(&sample_log(50)));
    }

    #[test]
    fn round_trip_to_printed_precision() {
        let log = sample_log(200);
        let text = format_trial_csv(&log);
        let back = parse_trial_csv_str(&text).unwrap();
        assert_eq!(back.meta, log.meta);
        assert_eq!(back.records.len(), log.records.len());
        let close = |a: f64, b: f64| (a - b).abs() <= 5e-9 * a.abs().max(1e-300);
        for (a, b) in log.records.iter().zip(&back.records) {
            assert_eq!(a.tick, b.tick);
            assert!(close(a.t, b.t));
            assert_eq!(a.events, b.events);
            for (ra, rb) in a.robots.iter().zip(&b.robots) {
                let xa: Vec<f64> = ra.theta.iter().chain(ra.theta_dot.iter()).chain(ra.spatial_velocity.iter())
                    .chain(ra.desired_velocity.iter()).chain(ra.input.iter()).chain(ra.tip.iter())
                    .chain([ra.reading.fsx, ra.reading.fsy, ra.reading.norm, ra.reading.tip_force,
                        ra.reading.insertion_depth, ra.alpha[0], ra.alpha[1], ra.pedal].iter()).copied().collect();
                let xb: Vec<f64> = rb.theta.iter().chain(rb.theta_dot.iter()).chain(rb.spatial_velocity.iter())
                    .chain(rb.desired_velocity.iter()).chain(rb.input.iter()).chain(rb.tip.iter())
                    .chain([rb.reading.fsx, rb.reading.fsy, rb.reading.norm, rb.reading.tip_force,
                        rb.reading.insertion_depth, rb.alpha[0], rb.alpha[1], rb.pedal].iter()).copied().collect();
                for (x, y) in xa.iter().zip(&xb) {
                    assert!(close(*x, *y), "{x} vs {y}");
                }
                assert_eq!(ra.delta, rb.delta);
                assert_eq!(ra.clutch, rb.clutch);
                assert_eq!(ra.reading.disengaged, rb.reading.disengaged);
            }
        }
        // Printing the parsed log reproduces the file exactly.
        assert_eq!(format_trial_csv(&back), text);
    }

    #[test]
    fn corrupted_cell_reports_its_line() {
        let text = format_trial_csv(&sample_log(3));
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut cols: Vec<String> = lines[11].split(',').map(String::from).collect();
        cols[3] = "oops".into();
        lines[11] = cols.join(",");
        match parse_trial_csv_str(&(lines.join("\n") + "\n")).unwrap_err() {
            FormatError::Parse { line, .. } => assert_eq!(line, 12),
            other => panic!("unexpected {other:?}"),
        }
    }
}
