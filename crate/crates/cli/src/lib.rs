//! Command implementations behind the `shertwin` binary. Every command is
//! non-interactive; exit codes are 0 on success (a timeout is a success and
//! is recorded in the trial metadata), 2 for invalid input, unreadable files,
//! empty globs or a busy port, and 3 when the simulation aborts on a
//! non-finite value.

use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector6;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use shertwin::io::{format_trace, format_trial_csv, load_scenario, parse_trace, parse_trial_csv, FormatError, Scenario};
use shertwin::metrics::{summarize_conditions, trial_metrics, ConditionReport, MetricsError, TrialMetrics, SAFE_LIMIT_MN};
use shertwin::script::{compress_trace, constant_trace, engaged, vessel_following_trace, Pursuit, ScriptError};
use shertwin::sim::{run_trial, Hand, RobotInput, SimError, TraceSource, TrialLog};
use shertwin_teleop::{ServeOptions, Server, SessionOptions};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("simulation aborted: {0}")]
    Sim(SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Setup(msg) => CliError::Invalid(msg),
            e => CliError::Sim(e),
        }
    }
}

impl From<ScriptError> for CliError {
    fn from(e: ScriptError) -> Self {
        match e {
            ScriptError::Scenario(e) => CliError::Format(e),
            ScriptError::Sim(e) => e.into(),
            e => CliError::Invalid(e.to_string()),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Sim(_) => 3,
            _ => 2,
        }
    }
}

fn io_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Format(FormatError::Io { path: path.display().to_string(), source })
}

#[derive(Debug, Parser)]
#[command(name = "shertwin", version, about = "Bimanual eye-surgery robot twin with adaptive sclera-force control")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one trial from an input trace.
    Run(RunArgs),
    /// Run every trace of several conditions and compare them.
    Batch(BatchArgs),
    /// Compute per-trial safety metrics from trial CSV files.
    Metrics(MetricsArgs),
    /// Summary statistics and pairwise Welch tests over trial CSV files.
    Stats(StatsArgs),
    /// Check a scenario (and optionally traces) without running anything.
    Validate(ValidateArgs),
    /// Serve a live session over WebSocket until interrupted.
    Serve(ServeArgs),
    /// Generate input traces.
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(Debug, Clone, Args)]
pub struct Overrides {
    /// Noise seed; overrides the scenario's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Tick length in seconds; overrides the scenario's `dt`.
    #[arg(long)]
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
    /// Sclera force limit for the time-over-limit metric, mN.
    #[arg(long, default_value_t = SAFE_LIMIT_MN)]
    pub limit: f64,
}

#[derive(Debug, Clone, Args)]
pub struct BatchArgs {
    /// Scenario used by conditions without their own `--scenario-for`.
    #[arg(long)]
    pub scenario: PathBuf,
    /// `label=glob` selecting the traces of one condition; repeatable.
    #[arg(long = "conditions", value_name = "LABEL=GLOB", required = true, num_args = 1..)]
    pub conditions: Vec<String>,
    /// `label=path` giving a condition its own scenario; repeatable.
    #[arg(long = "scenario-for", value_name = "LABEL=PATH")]
    pub scenario_for: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long, default_value_t = SAFE_LIMIT_MN)]
    pub limit: f64,
}

#[derive(Debug, Clone, Args)]
pub struct MetricsArgs {
    /// Trial CSV files.
    #[arg(required = true)]
    pub trials: Vec<PathBuf>,
    #[arg(long, default_value_t = SAFE_LIMIT_MN)]
    pub limit: f64,
}

#[derive(Debug, Clone, Args)]
pub struct StatsArgs {
    /// `label=glob` selecting the trial CSVs of one condition; repeatable.
    #[arg(long = "conditions", value_name = "LABEL=GLOB", required = true, num_args = 1..)]
    pub conditions: Vec<String>,
    /// Directory for report.csv and report.txt; the text report always goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = SAFE_LIMIT_MN)]
    pub limit: f64,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Trace files to check against the scenario's mode.
    #[arg(long)]
    pub trace: Vec<PathBuf>,
    /// Print the fully materialized scenario JSON.
    #[arg(long)]
    pub print: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8765)]
    pub port: u16,
    /// Wall-clock tick rate.
    #[arg(long, default_value_t = 1000.0)]
    pub tick_hz: f64,
    /// Publish a state snapshot every N ticks.
    #[arg(long, default_value_t = shertwin_teleop::session::DEFAULT_DECIMATION)]
    pub decimation: u64,
    /// Directory for the session logs written on shutdown.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Stop after this many wall-clock seconds instead of waiting for Ctrl-C.
    #[arg(long)]
    pub duration: Option<f64>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Subcommand)]
pub enum SynthCommand {
    /// Scripted dominant-hand pursuit: start point, pins in order, back to start.
    Vessel(VesselArgs),
    /// Constant master inputs on both robots.
    Constant(ConstantArgs),
}

#[derive(Debug, Clone, Args)]
pub struct VesselArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Pin ids in visiting order, e.g. `1,2,3,4`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub order: Vec<u8>,
    /// Ticks between command updates.
    #[arg(long, default_value_t = 10)]
    pub hold: u64,
    /// Tip speed cap, m/s.
    #[arg(long, default_value_t = 0.002)]
    pub speed: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Args)]
pub struct ConstantArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Seconds.
    #[arg(long)]
    pub duration: f64,
    /// Right-robot master input, six comma-separated values.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub right: Option<Vec<f64>>,
    /// Left-robot master input, six comma-separated values.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub left: Option<Vec<f64>>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

/// Load a scenario and apply command-line overrides.
pub fn scenario_with(path: &Path, overrides: &Overrides) -> Result<Scenario, CliError> {
    let mut scenario = load_scenario(path)?;
    if let Some(seed) = overrides.seed {
        scenario.seed = seed;
    }
    if let Some(dt) = overrides.dt {
        scenario.dt = dt;
    }
    scenario.validate()?;
    Ok(scenario)
}

/// Identifier of a trial: the materialized scenario plus the trace bytes.
pub fn trial_id(scenario: &Scenario, trace_bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(scenario).expect("scenario serializes"));
    h.update(b"\n");
    h.update(trace_bytes);
    hex::encode(h.finalize())[..16].to_string()
}

/// Contents of `metrics_<id>.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub trial_id: String,
    pub trace: String,
    /// Absent when the trial produced no records.
    pub metrics: Option<TrialMetrics>,
    /// `empty-window` when the trial produced no records.
    pub flag: Option<String>,
}

#[derive(Clone, Debug)]
pub struct TrialOutput {
    pub id: String,
    pub trial_csv: PathBuf,
    pub metrics_json: PathBuf,
    pub log: TrialLog,
    pub metrics: MetricsFile,
}

/// Run one trial and write `trial_<id>.csv` and `metrics_<id>.json` into `out`.
pub fn run_one(scenario: &Scenario, trace_path: &Path, out: &Path, limit: f64) -> Result<TrialOutput, CliError> {
    let bytes = std::fs::read(trace_path).map_err(|e| io_error(trace_path, e))?;
    let samples = parse_trace(trace_path, scenario.mode)?;
    let id = trial_id(scenario, &bytes);
    let mut world = scenario.build_world()?;
    let log = run_trial(&mut world, &mut TraceSource::new(samples), scenario.max_duration)?;
    let metrics = match trial_metrics(&log, limit) {
        Ok(m) => MetricsFile { trial_id: id.clone(), trace: trace_path.display().to_string(), metrics: Some(m), flag: None },
        Err(MetricsError::EmptyLog) => MetricsFile {
            trial_id: id.clone(),
            trace: trace_path.display().to_string(),
            metrics: None,
            flag: Some("empty-window".into()),
        },
        Err(e) => return Err(e.into()),
    };
    std::fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    let trial_csv = out.join(format!("trial_{id}.csv"));
    let metrics_json = out.join(format!("metrics_{id}.json"));
    write_file(&trial_csv, &format_trial_csv(&log))?;
    write_file(&metrics_json, &(serde_json::to_string_pretty(&metrics).expect("metrics serialize") + "\n"))?;
    Ok(TrialOutput { id, trial_csv, metrics_json, log, metrics })
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn headline(out: &TrialOutput) -> String {
    let meta = &out.log.meta;
    let mut s = format!("trial {}: {}", out.id, meta.completion.label());
    if let Some(t) = meta.completion_time {
        s += &format!(" at {t:.3} s");
    }
    s += &format!(", {} ticks\n", out.log.records.len());
    match &out.metrics.metrics {
        Some(m) => {
            for (name, hand) in [("dominant", Hand::Right), ("non-dominant", Hand::Left)] {
                let h = m.hand(hand);
                s += &format!(
                    "  {name:>12}: mean {:.2} mN, max {:.2} mN, {:.2} % of time over {} mN\n",
                    h.mean_sclera, h.max_sclera, h.pct_time_over_limit, m.limit_mn
                );
            }
        }
        None => s += "  empty metrics window (no ticks simulated)\n",
    }
    s += &format!("  wrote {}\n  wrote {}\n", out.trial_csv.display(), out.metrics_json.display());
    s
}

pub fn cmd_run(args: &RunArgs, stdout: &mut dyn Write) -> Result<TrialOutput, CliError> {
    let scenario = scenario_with(&args.scenario, &args.overrides)?;
    let out = run_one(&scenario, &args.trace, &args.out, args.limit)?;
    let _ = write!(stdout, "{}", headline(&out));
    Ok(out)
}

fn split_pair<'a>(spec: &'a str, what: &str) -> Result<(&'a str, &'a str), CliError> {
    match spec.split_once('=') {
        Some((label, rest)) if !label.is_empty() && !rest.is_empty() => Ok((label, rest)),
        _ => Err(CliError::Invalid(format!("{what} `{spec}` must look like label=value"))),
    }
}

/// Expand `label=glob` specs into sorted path lists; empty matches are errors.
pub fn expand_conditions(specs: &[String]) -> Result<Vec<(String, Vec<PathBuf>)>, CliError> {
    let mut out: Vec<(String, Vec<PathBuf>)> = Vec::new();
    for spec in specs {
        let (label, pattern) = split_pair(spec, "condition")?;
        if out.iter().any(|(l, _)| l == label) {
            return Err(CliError::Invalid(format!("condition `{label}` given twice")));
        }
        let paths = glob::glob(pattern).map_err(|e| CliError::Invalid(format!("condition `{label}`: bad glob `{pattern}`: {e}")))?;
        let mut paths: Vec<PathBuf> = paths.filter_map(Result::ok).filter(|p| p.is_file()).collect();
        paths.sort();
        if paths.is_empty() {
            return Err(CliError::Invalid(format!("condition `{label}`: no files match `{pattern}`")));
        }
        out.push((label.to_string(), paths));
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct BatchOutput {
    pub trials: Vec<(String, TrialOutput)>,
    pub report: ConditionReport,
    pub report_csv: PathBuf,
    pub report_txt: PathBuf,
}

fn group_report(groups: &[(String, Vec<TrialMetrics>)]) -> Result<ConditionReport, CliError> {
    if let Some((label, _)) = groups.iter().find(|(_, g)| g.is_empty()) {
        return Err(CliError::Invalid(format!("condition `{label}` has no trial with a non-empty metrics window")));
    }
    Ok(summarize_conditions(groups)?)
}

fn write_report(report: &ConditionReport, out: &Path) -> Result<(PathBuf, PathBuf), CliError> {
    std::fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    let csv = out.join("report.csv");
    let txt = out.join("report.txt");
    write_file(&csv, &report.to_csv())?;
    write_file(&txt, &report.to_text())?;
    Ok((csv, txt))
}

pub fn cmd_batch(args: &BatchArgs, stdout: &mut dyn Write) -> Result<BatchOutput, CliError> {
    let conditions = expand_conditions(&args.conditions)?;
    let mut scenario_paths: Vec<(String, PathBuf)> = Vec::new();
    for spec in &args.scenario_for {
        let (label, path) = split_pair(spec, "scenario-for")?;
        if !conditions.iter().any(|(l, _)| l == label) {
            return Err(CliError::Invalid(format!("--scenario-for names unknown condition `{label}`")));
        }
        scenario_paths.push((label.to_string(), PathBuf::from(path)));
    }
    let default = scenario_with(&args.scenario, &args.overrides)?;
    let mut jobs = Vec::new();
    for (label, traces) in &conditions {
        let scenario = match scenario_paths.iter().find(|(l, _)| l == label) {
            Some((_, path)) => scenario_with(path, &args.overrides)?,
            None => default.clone(),
        };
        for trace in traces {
            jobs.push((label.clone(), scenario.clone(), trace.clone()));
        }
    }
    let results: Vec<Result<(String, TrialOutput), CliError>> = jobs
        .par_iter()
        .map(|(label, scenario, trace)| Ok((label.clone(), run_one(scenario, trace, &args.out.join(label), args.limit)?)))
        .collect();
    let trials = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let groups: Vec<(String, Vec<TrialMetrics>)> = conditions
        .iter()
        .map(|(label, _)| {
            let ms = trials.iter().filter(|(l, _)| l == label).filter_map(|(_, t)| t.metrics.metrics.clone()).collect();
            (label.clone(), ms)
        })
        .collect();
    let report = group_report(&groups)?;
    let (report_csv, report_txt) = write_report(&report, &args.out)?;
    let mut manifest = String::from("condition,trace,trial_id,completion,completion_time\n");
    for (label, t) in &trials {
        let ct = t.log.meta.completion_time.map(|x| x.to_string()).unwrap_or_default();
        manifest += &format!("{label},{},{},{},{ct}\n", t.metrics.trace, t.id, t.log.meta.completion.label());
    }
    write_file(&args.out.join("trials.csv"), &manifest)?;
    let _ = write!(stdout, "{} trials in {} conditions\n\n{}", trials.len(), conditions.len(), report.to_text());
    Ok(BatchOutput { trials, report, report_csv, report_txt })
}

pub fn cmd_metrics(args: &MetricsArgs, stdout: &mut dyn Write) -> Result<Vec<TrialMetrics>, CliError> {
    let mut all = Vec::new();
    for path in &args.trials {
        let log = parse_trial_csv(path)?;
        let m = trial_metrics(&log, args.limit).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
        all.push(m);
    }
    let text = if all.len() == 1 { serde_json::to_string_pretty(&all[0]) } else { serde_json::to_string_pretty(&all) };
    let _ = writeln!(stdout, "{}", text.expect("metrics serialize"));
    Ok(all)
}

pub fn cmd_stats(args: &StatsArgs, stdout: &mut dyn Write) -> Result<ConditionReport, CliError> {
    let conditions = expand_conditions(&args.conditions)?;
    let mut groups = Vec::new();
    for (label, paths) in conditions {
        let mut ms = Vec::new();
        for path in paths {
            let log = parse_trial_csv(&path)?;
            match trial_metrics(&log, args.limit) {
                Ok(m) => ms.push(m),
                Err(MetricsError::EmptyLog) => {}
                Err(e) => return Err(CliError::Invalid(format!("{}: {e}", path.display()))),
            }
        }
        groups.push((label, ms));
    }
    let report = group_report(&groups)?;
    if let Some(out) = &args.out {
        write_report(&report, out)?;
    }
    let _ = write!(stdout, "{}", report.to_text());
    Ok(report)
}

pub fn cmd_validate(args: &ValidateArgs, stdout: &mut dyn Write) -> Result<Scenario, CliError> {
    let scenario = load_scenario(&args.scenario)?;
    for trace in &args.trace {
        let samples = parse_trace(trace, scenario.mode)?;
        let _ = writeln!(stdout, "{}: {} samples", trace.display(), samples.len());
    }
    if args.print {
        let _ = writeln!(stdout, "{}", serde_json::to_string_pretty(&scenario).expect("scenario serializes"));
    }
    let _ = writeln!(stdout, "{}: ok (hash {})", args.scenario.display(), scenario.hash());
    Ok(scenario)
}

/// Serve until `shutdown` is raised (or `--duration` elapses); then write
/// the session files. Returns their paths.
pub fn cmd_serve(args: &ServeArgs, shutdown: Arc<AtomicBool>, stdout: &mut dyn Write) -> Result<Vec<PathBuf>, CliError> {
    let scenario = scenario_with(&args.scenario, &args.overrides)?;
    if args.decimation == 0 {
        return Err(CliError::Invalid("--decimation must be at least 1".into()));
    }
    let world = scenario.build_world()?;
    let addr = format!("{}:{}", args.host, args.port);
    let listener = TcpListener::bind(&addr).map_err(|e| CliError::Invalid(format!("cannot listen on {addr}: {e}")))?;
    let options = ServeOptions {
        tick_hz: args.tick_hz,
        session: SessionOptions { decimation: args.decimation, ..SessionOptions::default() },
        ..ServeOptions::default()
    };
    let server = Server::start_with_flag(listener, world, options, shutdown.clone())
        .map_err(|e| CliError::Invalid(format!("cannot start server: {e}")))?;
    let _ = writeln!(stdout, "listening on ws://{}", server.local_addr());
    let _ = stdout.flush();
    if let Some(secs) = args.duration {
        let deadline = std::time::Instant::now() + std::time::Duration::from_secs_f64(secs.max(0.0));
        while server.is_running() && std::time::Instant::now() < deadline {
            std::thread::sleep(std::time::Duration::from_millis(10));
        }
        shutdown.store(true, std::sync::atomic::Ordering::SeqCst);
    }
    let outcome = server.wait();
    let paths = outcome.log.write(&args.out)?;
    for p in &paths {
        let _ = writeln!(stdout, "wrote {}", p.display());
    }
    match outcome.error {
        Some(e) => Err(e.into()),
        None => Ok(paths.to_vec()),
    }
}

fn input_from(flag: &str, values: &Option<Vec<f64>>) -> Result<RobotInput, CliError> {
    match values {
        Some(v) if v.len() == 6 && v.iter().all(|x| x.is_finite()) => Ok(engaged(Vector6::from_column_slice(v))),
        Some(_) => Err(CliError::Invalid(format!("{flag} needs six finite comma-separated values"))),
        None => Ok(RobotInput::idle()),
    }
}

pub fn cmd_synth(cmd: &SynthCommand, stdout: &mut dyn Write) -> Result<PathBuf, CliError> {
    let (scenario, samples, out) = match cmd {
        SynthCommand::Vessel(a) => {
            let scenario = scenario_with(&a.scenario, &a.overrides)?;
            let pursuit = Pursuit { hold_ticks: a.hold.max(1), max_speed: a.speed, ..Pursuit::default() };
            let samples = vessel_following_trace(&scenario, &a.order, &pursuit)?;
            (scenario, samples, &a.out)
        }
        SynthCommand::Constant(a) => {
            let scenario = scenario_with(&a.scenario, &a.overrides)?;
            if !(a.duration > 0.0) {
                return Err(CliError::Invalid("--duration must be positive".into()));
            }
            let samples = constant_trace(a.duration, scenario.dt, [input_from("--right", &a.right)?, input_from("--left", &a.left)?]);
            (scenario, samples, &a.out)
        }
    };
    let samples = compress_trace(&samples);
    write_file(out, &format_trace(&samples, scenario.mode))?;
    let _ = writeln!(stdout, "wrote {} ({} samples)", out.display(), samples.len());
    Ok(out.clone())
}

/// Parse arguments and dispatch; returns the process exit code.
pub fn main_with(args: impl IntoIterator<Item = std::ffi::OsString>, shutdown: Arc<AtomicBool>) -> u8 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let mut stdout = std::io::stdout().lock();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a, &mut stdout).map(drop),
        Command::Batch(a) => cmd_batch(a, &mut stdout).map(drop),
        Command::Metrics(a) => cmd_metrics(a, &mut stdout).map(drop),
        Command::Stats(a) => cmd_stats(a, &mut stdout).map(drop),
        Command::Validate(a) => cmd_validate(a, &mut stdout).map(drop),
        Command::Serve(a) => cmd_serve(a, shutdown, &mut stdout).map(drop),
        Command::Synth(c) => cmd_synth(c, &mut stdout).map(drop),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
