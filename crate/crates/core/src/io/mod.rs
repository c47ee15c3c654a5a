//! File formats: scenario JSON, input trace CSV and trial-log CSV.

pub mod scenario;
pub mod trace;
pub mod trial_csv;

use thiserror::Error;

pub use scenario::{load_scenario, Scenario};
pub use trace::{format_trace, parse_trace, parse_trace_str, write_trace};
pub use trial_csv::{format_number, format_trial_csv, parse_trial_csv, parse_trial_csv_str, write_trial_csv};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    /// A scenario value or key is invalid; `path` is a JSON path such as `$.scene.radius`.
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    /// A CSV row is malformed; `line` is 1-based in the file.
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("unexpected header: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    /// A content error in a named file.
    #[error("{path}: {source}")]
    InFile {
        path: String,
        #[source]
        source: Box<FormatError>,
    },
}

impl FormatError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        FormatError::Io { path: path.display().to_string(), source }
    }

    pub(crate) fn in_file(path: &std::path::Path, source: FormatError) -> Self {
        FormatError::InFile { path: path.display().to_string(), source: Box::new(source) }
    }
}
