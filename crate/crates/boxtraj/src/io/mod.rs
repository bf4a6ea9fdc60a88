//! File formats, run configuration, and report serialization.

mod config;
mod field_file;
mod formats;
mod pgm;
mod report;

pub use config::{ConfigOrigin, RunConfig, CONFIG_KEYS};
pub use field_file::{read_field, write_field, FieldData};
pub use formats::{
    read_detections_jsonl, read_trajectory_json, write_detections_jsonl, write_trajectory_json,
    TrajectoryFile,
};
pub use pgm::render_heatmap;
pub use report::{
    fmt_float, gradcheck_to_csv, opt_report_to_csv, opt_report_to_json, sweep_to_csv,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error(
        "`{0}` changes a method-origin default; set `allow_method_overrides = true` to confirm"
    )]
    MethodOverride(String),
    #[error("bad value for `{key}`: {message}")]
    BadValue { key: String, message: String },
    #[error("bad field file: {0}")]
    BadFieldFile(String),
    #[error("{0}")]
    Invalid(String),
}
