//! Config-driven experiment runner for the `kkdetect` library.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt::Display;
use std::path::Path;

use kkdetect::KkError;
use sha2::{Digest, Sha256};

pub mod config;
pub mod experiments;

pub use config::{parse_config, ConfigFile, Experiment};
pub use experiments::{run_experiment, OutputFile, RunOutput};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("runtime precondition failed: {0}")]
    Runtime(#[from] KkError),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn config(field: impl Into<String>, message: impl Display) -> Self {
        Self::Config {
            field: field.into(),
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } => 2,
            Self::Runtime(_) => 3,
            Self::Io(_) => 1,
        }
    }
}

pub fn config_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Io(format!("{}: not a file path", path.display())))?
        .to_string_lossy()
        .into_owned();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    std::fs::write(&tmp, bytes).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

/// Writes every output file atomically into `dir`, creating it if needed.
pub fn write_outputs(dir: &Path, files: &[OutputFile]) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    for f in files {
        write_atomic(&dir.join(&f.name), &f.bytes)?;
    }
    Ok(())
}
