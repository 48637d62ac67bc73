//! Command implementations behind the `kinmarket` binary.
//!
//! Every command writes its artifacts and a `manifest.json` into the output
//! directory before reporting anything on stdout.

pub mod equilibrium;
pub mod manifest;
pub mod scenario;
pub mod simulate;
pub mod validate;

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use kinmarket::equilibria::EquilibriumError;
use kinmarket::fluid::FluidError;
use kinmarket::free_kinetics::FreeError;
use kinmarket::particles::ParticleError;
use kinmarket::validation::ValidationError;

use scenario::LoadError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("{failed} validation check(s) failed")]
    ValidationFailed { failed: usize },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 1,
            Self::Runtime(_) => 2,
            Self::ValidationFailed { .. } => 3,
        }
    }
}

impl From<LoadError> for CliError {
    fn from(e: LoadError) -> Self {
        Self::Config(e.to_string())
    }
}

impl From<FluidError> for CliError {
    fn from(e: FluidError) -> Self {
        match e {
            FluidError::Invalid(v) => Self::Config(v.to_string()),
            e => Self::Runtime(e.to_string()),
        }
    }
}

impl From<EquilibriumError> for CliError {
    fn from(e: EquilibriumError) -> Self {
        match e {
            EquilibriumError::Invalid(_) | EquilibriumError::BadInput { .. } => {
                Self::Config(e.to_string())
            }
            e => Self::Runtime(e.to_string()),
        }
    }
}

impl From<ParticleError> for CliError {
    fn from(e: ParticleError) -> Self {
        match e {
            ParticleError::Invalid(_) => Self::Config(e.to_string()),
            e => Self::Runtime(e.to_string()),
        }
    }
}

impl From<FreeError> for CliError {
    fn from(e: FreeError) -> Self {
        match e {
            FreeError::Grid { .. } | FreeError::CflViolation { .. } => Self::Config(e.to_string()),
            e => Self::Runtime(e.to_string()),
        }
    }
}

impl From<ValidationError> for CliError {
    fn from(e: ValidationError) -> Self {
        match e {
            ValidationError::Fluid(e) => e.into(),
            ValidationError::Equilibrium(e) => e.into(),
            ValidationError::Particle(e) => e.into(),
            ValidationError::Config(m) => Self::Config(m),
            e => Self::Runtime(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Creates the output directory.
pub fn prepare_out_dir(dir: &Path) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    Ok(dir.to_path_buf())
}

/// Opens a CSV writer on `dir/name` and remembers the artifact name.
pub fn csv_writer(
    dir: &Path,
    name: &str,
    artifacts: &mut Vec<String>,
) -> Result<csv::Writer<fs::File>, CliError> {
    let path = dir.join(name);
    let w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
    artifacts.push(name.to_string());
    Ok(w)
}

pub fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> Result<(), CliError> {
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value).map_err(|e| io_err(&path, e))?;
    fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
}

fn csv_err(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("writing CSV: {e}"))
}
