//! `nodal`: batch front end for nodal-core.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 verification failure,
//! 3 the fit did not reproduce its target.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "nodal", version, about = "Nodal sets of entire Helmholtz eigenfunctions")]
pub struct Cli {
    /// Worker threads for grid and ensemble work.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Settings as `key=value`, or a file of such lines. Repeatable.
    #[arg(long, global = true)]
    pub config: Vec<String>,
    /// Base seed for random sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a function whose nodal set realizes a rooted tree, and verify it.
    RealizeTree(commands::RealizeTreeArgs),
    /// Histograms of component types and nesting trees of random waves.
    Stats(commands::StatsArgs),
    /// Sample a random plane-wave field to JSON.
    Sample(commands::SampleArgs),
    /// Nodal domains and zero-set components of a saved field.
    Analyze(commands::AnalyzeArgs),
    /// Realize the boundary of a domain as a zero-set component.
    RealizeSurface(commands::RealizeSurfaceArgs),
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    pub fn verification(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn fit(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }
}

impl From<nodal_core::Error> for CliError {
    fn from(e: nodal_core::Error) -> Self {
        use nodal_core::Error as E;
        let code = match &e {
            E::Io(_) | E::Json(_) | E::Parse(_) | E::Domain(_) => 1,
            E::SingularFit => 3,
            _ => 2,
        };
        Self { code, message: e.to_string() }
    }
}

pub fn out_dir(path: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    let dir = path.clone().ok_or_else(|| CliError::usage("--out is required"))?;
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
