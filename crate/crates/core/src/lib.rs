//! Discontinuous Galerkin isogeometric analysis of diffusion problems on
//! multi-patch NURBS surfaces, with a symmetric interior penalty coupling
//! between patches.
//!
//! The pipeline runs `splines` → `geometry` → `space` → `assembly` →
//! `linalg` → `analysis`; `cli` wires it to geometry files and named
//! manufactured problems.

pub mod analysis;
pub mod assembly;
pub mod cli;
pub mod geometry;
pub mod linalg;
pub mod quadrature;
pub mod space;
pub mod splines;

use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::assembly::AssemblyError;
use crate::cli::geometry_file::ReadError;
use crate::cli::problems::ProblemError;
use crate::geometry::GeometryError;
use crate::linalg::{LinalgError, SolveReport};
use crate::space::SpaceError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Read(#[from] ReadError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(
        "level {level}: CG did not converge in {} iterations (relative residual {:.3e})",
        report.iterations,
        report.final_relative_residual
    )]
    SolverFailed { level: usize, report: SolveReport },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub const EXIT_PARSE: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_GEOMETRY: i32 = 4;

fn space_exit_code(e: &SpaceError) -> i32 {
    match e {
        SpaceError::Linalg(_) | SpaceError::ProjectionFailed(_) => EXIT_SOLVER,
        SpaceError::Geometry(_) | SpaceError::DegreeMismatch { .. } | SpaceError::MissingSide => EXIT_GEOMETRY,
        SpaceError::Quadrature(_) | SpaceError::LengthMismatch { .. } => 1,
    }
}

impl Error {
    /// 2 for unreadable input, 3 for solver failures, 4 for geometry and
    /// topology problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Read(_) | Error::Problem(_) | Error::Config(_) => EXIT_PARSE,
            Error::Geometry(_) => EXIT_GEOMETRY,
            Error::Space(e) => space_exit_code(e),
            Error::Assembly(AssemblyError::Space(e)) | Error::Analysis(AnalysisError::Space(e)) => space_exit_code(e),
            Error::Assembly(AssemblyError::InvalidPenalty(_)) => EXIT_PARSE,
            Error::Analysis(_) => EXIT_PARSE,
            Error::Linalg(_) | Error::SolverFailed { .. } => EXIT_SOLVER,
            Error::Io { .. } => 1,
        }
    }
}
