//! Command-line driver: `solve` runs a refinement sweep, `check` validates a
//! geometry file and reports its edge sets.

pub mod bundled;
pub mod geometry_file;
pub mod problems;
pub mod sweep;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::cli::geometry_file::read_geometry;
use crate::cli::sweep::{run_sweep, RunConfig};
use crate::Error;

#[derive(Debug, Parser)]
#[command(name = "dgiga", version, about = "Discontinuous Galerkin isogeometric solver for diffusion on multi-patch NURBS surfaces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve on successively refined meshes and write convergence tables.
    Solve {
        geometry: PathBuf,
        /// Built-in case name or `u=...;f=...;gd=...;gn=...`.
        #[arg(long)]
        problem: String,
        /// Spline degree; must match the degree of the geometry file.
        #[arg(short = 'p', long = "degree", value_parser = clap::value_parser!(u64).range(1..))]
        degree: u64,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        levels: u64,
        /// Penalty parameter; defaults to 2(p+2)(p+1).
        #[arg(long)]
        delta: Option<f64>,
        /// Relative residual tolerance of the CG solver.
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a geometry file and print interior, Dirichlet and Neumann edge counts.
    Check { geometry: PathBuf },
}

/// Run a parsed command, writing the user-facing report to `out`.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), Error> {
    match cli.command {
        Command::Solve {
            geometry,
            problem,
            degree,
            levels,
            delta,
            tol,
            out: out_dir,
        } => {
            let config = RunConfig {
                geometry,
                problem,
                degree: degree as usize,
                levels: levels as usize,
                delta,
                tol,
                out_dir,
            };
            let outcome = run_sweep(&config)?;
            let _ = write!(out, "{}", outcome.table.to_csv());
            for (k, s) in outcome.solves.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "# level {k}: {} CG iterations, relative residual {:.3e}",
                    s.iterations, s.final_relative_residual
                );
            }
            Ok(())
        }
        Command::Check { geometry } => {
            let surface = read_geometry(&geometry)?.to_surface()?;
            let c = surface.edge_counts();
            let _ = writeln!(out, "patches {}", surface.patches().len());
            let _ = writeln!(out, "interior {}", c.interior);
            let _ = writeln!(out, "dirichlet {}", c.dirichlet);
            let _ = writeln!(out, "neumann {}", c.neumann);
            Ok(())
        }
    }
}

/// Parse `args`, run, and return the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return 2;
            }
            let _ = write!(out, "{e}");
            return 0;
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
