//! Refinement sweeps: solve on successively refined meshes and tabulate rates.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::analysis::{error_report, mean_offset, rate_table, ErrorReport, LevelResult, RateTable};
use crate::assembly::{assemble, default_penalty, ProblemData};
use crate::cli::geometry_file::read_geometry;
use crate::cli::problems::resolve_problem;
use crate::geometry::MultiPatchSurface;
use crate::linalg::{cg_solve, cg_solve_projected, CgOptions, SolveReport};
use crate::space::{build_space, DgSpace, DiscreteFunction};
use crate::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub geometry: PathBuf,
    /// Built-in name or `u=...;f=...` expression list.
    pub problem: String,
    pub degree: usize,
    pub levels: usize,
    pub delta: Option<f64>,
    pub tol: f64,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct LevelOutput {
    pub space: DgSpace,
    pub coefficients: Vec<f64>,
    pub solve: SolveReport,
    pub errors: ErrorReport,
}

impl LevelOutput {
    pub fn solution(&self) -> DiscreteFunction<'_> {
        DiscreteFunction::new(&self.space, self.coefficients.clone()).expect("coefficients sized for the space")
    }
}

/// Solve the assembled system. Without Dirichlet edges the operator has the
/// constants as kernel, so the zero-sum projected CG is used and the result
/// is shifted by the constant that best matches the exact solution, if any.
pub fn solve_on(space: &DgSpace, data: &ProblemData, cg: &CgOptions) -> Result<(Vec<f64>, SolveReport), Error> {
    let system = assemble(space, data)?;
    let pure_neumann = space.surface().edge_counts().dirichlet == 0;
    let (mut x, report) = if pure_neumann {
        cg_solve_projected(&system.matrix, &system.rhs, None, cg)?
    } else {
        cg_solve(&system.matrix, &system.rhs, cg)?
    };
    if pure_neumann && report.converged {
        if let Some(exact) = &data.exact {
            let c = mean_offset(&DiscreteFunction::new(space, x.clone())?, &exact.value)?;
            x.iter_mut().for_each(|v| *v += c);
        }
    }
    Ok((x, report))
}

/// Level `k` solves on the base surface refined `k` times. `data.delta` is
/// replaced by `delta` or, when unset, by the default penalty for `degree`.
pub fn run_levels(
    surface: &MultiPatchSurface,
    data: &ProblemData,
    degree: usize,
    levels: usize,
    delta: Option<f64>,
    cg: &CgOptions,
) -> Result<Vec<LevelOutput>, Error> {
    if levels == 0 || degree == 0 {
        return Err(Error::Config("levels and p must be at least 1".into()));
    }
    let data = data.clone().with_delta(delta.unwrap_or_else(|| default_penalty(degree)))?;
    let mut current = surface.clone();
    let mut out = Vec::with_capacity(levels);
    for level in 0..levels {
        if level > 0 {
            current = current.refine_uniform()?;
        }
        let space = build_space(current.clone(), degree)?;
        let (coefficients, solve) = solve_on(&space, &data, cg)?;
        if !solve.converged {
            return Err(Error::SolverFailed { level, report: solve });
        }
        let errors = error_report(&DiscreteFunction::new(&space, coefficients.clone())?, &data)?;
        out.push(LevelOutput {
            space,
            coefficients,
            solve,
            errors,
        });
    }
    Ok(out)
}

pub fn rates(levels: &[LevelOutput]) -> Result<RateTable, Error> {
    let results: Vec<LevelResult> = levels.iter().map(|l| LevelResult::from(&l.errors)).collect();
    Ok(rate_table(&results)?)
}

pub const SAMPLES_PER_DIRECTION: usize = 10;

/// `patch,xi1,xi2,x,y,z,uh` on a uniform parametric grid, xi1 fastest.
pub fn solution_samples(uh: &DiscreteFunction<'_>) -> Result<String, Error> {
    let mut s = String::from("patch,xi1,xi2,x,y,z,uh\n");
    let n = SAMPLES_PER_DIRECTION;
    for patch in 0..uh.space().surface().patches().len() {
        for j in 0..n {
            for i in 0..n {
                let xi = [i as f64 / (n - 1) as f64, j as f64 / (n - 1) as f64];
                let bp = uh.space().basis_at(patch, xi)?;
                let v = uh.combine(&bp).value;
                let x = bp.point.x;
                let _ = writeln!(
                    s,
                    "{patch},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                    xi[0], xi[1], x.x, x.y, x.z, v
                );
            }
        }
    }
    Ok(s)
}

fn write(path: &Path, contents: &str) -> Result<(), Error> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub table: RateTable,
    pub solves: Vec<SolveReport>,
    pub written: Vec<PathBuf>,
}

/// Read the geometry, run the sweep and write `rates.csv` plus one
/// `solution_L<k>.csv` per level into the output directory.
pub fn run_sweep(config: &RunConfig) -> Result<SweepOutcome, Error> {
    if !(config.tol > 0.0 && config.tol < 1.0) {
        return Err(Error::Config(format!("solver tolerance {} must lie in (0, 1)", config.tol)));
    }
    let surface = read_geometry(&config.geometry)?.to_surface()?;
    let delta = config.delta.unwrap_or_else(|| default_penalty(config.degree));
    let data = resolve_problem(&config.problem, surface.alpha(), delta)?;
    let cg = CgOptions {
        tol: config.tol,
        ..CgOptions::default()
    };
    let levels = run_levels(&surface, &data, config.degree, config.levels, Some(delta), &cg)?;
    let table = rates(&levels)?;

    fs::create_dir_all(&config.out_dir).map_err(|source| Error::Io {
        path: config.out_dir.display().to_string(),
        source,
    })?;
    let mut written = Vec::new();
    let rates_path = config.out_dir.join("rates.csv");
    write(&rates_path, &table.to_csv())?;
    written.push(rates_path);
    for (k, level) in levels.iter().enumerate() {
        let path = config.out_dir.join(format!("solution_L{k}.csv"));
        write(&path, &solution_samples(&level.solution())?)?;
        written.push(path);
    }
    Ok(SweepOutcome {
        table,
        solves: levels.iter().map(|l| l.solve).collect(),
        written,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::bundled;
    use crate::cli::problems::plane_sine;

    #[test]
    fn single_level_has_no_rates() {
        let s = bundled::square4(1, 1);
        let data = plane_sine(s.alpha(), 12.0).unwrap();
        let levels = run_levels(&s, &data, 1, 1, None, &CgOptions::default()).unwrap();
        let table = rates(&levels).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert!(table.rows[0].l2_rate.is_none());
        assert!(table.to_csv().lines().nth(1).unwrap().ends_with(",,"));
    }

    #[test]
    fn samples_cover_every_patch() {
        let s = bundled::square4(1, 1);
        let space = build_space(s, 1).unwrap();
        let uh = DiscreteFunction::constant(&space, 2.0);
        let csv = solution_samples(&uh).unwrap();
        assert_eq!(csv.lines().count(), 1 + 4 * 100);
        let last = csv.lines().last().unwrap();
        assert!(last.starts_with("3,1.0000000000000000e0,1.0000000000000000e0,1.0000000000000000e0,1.0000000000000000e0,"));
        assert!(last.ends_with("2.0000000000000000e0"));
    }

    #[test]
    fn rejects_zero_levels() {
        let s = bundled::square4(1, 1);
        let data = plane_sine(s.alpha(), 12.0).unwrap();
        assert!(matches!(run_levels(&s, &data, 1, 0, None, &CgOptions::default()), Err(Error::Config(_))));
    }
}
