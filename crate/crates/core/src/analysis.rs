//! Error norms against manufactured solutions and convergence-rate tables.

use std::fmt::Write as _;

use thiserror::Error;

use crate::assembly::{ExactSolution, ProblemData};
use crate::geometry::{EdgeKind, EdgeSide};
use crate::quadrature::{edge_rule, element_rule, QuadRule, QuadratureError};
use crate::space::{DiscreteFunction, ScalarField, SpaceError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("problem has no exact solution to compare against")]
    NoExactSolution,
    #[error("a rate table needs at least one level")]
    EmptySweep,
}

impl From<QuadratureError> for AnalysisError {
    fn from(e: QuadratureError) -> Self {
        Self::Space(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchError {
    pub l2: f64,
    /// `α_i^{1/2} ‖∇(u_h - u)‖` on the patch.
    pub weighted_gradient: f64,
}

/// Parts of the DG-norm error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DgError {
    pub total: f64,
    pub seminorm: f64,
    pub jumps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub l2_error: f64,
    pub dg_error: f64,
    pub dg_seminorm: f64,
    pub dg_jumps: f64,
    pub dofs: usize,
    pub h_max: f64,
    pub per_patch: Vec<PatchError>,
}

/// `‖u_h - u‖_{L2}` with `p + 2` Gauss points per direction.
pub fn l2_error(uh: &DiscreteFunction<'_>, exact: &ScalarField) -> Result<f64, AnalysisError> {
    l2_error_with_points(uh, exact, uh.space().degree() + 2)
}

pub fn l2_error_with_points(uh: &DiscreteFunction<'_>, exact: &ScalarField, points: usize) -> Result<f64, AnalysisError> {
    Ok(patch_errors(uh, exact, None, points)?.iter().map(|e| e.l2 * e.l2).sum::<f64>().sqrt())
}

/// `∫(u - u_h) / |Ω|`: the constant shift that best aligns `u_h` with `u` in L2.
/// Used to compare pure-Neumann solutions, which are fixed only up to a constant.
pub fn mean_offset(uh: &DiscreteFunction<'_>, exact: &ScalarField) -> Result<f64, AnalysisError> {
    let space = uh.space();
    let rule = QuadRule::reference(space.degree() + 2)?;
    let (mut diff, mut area) = (0.0, 0.0);
    for (pi, patch) in space.surface().patches().iter().enumerate() {
        for el in patch.elements() {
            for (xi, w) in element_rule(&rule, el.span_u, el.span_v) {
                let bp = space.basis_at(pi, xi)?;
                let dw = w * bp.sqrt_det_g;
                diff += (exact(&bp.point) - uh.combine(&bp).value) * dw;
                area += dw;
            }
        }
    }
    Ok(diff / area)
}

fn patch_errors(
    uh: &DiscreteFunction<'_>,
    exact: &ScalarField,
    exact_gradient: Option<&ExactSolution>,
    points: usize,
) -> Result<Vec<PatchError>, AnalysisError> {
    let space = uh.space();
    let surface = space.surface();
    let rule = QuadRule::reference(points)?;
    let mut out = Vec::with_capacity(surface.patches().len());
    for (pi, patch) in surface.patches().iter().enumerate() {
        let alpha = surface.alpha()[pi];
        let (mut l2, mut grad) = (0.0, 0.0);
        for el in patch.elements() {
            for (xi, w) in element_rule(&rule, el.span_u, el.span_v) {
                let bp = space.basis_at(pi, xi)?;
                let v = uh.combine(&bp);
                let dw = w * bp.sqrt_det_g;
                let diff = v.value - exact(&bp.point);
                l2 += diff * diff * dw;
                if let Some(ex) = exact_gradient {
                    let dg = v.gradient - (ex.gradient)(&bp.point);
                    grad += alpha * dg.norm_squared() * dw;
                }
            }
        }
        out.push(PatchError {
            l2: l2.sqrt(),
            weighted_gradient: grad.sqrt(),
        });
    }
    Ok(out)
}

fn jump_part(uh: &DiscreteFunction<'_>, data: &ProblemData, exact: &ExactSolution, points: usize) -> Result<f64, AnalysisError> {
    let space = uh.space();
    let surface = space.surface();
    let rule = QuadRule::reference(points)?;
    let mut sum = 0.0;
    for edge in surface.edges() {
        if edge.kind == EdgeKind::Neumann {
            continue;
        }
        let alpha_gamma = surface.edge_alpha(edge);
        for span in surface.edge_spans(edge) {
            let h = surface.edge_mesh_size(edge, span).map_err(SpaceError::from)?;
            let mut local = 0.0;
            for (t, w) in edge_rule(&rule, span).iter() {
                let left = space.basis_on_edge(edge, EdgeSide::Left, t)?;
                let ul = uh.combine(&left.basis).value;
                let jump = match edge.kind {
                    EdgeKind::Interior => {
                        let right = space.basis_on_edge(edge, EdgeSide::Right, t)?;
                        let ur = uh.combine(&right.basis).value;
                        (ul - (exact.value)(&left.basis.point)) - (ur - (exact.value)(&right.basis.point))
                    }
                    _ => ul - (data.dirichlet)(&left.basis.point),
                };
                local += jump * jump * w * left.line_measure;
            }
            sum += alpha_gamma * data.delta / h * local;
        }
    }
    Ok(sum)
}

/// DG-norm error `‖u - u_h‖_DG`: weighted broken gradient part plus penalty-
/// scaled jumps on interior and Dirichlet edges (`u_h - g_D` on the latter).
pub fn dg_error(uh: &DiscreteFunction<'_>, data: &ProblemData) -> Result<DgError, AnalysisError> {
    let exact = data.exact.as_ref().ok_or(AnalysisError::NoExactSolution)?;
    let points = uh.space().degree() + 2;
    let per_patch = patch_errors(uh, &exact.value, Some(exact), points)?;
    let semi: f64 = per_patch.iter().map(|e| e.weighted_gradient.powi(2)).sum();
    let jumps = jump_part(uh, data, exact, points)?;
    Ok(DgError {
        total: (semi + jumps).sqrt(),
        seminorm: semi.sqrt(),
        jumps: jumps.sqrt(),
    })
}

/// L2 and DG errors with a per-patch breakdown.
pub fn error_report(uh: &DiscreteFunction<'_>, data: &ProblemData) -> Result<ErrorReport, AnalysisError> {
    let exact = data.exact.as_ref().ok_or(AnalysisError::NoExactSolution)?;
    let space = uh.space();
    let points = space.degree() + 2;
    let per_patch = patch_errors(uh, &exact.value, Some(exact), points)?;
    let semi: f64 = per_patch.iter().map(|e| e.weighted_gradient.powi(2)).sum();
    let jumps = jump_part(uh, data, exact, points)?;
    let h_max = space.surface().h_max().map_err(SpaceError::from)?;
    Ok(ErrorReport {
        l2_error: per_patch.iter().map(|e| e.l2 * e.l2).sum::<f64>().sqrt(),
        dg_error: (semi + jumps).sqrt(),
        dg_seminorm: semi.sqrt(),
        dg_jumps: jumps.sqrt(),
        dofs: space.total_dofs(),
        h_max,
        per_patch,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelResult {
    pub h_max: f64,
    pub dofs: usize,
    pub l2_error: f64,
    pub dg_error: f64,
}

impl From<&ErrorReport> for LevelResult {
    fn from(r: &ErrorReport) -> Self {
        Self {
            h_max: r.h_max,
            dofs: r.dofs,
            l2_error: r.l2_error,
            dg_error: r.dg_error,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateRow {
    pub level: usize,
    pub h_max: f64,
    pub dofs: usize,
    pub l2_error: f64,
    pub dg_error: f64,
    pub l2_rate: Option<f64>,
    pub dg_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
}

pub const CSV_HEADER: &str = "level,h_max,dofs,l2_error,dg_error,l2_rate,dg_rate";

/// `log(e_k / e_{k+1}) / log(h_k / h_{k+1})`; `+inf` once the finer error is zero.
pub fn observed_rate(coarse_err: f64, fine_err: f64, coarse_h: f64, fine_h: f64) -> f64 {
    if fine_err == 0.0 {
        return f64::INFINITY;
    }
    (coarse_err / fine_err).ln() / (coarse_h / fine_h).ln()
}

/// Rate in terms of DOFs, `h ~ dofs^{-1/2}` on surfaces.
pub fn observed_rate_dofs(coarse_err: f64, fine_err: f64, coarse_dofs: usize, fine_dofs: usize) -> f64 {
    if fine_err == 0.0 {
        return f64::INFINITY;
    }
    (coarse_err / fine_err).ln() / (0.5 * (fine_dofs as f64 / coarse_dofs as f64).ln())
}

pub fn rate_table(levels: &[LevelResult]) -> Result<RateTable, AnalysisError> {
    if levels.is_empty() {
        return Err(AnalysisError::EmptySweep);
    }
    let rows = levels
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let prev = k.checked_sub(1).map(|j| &levels[j]);
            RateRow {
                level: k,
                h_max: r.h_max,
                dofs: r.dofs,
                l2_error: r.l2_error,
                dg_error: r.dg_error,
                l2_rate: prev.map(|q| observed_rate(q.l2_error, r.l2_error, q.h_max, r.h_max)),
                dg_rate: prev.map(|q| observed_rate(q.dg_error, r.dg_error, q.h_max, r.h_max)),
            }
        })
        .collect();
    Ok(RateTable { rows })
}

fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

impl RateTable {
    pub fn last(&self) -> &RateRow {
        self.rows.last().expect("rate table is never empty")
    }

    /// Mean of the finite L2 rates.
    pub fn mean_l2_rate(&self) -> Option<f64> {
        mean(self.rows.iter().filter_map(|r| r.l2_rate))
    }

    pub fn mean_dg_rate(&self) -> Option<f64> {
        mean(self.rows.iter().filter_map(|r| r.dg_rate))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let rate = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.level,
                fmt_f64(r.h_max),
                r.dofs,
                fmt_f64(r.l2_error),
                fmt_f64(r.dg_error),
                rate(r.l2_rate),
                rate(r.dg_rate)
            );
        }
        s
    }
}

fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = it.filter(|x| x.is_finite()).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::default_penalty;
    use crate::cli::bundled;
    use crate::geometry::{match_interfaces, BoundaryKind, BoundaryTags};
    use crate::space::{build_space, SurfacePoint};
    use nalgebra::Vector3;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn zero() -> ScalarField {
        Arc::new(|_: &SurfacePoint| 0.0)
    }

    fn unit_square_space(p: usize, elements: usize, kind: BoundaryKind) -> crate::space::DgSpace {
        let s = match_interfaces(
            vec![bundled::affine_patch(0, p, elements, [0.0, 1.0], [0.0, 1.0])],
            vec![1.0],
            &BoundaryTags::all(kind),
        )
        .unwrap();
        build_space(s, p).unwrap()
    }

    #[test]
    fn l2_of_space_member_is_zero() {
        let space = build_space(bundled::qcyl4(2, 1), 2).unwrap();
        let f = DiscreteFunction::constant(&space, 3.0);
        let exact: ScalarField = Arc::new(|_: &SurfacePoint| 3.0);
        assert!(l2_error(&f, &exact).unwrap() <= 1e-12);
    }

    #[test]
    fn l2_of_unit_constant() {
        let space = unit_square_space(1, 2, BoundaryKind::Dirichlet);
        let f = DiscreteFunction::constant(&space, 0.0);
        let one: ScalarField = Arc::new(|_: &SurfacePoint| 1.0);
        assert!((l2_error(&f, &one).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn l2_of_sine_product() {
        // ∫∫ sin²(πx) sin²(πy) = 1/4, so the norm is 1/2
        let space = unit_square_space(2, 8, BoundaryKind::Dirichlet);
        let f = DiscreteFunction::constant(&space, 0.0);
        let u: ScalarField = Arc::new(|pt: &SurfacePoint| (PI * pt.x.x).sin() * (PI * pt.x.y).sin());
        assert!((l2_error(&f, &u).unwrap() - 0.5).abs() < 1e-10);
    }

    fn exact_linear() -> ExactSolution {
        ExactSolution {
            value: Arc::new(|pt: &SurfacePoint| 1.0 + pt.x.x - 2.0 * pt.x.y),
            gradient: Arc::new(|_: &SurfacePoint| Vector3::new(1.0, -2.0, 0.0)),
        }
    }

    #[test]
    fn dg_error_of_exact_member_is_zero() {
        let space = build_space(bundled::square4(2, 2), 2).unwrap();
        let ex = exact_linear();
        let data = crate::assembly::ProblemData::new(zero(), ex.value.clone(), zero(), default_penalty(2))
            .unwrap()
            .with_exact(ex.clone());
        let coeffs = space
            .surface()
            .patches()
            .iter()
            .flat_map(|p| p.control_points().iter().map(|x| 1.0 + x.x - 2.0 * x.y))
            .collect();
        let f = DiscreteFunction::new(&space, coeffs).unwrap();
        assert!(dg_error(&f, &data).unwrap().total < 1e-10);
    }

    #[test]
    fn dg_error_without_jumps_is_weighted_seminorm() {
        let space = unit_square_space(2, 2, BoundaryKind::Neumann);
        let surface = space.surface().with_alpha(vec![4.0]).unwrap();
        let space = build_space(surface, 2).unwrap();
        let f = DiscreteFunction::constant(&space, 0.0);
        let ex = exact_linear();
        let data = crate::assembly::ProblemData::new(zero(), zero(), zero(), 24.0).unwrap().with_exact(ex);
        let e = dg_error(&f, &data).unwrap();
        assert_eq!(e.jumps, 0.0);
        // sqrt(4 * 5 * 1)
        assert!((e.total - 20f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn dg_error_of_patch_indicator() {
        // two unit squares, u_h = 1 on the left patch, 0 on the right, u = 0
        for elements in [1, 3] {
            let a = bundled::affine_patch(0, 1, elements, [0.0, 1.0], [0.0, 1.0]);
            let b = bundled::affine_patch(1, 1, elements, [1.0, 2.0], [0.0, 1.0]);
            let s = match_interfaces(vec![a, b], vec![1.0, 1.0], &BoundaryTags::all(BoundaryKind::Neumann)).unwrap();
            let space = build_space(s, 1).unwrap();
            let n = space.total_dofs();
            let mut c = vec![0.0; n];
            c[space.patch_dofs(0)].fill(1.0);
            let f = DiscreteFunction::new(&space, c).unwrap();
            let ex = ExactSolution {
                value: zero(),
                gradient: Arc::new(|_: &SurfacePoint| Vector3::zeros()),
            };
            let delta = 12.0;
            let data = crate::assembly::ProblemData::new(zero(), zero(), zero(), delta).unwrap().with_exact(ex);
            let e = dg_error(&f, &data).unwrap();
            // each interface element has h = |γ_e| = 1/elements: sum (δ/h)·|γ_e| = δ·elements
            let hand = (0..elements).map(|_| delta / (1.0 / elements as f64) * (1.0 / elements as f64)).sum::<f64>();
            assert!((e.total.powi(2) - hand).abs() < 1e-10 * hand);
            assert!(e.total >= e.seminorm);
        }
    }

    #[test]
    fn rates_from_error_ratios() {
        let rows = [
            LevelResult { h_max: 1.0, dofs: 4, l2_error: 1.0, dg_error: 1.0 },
            LevelResult { h_max: 0.5, dofs: 16, l2_error: 0.25, dg_error: 0.125 },
        ];
        let t = rate_table(&rows).unwrap();
        assert!((t.rows[1].l2_rate.unwrap() - 2.0).abs() < 1e-14);
        assert!((t.rows[1].dg_rate.unwrap() - 3.0).abs() < 1e-14);
        assert_eq!(t.rows[0].l2_rate, None);
        assert!((observed_rate_dofs(1.0, 0.25, 4, 16) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn zero_error_gives_infinite_rate() {
        let rows = [
            LevelResult { h_max: 1.0, dofs: 4, l2_error: 1.0, dg_error: 1.0 },
            LevelResult { h_max: 0.5, dofs: 16, l2_error: 0.0, dg_error: 0.5 },
            LevelResult { h_max: 0.25, dofs: 64, l2_error: 0.0, dg_error: 0.25 },
        ];
        let t = rate_table(&rows).unwrap();
        assert_eq!(t.rows[1].l2_rate, Some(f64::INFINITY));
        assert_eq!(t.mean_l2_rate(), None);
        assert!((t.mean_dg_rate().unwrap() - 1.0).abs() < 1e-14);
        assert!(t.to_csv().lines().nth(2).unwrap().contains(",inf,"));
        assert!(rate_table(&[]).is_err());
    }

    #[test]
    fn csv_layout() {
        let rows = [
            LevelResult { h_max: 0.5, dofs: 16, l2_error: 0.1, dg_error: 0.2 },
            LevelResult { h_max: 0.25, dofs: 36, l2_error: 0.025, dg_error: 0.1 },
        ];
        let csv = rate_table(&rows).unwrap().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "0,5.0000000000000000e-1,16,1.0000000000000001e-1,2.0000000000000001e-1,,");
        let fields: Vec<&str> = lines[2].split(',').collect();
        assert_eq!(fields.len(), 7);
        assert_eq!(fields[5].parse::<f64>().unwrap(), 2.0);
        assert_eq!(fields[3].parse::<f64>().unwrap(), 0.025);
    }
}
