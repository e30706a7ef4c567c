//! Symmetric interior penalty assembly on a [`DgSpace`].
//!
//! The bilinear form couples patches only through their shared sides:
//!
//! ```text
//! a(u, v) = sum_i  ∫ α_i ∇u·∇v
//!         - sum_{E_I ∪ E_D} ∫ ({α∇u·n}[v] + {α∇v·n}[u])
//!         + sum_{E_I ∪ E_D} (δ/h_γ) ∫ α_γ [u][v]
//! ```
//!
//! with `[w] = w_L - w_R`, `{w} = (w_L + w_R)/2` on interior edges, `n` the
//! left side's outward conormal, and `[w] = {w} = w` on Dirichlet edges.
//! Dirichlet data enters only weakly through the right-hand side.

use std::fmt;

use thiserror::Error;

use crate::geometry::{EdgeKind, EdgeSide, InterfaceEdge};
use crate::linalg::CsrMatrix;
use crate::quadrature::{edge_rule, element_rule, QuadRule, QuadratureError};
use crate::space::{DgSpace, EdgeBasisPoint, ScalarField, SpaceError, VectorField};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssemblyError {
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("penalty parameter {0} must be positive")]
    InvalidPenalty(f64),
}

impl From<QuadratureError> for AssemblyError {
    fn from(e: QuadratureError) -> Self {
        Self::Space(e.into())
    }
}

impl From<crate::geometry::GeometryError> for AssemblyError {
    fn from(e: crate::geometry::GeometryError) -> Self {
        Self::Space(e.into())
    }
}

/// Penalty parameter `δ = 2 (p + 2)(p + 1)`.
pub fn default_penalty(p: usize) -> f64 {
    (2 * (p + 2) * (p + 1)) as f64
}

/// Manufactured solution used for error measurement.
#[derive(Clone)]
pub struct ExactSolution {
    pub value: ScalarField,
    /// Tangential gradient.
    pub gradient: VectorField,
}

/// Right-hand side data and the penalty parameter.
#[derive(Clone)]
pub struct ProblemData {
    pub source: ScalarField,
    pub dirichlet: ScalarField,
    /// Evaluated with the conormal set on the point.
    pub neumann: ScalarField,
    pub delta: f64,
    pub exact: Option<ExactSolution>,
}

impl fmt::Debug for ProblemData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemData")
            .field("delta", &self.delta)
            .field("has_exact", &self.exact.is_some())
            .finish_non_exhaustive()
    }
}

impl ProblemData {
    pub fn new(source: ScalarField, dirichlet: ScalarField, neumann: ScalarField, delta: f64) -> Result<Self, AssemblyError> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(AssemblyError::InvalidPenalty(delta));
        }
        Ok(Self {
            source,
            dirichlet,
            neumann,
            delta,
            exact: None,
        })
    }

    pub fn with_exact(mut self, exact: ExactSolution) -> Self {
        self.exact = Some(exact);
        self
    }

    pub fn with_delta(mut self, delta: f64) -> Result<Self, AssemblyError> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(AssemblyError::InvalidPenalty(delta));
        }
        self.delta = delta;
        Ok(self)
    }
}

/// Assembled matrix and load vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
}

struct Accumulator {
    n: usize,
    triplets: Vec<(usize, usize, f64)>,
    rhs: Vec<f64>,
}

impl Accumulator {
    fn new(n: usize) -> Self {
        Self {
            n,
            triplets: Vec::new(),
            rhs: vec![0.0; n],
        }
    }

    fn add_block(&mut self, dofs: &[usize], local: &[f64]) {
        let m = dofs.len();
        for (a, &da) in dofs.iter().enumerate() {
            for (b, &db) in dofs.iter().enumerate() {
                self.triplets.push((da, db, local[a * m + b]));
            }
        }
    }

    fn finish(self) -> SparseSystem {
        SparseSystem {
            matrix: CsrMatrix::from_triplets(self.n, &self.triplets),
            rhs: self.rhs,
        }
    }
}

fn check(data: &ProblemData) -> Result<(), AssemblyError> {
    if !(data.delta.is_finite() && data.delta > 0.0) {
        return Err(AssemblyError::InvalidPenalty(data.delta));
    }
    Ok(())
}

fn volume_terms(space: &DgSpace, data: &ProblemData, acc: &mut Accumulator) -> Result<(), AssemblyError> {
    let rule = QuadRule::reference(space.assembly_points())?;
    let surface = space.surface();
    for (pi, patch) in surface.patches().iter().enumerate() {
        let alpha = surface.alpha()[pi];
        for el in patch.elements() {
            let mut dofs: Vec<usize> = Vec::new();
            let mut local: Vec<f64> = Vec::new();
            for (xi, w) in element_rule(&rule, el.span_u, el.span_v) {
                let bp = space.basis_at(pi, xi)?;
                if dofs.is_empty() {
                    dofs = bp.dofs.clone();
                    local = vec![0.0; dofs.len() * dofs.len()];
                }
                debug_assert_eq!(dofs, bp.dofs);
                let dw = w * bp.sqrt_det_g;
                let m = dofs.len();
                for a in 0..m {
                    for b in 0..m {
                        local[a * m + b] += alpha * bp.grads[a].dot(&bp.grads[b]) * dw;
                    }
                }
                let f = (data.source)(&bp.point);
                if f != 0.0 {
                    for (&d, &v) in bp.dofs.iter().zip(&bp.values) {
                        acc.rhs[d] += f * v * dw;
                    }
                }
            }
            acc.add_block(&dofs, &local);
        }
    }
    Ok(())
}

/// One side's contribution at an edge quadrature point, flattened for the
/// local interaction matrix.
struct SideData {
    dofs: Vec<usize>,
    /// coefficient of each function in `[·]`
    jumps: Vec<f64>,
    /// each function's contribution to `{α∇·n}`
    fluxes: Vec<f64>,
}

fn side_data(eb: &EdgeBasisPoint, n: &nalgebra::Vector3<f64>, alpha: f64, jump_sign: f64, avg: f64) -> SideData {
    SideData {
        dofs: eb.basis.dofs.clone(),
        jumps: eb.basis.values.iter().map(|v| jump_sign * v).collect(),
        fluxes: eb.basis.grads.iter().map(|g| avg * alpha * g.dot(n)).collect(),
    }
}

/// Consistency, symmetry and penalty terms of one edge.
fn edge_matrix_terms(
    space: &DgSpace,
    data: &ProblemData,
    edge: &InterfaceEdge,
    rule: &QuadRule,
    acc: &mut Accumulator,
) -> Result<(), AssemblyError> {
    let surface = space.surface();
    let alpha_gamma = surface.edge_alpha(edge);
    let alpha_left = surface.alpha()[edge.left.patch];
    for span in surface.edge_spans(edge) {
        let h = surface.edge_mesh_size(edge, span)?;
        let penalty = data.delta * alpha_gamma / h;
        let mut dofs: Vec<usize> = Vec::new();
        let mut local: Vec<f64> = Vec::new();
        for (t, w) in edge_rule(rule, span).iter() {
            let left = space.basis_on_edge(edge, EdgeSide::Left, t)?;
            let n = left.conormal;
            let dgamma = w * left.line_measure;
            let mut all = match edge.right {
                Some(r) => {
                    let right = space.basis_on_edge(edge, EdgeSide::Right, t)?;
                    let mut l = side_data(&left, &n, alpha_left, 1.0, 0.5);
                    let rd = side_data(&right, &n, surface.alpha()[r.patch], -1.0, 0.5);
                    l.dofs.extend(rd.dofs);
                    l.jumps.extend(rd.jumps);
                    l.fluxes.extend(rd.fluxes);
                    l
                }
                None => side_data(&left, &n, alpha_left, 1.0, 1.0),
            };
            if dofs.is_empty() {
                dofs = std::mem::take(&mut all.dofs);
                local = vec![0.0; dofs.len() * dofs.len()];
            }
            let m = dofs.len();
            for a in 0..m {
                for b in 0..m {
                    local[a * m + b] += dgamma
                        * (-all.fluxes[b] * all.jumps[a] - all.fluxes[a] * all.jumps[b]
                            + penalty * all.jumps[a] * all.jumps[b]);
                }
            }
        }
        acc.add_block(&dofs, &local);
    }
    Ok(())
}

fn interface_terms(space: &DgSpace, data: &ProblemData, acc: &mut Accumulator) -> Result<(), AssemblyError> {
    let rule = QuadRule::reference(space.assembly_points())?;
    for edge in space.surface().edges().iter().filter(|e| e.kind == EdgeKind::Interior) {
        edge_matrix_terms(space, data, edge, &rule, acc)?;
    }
    Ok(())
}

fn boundary_terms(space: &DgSpace, data: &ProblemData, acc: &mut Accumulator) -> Result<(), AssemblyError> {
    let rule = QuadRule::reference(space.assembly_points())?;
    let surface = space.surface();
    for edge in surface.edges() {
        match edge.kind {
            EdgeKind::Interior => {}
            EdgeKind::Dirichlet => {
                edge_matrix_terms(space, data, edge, &rule, acc)?;
                let alpha_gamma = surface.edge_alpha(edge);
                for span in surface.edge_spans(edge) {
                    let h = surface.edge_mesh_size(edge, span)?;
                    for (t, w) in edge_rule(&rule, span).iter() {
                        let eb = space.basis_on_edge(edge, EdgeSide::Left, t)?;
                        let g = (data.dirichlet)(&eb.basis.point);
                        if g == 0.0 {
                            continue;
                        }
                        let dgamma = w * eb.line_measure;
                        for ((&d, &v), grad) in eb.basis.dofs.iter().zip(&eb.basis.values).zip(&eb.basis.grads) {
                            acc.rhs[d] += dgamma * alpha_gamma * (-grad.dot(&eb.conormal) + data.delta / h * v) * g;
                        }
                    }
                }
            }
            EdgeKind::Neumann => {
                for span in surface.edge_spans(edge) {
                    for (t, w) in edge_rule(&rule, span).iter() {
                        let eb = space.basis_on_edge(edge, EdgeSide::Left, t)?;
                        let g = (data.neumann)(&eb.basis.point);
                        let dgamma = w * eb.line_measure;
                        for (&d, &v) in eb.basis.dofs.iter().zip(&eb.basis.values) {
                            acc.rhs[d] += dgamma * g * v;
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

/// Volume diffusion matrix and source load.
pub fn assemble_volume(space: &DgSpace, data: &ProblemData) -> Result<SparseSystem, AssemblyError> {
    check(data)?;
    let mut acc = Accumulator::new(space.total_dofs());
    volume_terms(space, data, &mut acc)?;
    Ok(acc.finish())
}

/// Consistency, symmetry and penalty terms on interior edges.
pub fn assemble_interface(space: &DgSpace, data: &ProblemData) -> Result<SparseSystem, AssemblyError> {
    check(data)?;
    let mut acc = Accumulator::new(space.total_dofs());
    interface_terms(space, data, &mut acc)?;
    Ok(acc.finish())
}

/// One-sided Nitsche terms and data on Dirichlet edges, Neumann loads.
pub fn assemble_boundary(space: &DgSpace, data: &ProblemData) -> Result<SparseSystem, AssemblyError> {
    check(data)?;
    let mut acc = Accumulator::new(space.total_dofs());
    boundary_terms(space, data, &mut acc)?;
    Ok(acc.finish())
}

/// The full system: volume, interface and boundary contributions in that order.
pub fn assemble(space: &DgSpace, data: &ProblemData) -> Result<SparseSystem, AssemblyError> {
    check(data)?;
    let mut acc = Accumulator::new(space.total_dofs());
    volume_terms(space, data, &mut acc)?;
    interface_terms(space, data, &mut acc)?;
    boundary_terms(space, data, &mut acc)?;
    Ok(acc.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::bundled;
    use crate::geometry::{match_interfaces, BoundaryKind, BoundaryTags, EdgeKind, NurbsPatch, Side};
    use crate::linalg::{cg_solve, dot, CgOptions};
    use crate::space::{build_space, SurfacePoint};
    use nalgebra::Vector3;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::sync::Arc;

    fn constant(c: f64) -> ScalarField {
        Arc::new(move |_: &SurfacePoint| c)
    }

    fn data(f: f64, gd: f64, gn: f64, p: usize) -> ProblemData {
        ProblemData::new(constant(f), constant(gd), constant(gn), default_penalty(p)).unwrap()
    }

    fn single(patch: NurbsPatch, tags: BoundaryTags) -> crate::geometry::MultiPatchSurface {
        match_interfaces(vec![patch], vec![1.0], &tags).unwrap()
    }

    #[test]
    fn penalty_rule() {
        assert_eq!(default_penalty(1), 12.0);
        assert_eq!(default_penalty(2), 24.0);
        assert_eq!(default_penalty(3), 40.0);
        assert_eq!(default_penalty(4), 60.0);
    }

    #[test]
    fn rejects_non_positive_penalty() {
        assert!(ProblemData::new(constant(0.0), constant(0.0), constant(0.0), 0.0).is_err());
        assert!(data(0.0, 0.0, 0.0, 1).with_delta(-1.0).is_err());
    }

    #[test]
    fn zero_source_gives_zero_volume_load() {
        let space = build_space(bundled::square4(2, 2), 2).unwrap();
        let sys = assemble_volume(&space, &data(0.0, 1.0, 1.0, 2)).unwrap();
        assert!(sys.rhs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bilinear_element_stiffness() {
        let s = single(bundled::affine_patch(0, 1, 1, [0.0, 1.0], [0.0, 1.0]), BoundaryTags::all(BoundaryKind::Dirichlet));
        let space = build_space(s, 1).unwrap();
        let k = assemble_volume(&space, &data(0.0, 0.0, 0.0, 1)).unwrap().matrix.to_dense();
        let want = [
            [4.0, -1.0, -1.0, -2.0],
            [-1.0, 4.0, -2.0, -1.0],
            [-1.0, -2.0, 4.0, -1.0],
            [-2.0, -1.0, -1.0, 4.0],
        ];
        for i in 0..4 {
            for j in 0..4 {
                assert!((k[(i, j)] - want[i][j] / 6.0).abs() < 1e-14);
            }
            assert!(k.row(i).sum().abs() < 1e-14);
        }
    }

    #[test]
    fn volume_is_linear_in_alpha() {
        let surface = bundled::qcyl4(2, 1);
        let doubled = surface.with_alpha(vec![2.0; 4]).unwrap();
        let a = assemble_volume(&build_space(surface, 2).unwrap(), &data(1.0, 0.0, 0.0, 2)).unwrap();
        let b = assemble_volume(&build_space(doubled, 2).unwrap(), &data(1.0, 0.0, 0.0, 2)).unwrap();
        for (x, y) in a.matrix.values().iter().zip(b.matrix.values()) {
            assert_eq!(2.0 * x, *y);
        }
        assert_eq!(a.rhs, b.rhs);
    }

    fn two_squares(p: usize, elements: usize, tags: BoundaryTags) -> crate::geometry::MultiPatchSurface {
        let a = bundled::affine_patch(0, p, elements, [0.0, 1.0], [0.0, 1.0]);
        let b = bundled::affine_patch(1, p, elements, [1.0, 2.0], [0.0, 1.0]);
        match_interfaces(vec![a, b], vec![1.0, 1.0], &tags).unwrap()
    }

    /// Coefficients of the globally linear `c0 + c1 x + c2 y` (coordinates
    /// are in every patch space).
    fn linear_coefficients(space: &DgSpace, c: [f64; 3]) -> Vec<f64> {
        let mut out = Vec::new();
        for patch in space.surface().patches() {
            out.extend(patch.control_points().iter().map(|x| c[0] + c[1] * x.x + c[2] * x.y));
        }
        out
    }

    #[test]
    fn continuous_vectors_see_no_penalty() {
        let space = build_space(two_squares(2, 2, BoundaryTags::all(BoundaryKind::Neumann)), 2).unwrap();
        let sys = assemble_interface(&space, &data(0.0, 0.0, 0.0, 2)).unwrap();
        let v = linear_coefficients(&space, [0.3, -1.2, 2.0]);
        assert!(sys.matrix.quadratic_form(&v).abs() < 1e-10);
    }

    #[test]
    fn linear_energy_on_two_patches() {
        let space = build_space(two_squares(1, 2, BoundaryTags::all(BoundaryKind::Neumann)), 1).unwrap();
        let sys = assemble(&space, &data(0.0, 0.0, 0.0, 1)).unwrap();
        // u = 1 + 2x - 3y on [0,2]x[0,1]: α ∫|∇u|² = 13 * 2
        let v = linear_coefficients(&space, [1.0, 2.0, -3.0]);
        assert!((sys.matrix.quadratic_form(&v) - 26.0).abs() < 1e-10);
    }

    #[test]
    fn symmetric_on_perturbed_two_patch_geometry() {
        let mut rng = StdRng::seed_from_u64(12);
        let a = bundled::affine_patch(0, 2, 2, [0.0, 1.0], [0.0, 1.0]);
        let b = bundled::affine_patch(1, 2, 2, [1.0, 2.0], [0.0, 1.0]);
        let jitter = |p: &NurbsPatch, rng: &mut StdRng| {
            let cps = p
                .control_points()
                .iter()
                .map(|c| {
                    // keep the shared side x = 1 straight so the interface still matches
                    if (c.x - 1.0).abs() < 1e-12 {
                        *c
                    } else {
                        c + Vector3::new(rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), rng.gen_range(-0.1..0.1))
                    }
                })
                .collect();
            NurbsPatch::new(p.id(), p.basis().clone(), cps).unwrap()
        };
        let (a, b) = (jitter(&a, &mut rng), jitter(&b, &mut rng));
        let s = match_interfaces(vec![a, b], vec![1.0, 3.0], &BoundaryTags::all(BoundaryKind::Dirichlet)).unwrap();
        let space = build_space(s, 2).unwrap();
        let sys = assemble(&space, &data(1.0, 0.5, 0.0, 2)).unwrap();
        assert!(sys.matrix.relative_asymmetry() <= 1e-12);
        assert!(sys.matrix.is_structurally_symmetric());
        let n = space.total_dofs();
        for _ in 0..100 {
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            assert!(sys.matrix.quadratic_form(&v) > 0.0);
        }
    }

    #[test]
    fn zero_boundary_data_gives_zero_boundary_load() {
        let mut tags = BoundaryTags::all(BoundaryKind::Dirichlet);
        tags.set(0, Side::West, BoundaryKind::Neumann);
        let space = build_space(two_squares(2, 1, tags), 2).unwrap();
        let sys = assemble_boundary(&space, &data(1.0, 0.0, 0.0, 2)).unwrap();
        assert!(sys.rhs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_neumann_flux_integrates_to_edge_length() {
        for p in 1..=4 {
            let mut tags = BoundaryTags::all(BoundaryKind::Dirichlet);
            tags.set(0, Side::South, BoundaryKind::Neumann);
            let s = single(bundled::affine_patch(0, p, 3, [0.0, 1.0], [0.0, 1.0]), tags);
            let space = build_space(s, p).unwrap();
            let sys = assemble_boundary(&space, &data(0.0, 0.0, 1.0, p)).unwrap();
            assert!((sys.rhs.iter().sum::<f64>() - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn constants_solve_exactly() {
        for (surface, p) in [(bundled::square4(1, 2), 1), (bundled::qcyl4(2, 1), 2), (bundled::qcyl4(3, 1), 3)] {
            let space = build_space(surface, p).unwrap();
            let sys = assemble(&space, &data(0.0, 2.5, 0.0, p)).unwrap();
            let c = vec![2.5; space.total_dofs()];
            let r: Vec<f64> = sys.matrix.mul_vec(&c).iter().zip(&sys.rhs).map(|(a, b)| a - b).collect();
            let rel = r.iter().fold(0.0_f64, |m, v| m.max(v.abs())) / sys.rhs.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            assert!(rel < 1e-10, "relative residual {rel}");
            let (x, rep) = cg_solve(&sys.matrix, &sys.rhs, &CgOptions::default()).unwrap();
            assert!(rep.converged);
            assert!(x.iter().all(|v| (v - 2.5).abs() < 1e-7));
        }
    }

    #[test]
    fn full_system_is_sum_of_parts() {
        let space = build_space(bundled::square4(2, 2), 2).unwrap();
        let d = data(1.0, 0.3, 0.0, 2);
        let full = assemble(&space, &d).unwrap();
        let parts = [
            assemble_volume(&space, &d).unwrap(),
            assemble_interface(&space, &d).unwrap(),
            assemble_boundary(&space, &d).unwrap(),
        ];
        let mut rng = StdRng::seed_from_u64(1);
        let v: Vec<f64> = (0..space.total_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sum: f64 = parts.iter().map(|p| p.matrix.quadratic_form(&v)).sum();
        assert!((full.matrix.quadratic_form(&v) - sum).abs() < 1e-10 * sum.abs().max(1.0));
        let rhs_sum: Vec<f64> = (0..v.len()).map(|i| parts.iter().map(|p| p.rhs[i]).sum()).collect();
        assert!((dot(&full.rhs, &v) - dot(&rhs_sum, &v)).abs() < 1e-12);
        // interior edges actually couple neighbouring patches
        let counts = space.surface().edge_counts();
        assert_eq!(counts.interior, 4);
        assert!(space.surface().edges().iter().any(|e| e.kind == EdgeKind::Interior));
    }

    #[test]
    fn reproducible_assembly() {
        let space = build_space(bundled::qcyl4(2, 2), 2).unwrap();
        let d = data(1.0, 0.3, 0.0, 2);
        assert_eq!(assemble(&space, &d).unwrap(), assemble(&space, &d).unwrap());
    }
}
