//! The patchwise-discontinuous NURBS space and functions living in it.

use std::ops::{Add, Mul, Range, Sub};
use std::sync::Arc;

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

use crate::geometry::{EdgeSide, GeometryError, InterfaceEdge, MultiPatchSurface, SurfaceFrame};
use crate::linalg::{cg_solve, CgOptions, CsrMatrix, LinalgError};
use crate::quadrature::{element_rule, QuadRule, QuadratureError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpaceError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("patch {patch} has degree ({}, {}), expected {expected} in both directions", got.0, got.1)]
    DegreeMismatch {
        patch: usize,
        expected: usize,
        got: (usize, usize),
    },
    #[error("coefficient vector has length {got}, space has {expected} dofs")]
    LengthMismatch { expected: usize, got: usize },
    #[error("edge has no right side (boundary edge)")]
    MissingSide,
    #[error("projection did not converge (relative residual {0})")]
    ProjectionFailed(f64),
}

/// A point on the surface handed to data fields.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePoint {
    pub patch: usize,
    pub param: [f64; 2],
    pub x: Vector3<f64>,
    /// Unit surface normal.
    pub normal: Vector3<f64>,
    /// Outward unit conormal when the point lies on a patch side.
    pub conormal: Option<Vector3<f64>>,
}

pub type ScalarField = Arc<dyn Fn(&SurfacePoint) -> f64 + Send + Sync>;
pub type VectorField = Arc<dyn Fn(&SurfacePoint) -> Vector3<f64> + Send + Sync>;

/// Broken NURBS space with one DOF block per patch.
#[derive(Debug, Clone, PartialEq)]
pub struct DgSpace {
    surface: MultiPatchSurface,
    degree: usize,
    offsets: Vec<usize>,
    total_dofs: usize,
    assembly_points: usize,
}

/// Build the space; DOFs are numbered patch by patch, and inside a patch by
/// the tensor index `k2 * n1 + k1`.
pub fn build_space(surface: MultiPatchSurface, degree: usize) -> Result<DgSpace, SpaceError> {
    let mut offsets = Vec::with_capacity(surface.patches().len());
    let mut total = 0;
    for (i, patch) in surface.patches().iter().enumerate() {
        let d = patch.degree();
        if d != (degree, degree) {
            return Err(SpaceError::DegreeMismatch {
                patch: i,
                expected: degree,
                got: d,
            });
        }
        offsets.push(total);
        total += patch.basis().len();
    }
    Ok(DgSpace {
        surface,
        degree,
        offsets,
        total_dofs: total,
        assembly_points: degree + 1,
    })
}

impl DgSpace {
    pub fn surface(&self) -> &MultiPatchSurface {
        &self.surface
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn total_dofs(&self) -> usize {
        self.total_dofs
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn patch_dofs(&self, patch: usize) -> Range<usize> {
        let start = self.offsets[patch];
        start..start + self.surface.patch(patch).basis().len()
    }

    pub fn global_index(&self, patch: usize, local: usize) -> usize {
        self.offsets[patch] + local
    }

    /// Gauss points per direction used by assembly, `p + 1` unless overridden.
    pub fn assembly_points(&self) -> usize {
        self.assembly_points
    }

    pub fn with_assembly_points(mut self, points: usize) -> Self {
        self.assembly_points = points;
        self
    }

    /// Active global DOFs, values and surface gradients at `xi` on `patch`,
    /// plus the point description.
    pub fn basis_at(&self, patch: usize, xi: [f64; 2]) -> Result<BasisPoint, SpaceError> {
        Ok(self.basis_and_frame(patch, xi)?.0)
    }

    fn basis_and_frame(&self, patch: usize, xi: [f64; 2]) -> Result<(BasisPoint, SurfaceFrame), SpaceError> {
        let p = self.surface.patch(patch);
        let (eval, frame) = p.eval(xi)?;
        let dofs = eval.indices.iter().map(|&k| self.offsets[patch] + k).collect();
        let grads = eval
            .grads
            .iter()
            .map(|g| frame.surface_gradient(Vector2::new(g[0], g[1])))
            .collect();
        let bp = BasisPoint {
            point: SurfacePoint {
                patch,
                param: xi,
                x: frame.point,
                normal: frame.normal(),
                conormal: None,
            },
            sqrt_det_g: frame.sqrt_det_g,
            dofs,
            values: eval.values,
            grads,
        };
        Ok((bp, frame))
    }

    /// Like [`DgSpace::basis_at`] on an edge, with the outward conormal of
    /// that side and the line measure `|dG/dt|`.
    pub fn basis_on_edge(&self, edge: &InterfaceEdge, side: EdgeSide, t: f64) -> Result<EdgeBasisPoint, SpaceError> {
        let r = edge.side_ref(side).ok_or(SpaceError::MissingSide)?;
        let ts = edge.side_coordinate(side, t);
        let xi = r.side.param(ts);
        let (mut bp, frame) = self.basis_and_frame(r.patch, xi)?;
        let n = self.surface.patch(r.patch).conormal_from_frame(&frame, r.side, ts)?;
        bp.point.conormal = Some(n);
        let speed = frame.jacobian.column(r.side.running_axis()).norm();
        Ok(EdgeBasisPoint {
            basis: bp,
            conormal: n,
            line_measure: speed,
        })
    }
}

#[derive(Debug, Clone)]
pub struct BasisPoint {
    pub point: SurfacePoint,
    pub sqrt_det_g: f64,
    pub dofs: Vec<usize>,
    pub values: Vec<f64>,
    pub grads: Vec<Vector3<f64>>,
}

#[derive(Debug, Clone)]
pub struct EdgeBasisPoint {
    pub basis: BasisPoint,
    pub conormal: Vector3<f64>,
    pub line_measure: f64,
}

/// Value and tangential gradient of a function at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointValue {
    pub value: f64,
    pub gradient: Vector3<f64>,
}

/// Left/right traces on an edge. Boundary edges have no right trace, and
/// then `jump` and `average` both return the left trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgePair<T> {
    pub left: T,
    pub right: Option<T>,
}

impl<T> EdgePair<T>
where
    T: Copy + Add<Output = T> + Sub<Output = T> + Mul<f64, Output = T>,
{
    pub fn jump(&self) -> T {
        match self.right {
            Some(r) => self.left - r,
            None => self.left,
        }
    }

    pub fn average(&self) -> T {
        match self.right {
            Some(r) => (self.left + r) * 0.5,
            None => self.left,
        }
    }
}

/// Element of a [`DgSpace`] given by its coefficients.
#[derive(Debug, Clone)]
pub struct DiscreteFunction<'a> {
    space: &'a DgSpace,
    coefficients: Vec<f64>,
}

impl<'a> DiscreteFunction<'a> {
    pub fn new(space: &'a DgSpace, coefficients: Vec<f64>) -> Result<Self, SpaceError> {
        if coefficients.len() != space.total_dofs() {
            return Err(SpaceError::LengthMismatch {
                expected: space.total_dofs(),
                got: coefficients.len(),
            });
        }
        Ok(Self { space, coefficients })
    }

    pub fn constant(space: &'a DgSpace, c: f64) -> Self {
        Self {
            space,
            coefficients: vec![c; space.total_dofs()],
        }
    }

    pub fn space(&self) -> &'a DgSpace {
        self.space
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn into_coefficients(self) -> Vec<f64> {
        self.coefficients
    }

    pub fn combine(&self, bp: &BasisPoint) -> PointValue {
        let mut value = 0.0;
        let mut gradient = Vector3::zeros();
        for ((&d, &v), g) in bp.dofs.iter().zip(&bp.values).zip(&bp.grads) {
            let c = self.coefficients[d];
            value += c * v;
            gradient += g * c;
        }
        PointValue { value, gradient }
    }

    /// Value and surface gradient at parameter `xi` of `patch`.
    pub fn eval(&self, patch: usize, xi: [f64; 2]) -> Result<PointValue, SpaceError> {
        Ok(self.combine(&self.space.basis_at(patch, xi)?))
    }

    /// Trace from one side of `edge` at left coordinate `t`.
    pub fn trace(&self, edge: &InterfaceEdge, side: EdgeSide, t: f64) -> Result<PointValue, SpaceError> {
        let eb = self.space.basis_on_edge(edge, side, t)?;
        Ok(self.combine(&eb.basis))
    }

    /// Both traces of the value at left coordinate `t`.
    pub fn edge_values(&self, edge: &InterfaceEdge, t: f64) -> Result<EdgePair<f64>, SpaceError> {
        let left = self.trace(edge, EdgeSide::Left, t)?.value;
        let right = match edge.right {
            Some(_) => Some(self.trace(edge, EdgeSide::Right, t)?.value),
            None => None,
        };
        Ok(EdgePair { left, right })
    }
}

/// Patchwise L2 projection of `field` into the space.
pub fn l2_projection<'a>(space: &'a DgSpace, field: &ScalarField) -> Result<DiscreteFunction<'a>, SpaceError> {
    let rule = QuadRule::reference(space.degree() + 2)?;
    let mut coefficients = vec![0.0; space.total_dofs()];
    for (pi, patch) in space.surface().patches().iter().enumerate() {
        let range = space.patch_dofs(pi);
        let offset = range.start;
        let n = range.len();
        let mut triplets = Vec::new();
        let mut rhs = vec![0.0; n];
        for el in patch.elements() {
            for (xi, w) in element_rule(&rule, el.span_u, el.span_v) {
                let bp = space.basis_at(pi, xi)?;
                let dw = w * bp.sqrt_det_g;
                let f = field(&bp.point);
                for (&da, &va) in bp.dofs.iter().zip(&bp.values) {
                    rhs[da - offset] += f * va * dw;
                    for (&db, &vb) in bp.dofs.iter().zip(&bp.values) {
                        triplets.push((da - offset, db - offset, va * vb * dw));
                    }
                }
            }
        }
        let mass = CsrMatrix::from_triplets(n, &triplets);
        let opts = CgOptions {
            tol: 1e-14,
            ..CgOptions::default()
        };
        let (x, rep) = cg_solve(&mass, &rhs, &opts)?;
        if !rep.converged && rep.final_relative_residual > 1e-11 {
            return Err(SpaceError::ProjectionFailed(rep.final_relative_residual));
        }
        coefficients[range].copy_from_slice(&x);
    }
    DiscreteFunction::new(space, coefficients)
}
