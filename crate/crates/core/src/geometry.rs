//! NURBS patch maps into R^3, surface frames, conormals and multi-patch topology.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, Matrix2, Matrix3x2, Vector2, Vector3};
use thiserror::Error;

use crate::splines::{KnotVector, NurbsBasis2D, NurbsEval, SplineError};

/// Smallest admissible `det(g)` of the first fundamental form.
pub const DET_TOLERANCE: f64 = 1e-14;
/// Default tolerance for pairing patch sides by sampling.
pub const MATCH_TOLERANCE: f64 = 1e-8;
const MATCH_SAMPLES: [f64; 5] = [0.0, 0.2, 0.5, 0.7, 1.0];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error("patch {patch}: control net has {got} points, basis needs {expected}")]
    ControlNetMismatch {
        patch: usize,
        got: usize,
        expected: usize,
    },
    #[error("patch {patch}: singular parameterization at xi = ({}, {})", xi[0], xi[1])]
    Singular { patch: usize, xi: [f64; 2] },
    #[error("patch {patch}: degenerate edge tangent on {side} side at t = {t}")]
    DegenerateEdge { patch: usize, side: Side, t: f64 },
    #[error("topology error: {0}")]
    Topology(String),
    #[error("non-matching meshes unsupported: patch {left} {left_side} and patch {right} {right_side} have different knot vectors")]
    NonMatchingMesh {
        left: usize,
        left_side: Side,
        right: usize,
        right_side: Side,
    },
    #[error("patch {patch}: diffusion coefficient {alpha} must be positive")]
    InvalidAlpha { patch: usize, alpha: f64 },
}

/// Side of the parameter square.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Side {
    /// xi1 = 0
    West,
    /// xi1 = 1
    East,
    /// xi2 = 0
    South,
    /// xi2 = 1
    North,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::West, Side::East, Side::South, Side::North];

    /// Parametric direction the side runs along (0 for xi1, 1 for xi2).
    pub fn running_axis(self) -> usize {
        match self {
            Side::West | Side::East => 1,
            Side::South | Side::North => 0,
        }
    }

    /// Parameter point on this side at edge coordinate `t`.
    pub fn param(self, t: f64) -> [f64; 2] {
        match self {
            Side::West => [0.0, t],
            Side::East => [1.0, t],
            Side::South => [t, 0.0],
            Side::North => [t, 1.0],
        }
    }

    /// Outward direction in the parameter square.
    pub fn outward(self) -> Vector2<f64> {
        match self {
            Side::West => Vector2::new(-1.0, 0.0),
            Side::East => Vector2::new(1.0, 0.0),
            Side::South => Vector2::new(0.0, -1.0),
            Side::North => Vector2::new(0.0, 1.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::West => "west",
            Side::East => "east",
            Side::South => "south",
            Side::North => "north",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|side| side.name() == s)
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Pullback data at one parameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceFrame {
    pub point: Vector3<f64>,
    pub jacobian: Matrix3x2<f64>,
    pub metric: Matrix2<f64>,
    pub inv_metric: Matrix2<f64>,
    pub sqrt_det_g: f64,
}

impl SurfaceFrame {
    /// Tangential gradient `J g^{-1} grad` of a function with parametric gradient `grad`.
    pub fn surface_gradient(&self, grad: Vector2<f64>) -> Vector3<f64> {
        self.jacobian * (self.inv_metric * grad)
    }

    /// Unit surface normal `J_1 x J_2 / |J_1 x J_2|`.
    pub fn normal(&self) -> Vector3<f64> {
        self.jacobian.column(0).cross(&self.jacobian.column(1)).normalize()
    }
}

/// One patch `G: [0,1]^2 -> R^3`.
#[derive(Debug, Clone, PartialEq)]
pub struct NurbsPatch {
    id: usize,
    basis: NurbsBasis2D,
    control_points: Vec<Vector3<f64>>,
}

/// A knot-span box of one patch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Element {
    pub span_u: (f64, f64),
    pub span_v: (f64, f64),
}

impl NurbsPatch {
    pub fn new(id: usize, basis: NurbsBasis2D, control_points: Vec<Vector3<f64>>) -> Result<Self, GeometryError> {
        if control_points.len() != basis.len() {
            return Err(GeometryError::ControlNetMismatch {
                patch: id,
                got: control_points.len(),
                expected: basis.len(),
            });
        }
        Ok(Self {
            id,
            basis,
            control_points,
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn basis(&self) -> &NurbsBasis2D {
        &self.basis
    }

    pub fn control_points(&self) -> &[Vector3<f64>] {
        &self.control_points
    }

    pub fn degree(&self) -> (usize, usize) {
        (self.basis.basis_u().degree(), self.basis.basis_v().degree())
    }

    /// Knot vector along parametric direction `axis`.
    pub fn knots(&self, axis: usize) -> &KnotVector {
        if axis == 0 {
            self.basis.basis_u()
        } else {
            self.basis.basis_v()
        }
    }

    pub fn point(&self, xi: [f64; 2]) -> Result<Vector3<f64>, GeometryError> {
        let e = self.basis.eval(xi)?;
        Ok(e.indices
            .iter()
            .zip(&e.values)
            .map(|(&k, &v)| self.control_points[k] * v)
            .sum())
    }

    /// Frame built from an already evaluated basis at `xi`.
    pub fn frame_from_eval(&self, eval: &NurbsEval, xi: [f64; 2]) -> Result<SurfaceFrame, GeometryError> {
        let mut point = Vector3::zeros();
        let mut jacobian = Matrix3x2::zeros();
        for ((&k, &v), g) in eval.indices.iter().zip(&eval.values).zip(&eval.grads) {
            let cp = &self.control_points[k];
            point += cp * v;
            jacobian.column_mut(0).axpy(g[0], cp, 1.0);
            jacobian.column_mut(1).axpy(g[1], cp, 1.0);
        }
        let metric = jacobian.transpose() * jacobian;
        let det = metric.determinant();
        if !(det > DET_TOLERANCE) {
            return Err(GeometryError::Singular { patch: self.id, xi });
        }
        let inv_metric = Matrix2::new(metric[(1, 1)], -metric[(0, 1)], -metric[(1, 0)], metric[(0, 0)]) / det;
        Ok(SurfaceFrame {
            point,
            jacobian,
            metric,
            inv_metric,
            sqrt_det_g: det.sqrt(),
        })
    }

    pub fn frame_at(&self, xi: [f64; 2]) -> Result<SurfaceFrame, GeometryError> {
        let e = self.basis.eval(xi)?;
        self.frame_from_eval(&e, xi)
    }

    /// Basis evaluation and frame in one pass.
    pub fn eval(&self, xi: [f64; 2]) -> Result<(NurbsEval, SurfaceFrame), GeometryError> {
        let e = self.basis.eval(xi)?;
        let frame = self.frame_from_eval(&e, xi)?;
        Ok((e, frame))
    }

    /// Outward unit conormal on `side` at edge coordinate `t`: tangent to the
    /// surface, orthogonal to the edge.
    pub fn conormal_at(&self, side: Side, t: f64) -> Result<Vector3<f64>, GeometryError> {
        let frame = self.frame_at(side.param(t))?;
        self.conormal_from_frame(&frame, side, t)
    }

    pub fn conormal_from_frame(&self, frame: &SurfaceFrame, side: Side, t: f64) -> Result<Vector3<f64>, GeometryError> {
        let tangent: Vector3<f64> = frame.jacobian.column(side.running_axis()).into();
        let len = tangent.norm();
        if len <= 1e-14 {
            return Err(GeometryError::DegenerateEdge {
                patch: self.id,
                side,
                t,
            });
        }
        let mut n = (tangent / len).cross(&frame.normal());
        let pushed = frame.jacobian * side.outward();
        if n.dot(&pushed) < 0.0 {
            n = -n;
        }
        Ok(n.normalize())
    }

    /// Elements in lexicographic order, first direction fastest.
    pub fn elements(&self) -> Vec<Element> {
        let su = self.basis.basis_u().spans();
        let sv = self.basis.basis_v().spans();
        sv.iter()
            .flat_map(|&v| su.iter().map(move |&u| Element { span_u: u, span_v: v }))
            .collect()
    }

    /// Largest distance among the four mapped element corners.
    pub fn mesh_size(&self, element: &Element) -> Result<f64, GeometryError> {
        let (a, b) = element.span_u;
        let (c, d) = element.span_v;
        let corners = [
            self.point([a, c])?,
            self.point([b, c])?,
            self.point([a, d])?,
            self.point([b, d])?,
        ];
        let mut h: f64 = 0.0;
        for i in 0..4 {
            for j in i + 1..4 {
                h = h.max((corners[i] - corners[j]).norm());
            }
        }
        Ok(h)
    }

    /// Physical chord of the span `(a, b)` along `side`.
    pub fn edge_mesh_size(&self, side: Side, span: (f64, f64)) -> Result<f64, GeometryError> {
        Ok((self.point(side.param(span.1))? - self.point(side.param(span.0))?).norm())
    }

    /// Insert knots in both directions, reproducing the same surface.
    pub fn refine(&self, new_u: &[f64], new_v: &[f64]) -> Result<Self, GeometryError> {
        let ru = self.basis.basis_u().insert_knots(new_u)?;
        let rv = self.basis.basis_v().insert_knots(new_v)?;
        let (n1, n2) = self.basis.dims();
        let (m1, m2) = (ru.knots.num_basis(), rv.knots.num_basis());
        // homogeneous coordinates (w x, w y, w z, w)
        let mut hom: [DMatrix<f64>; 4] = std::array::from_fn(|_| DMatrix::zeros(n1, n2));
        for k2 in 0..n2 {
            for k1 in 0..n1 {
                let idx = k2 * n1 + k1;
                let w = self.basis.weights()[idx];
                let p = self.control_points[idx];
                hom[0][(k1, k2)] = w * p.x;
                hom[1][(k1, k2)] = w * p.y;
                hom[2][(k1, k2)] = w * p.z;
                hom[3][(k1, k2)] = w;
            }
        }
        let rvt = rv.matrix.transpose();
        let fine: Vec<DMatrix<f64>> = hom.iter().map(|h| &ru.matrix * h * &rvt).collect();
        let mut weights = Vec::with_capacity(m1 * m2);
        let mut points = Vec::with_capacity(m1 * m2);
        for k2 in 0..m2 {
            for k1 in 0..m1 {
                let w = fine[3][(k1, k2)];
                weights.push(w);
                points.push(Vector3::new(fine[0][(k1, k2)], fine[1][(k1, k2)], fine[2][(k1, k2)]) / w);
            }
        }
        let basis = NurbsBasis2D::new(ru.knots, rv.knots, weights)?;
        Self::new(self.id, basis, points)
    }

    /// Global midpoint refinement in both directions.
    pub fn refine_uniform(&self) -> Result<Self, GeometryError> {
        self.refine(&self.basis.basis_u().midpoints(), &self.basis.basis_v().midpoints())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SideRef {
    pub patch: usize,
    pub side: Side,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeKind {
    Interior,
    Dirichlet,
    Neumann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
}

impl From<BoundaryKind> for EdgeKind {
    fn from(k: BoundaryKind) -> Self {
        match k {
            BoundaryKind::Dirichlet => EdgeKind::Dirichlet,
            BoundaryKind::Neumann => EdgeKind::Neumann,
        }
    }
}

/// Which trace of an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeSide {
    Left,
    Right,
}

/// A whole patch side seen as one edge `γ`, subdivided into edge elements by
/// the knot spans of the left side.
#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceEdge {
    pub kind: EdgeKind,
    pub left: SideRef,
    pub right: Option<SideRef>,
    /// The right side runs with `t -> 1 - t` relative to the left.
    pub orientation_flip: bool,
}

impl InterfaceEdge {
    pub fn side_ref(&self, side: EdgeSide) -> Option<SideRef> {
        match side {
            EdgeSide::Left => Some(self.left),
            EdgeSide::Right => self.right,
        }
    }

    /// Edge coordinate on `side` corresponding to the left coordinate `t`.
    pub fn side_coordinate(&self, side: EdgeSide, t: f64) -> f64 {
        match side {
            EdgeSide::Right if self.orientation_flip => 1.0 - t,
            _ => t,
        }
    }
}

/// Boundary tags for patch sides that are not interfaces.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundaryTags {
    pub sides: BTreeMap<SideRef, BoundaryKind>,
    /// Kind given to every unmatched, untagged side.
    pub default: Option<BoundaryKind>,
}

impl BoundaryTags {
    pub fn all(kind: BoundaryKind) -> Self {
        Self {
            sides: BTreeMap::new(),
            default: Some(kind),
        }
    }

    pub fn set(&mut self, patch: usize, side: Side, kind: BoundaryKind) -> &mut Self {
        self.sides.insert(SideRef { patch, side }, kind);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EdgeCounts {
    pub interior: usize,
    pub dirichlet: usize,
    pub neumann: usize,
}

/// Patches together with interface topology and patchwise diffusion coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiPatchSurface {
    patches: Vec<NurbsPatch>,
    edges: Vec<InterfaceEdge>,
    alpha: Vec<f64>,
}

impl MultiPatchSurface {
    pub fn patches(&self) -> &[NurbsPatch] {
        &self.patches
    }

    pub fn patch(&self, i: usize) -> &NurbsPatch {
        &self.patches[i]
    }

    pub fn edges(&self) -> &[InterfaceEdge] {
        &self.edges
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Copy with replaced diffusion coefficients.
    pub fn with_alpha(&self, alpha: Vec<f64>) -> Result<Self, GeometryError> {
        check_alpha(&alpha, self.patches.len())?;
        Ok(Self {
            alpha,
            ..self.clone()
        })
    }

    pub fn edge_counts(&self) -> EdgeCounts {
        let mut c = EdgeCounts::default();
        for e in &self.edges {
            match e.kind {
                EdgeKind::Interior => c.interior += 1,
                EdgeKind::Dirichlet => c.dirichlet += 1,
                EdgeKind::Neumann => c.neumann += 1,
            }
        }
        c
    }

    /// Edge elements of `edge` as spans of the left side's coordinate.
    pub fn edge_spans(&self, edge: &InterfaceEdge) -> Vec<(f64, f64)> {
        self.patches[edge.left.patch].knots(edge.left.side.running_axis()).spans()
    }

    /// Physical chord of an edge element.
    pub fn edge_mesh_size(&self, edge: &InterfaceEdge, span: (f64, f64)) -> Result<f64, GeometryError> {
        self.patches[edge.left.patch].edge_mesh_size(edge.left.side, span)
    }

    /// Diffusion coefficient in the penalty of an edge: the larger of the two
    /// patch values across interfaces, the owning patch's value on the boundary.
    ///
    /// The flux average `{α∇u·n}` is unweighted, so it carries up to half the
    /// larger coefficient; a penalty scaled by the harmonic mean (about twice
    /// the smaller one) cannot control it once the contrast is large, and the
    /// form stops being coercive.
    pub fn edge_alpha(&self, edge: &InterfaceEdge) -> f64 {
        let al = self.alpha[edge.left.patch];
        match edge.right {
            Some(r) => al.max(self.alpha[r.patch]),
            None => al,
        }
    }

    pub fn h_max(&self) -> Result<f64, GeometryError> {
        let mut h: f64 = 0.0;
        for p in &self.patches {
            for e in p.elements() {
                h = h.max(p.mesh_size(&e)?);
            }
        }
        Ok(h)
    }

    /// Global midpoint refinement of every patch. Interfaces stay matched.
    pub fn refine_uniform(&self) -> Result<Self, GeometryError> {
        let patches = self
            .patches
            .iter()
            .map(NurbsPatch::refine_uniform)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            patches,
            edges: self.edges.clone(),
            alpha: self.alpha.clone(),
        })
    }

    /// Apply `refine_uniform` `levels` times.
    pub fn refined(&self, levels: usize) -> Result<Self, GeometryError> {
        let mut s = self.clone();
        for _ in 0..levels {
            s = s.refine_uniform()?;
        }
        Ok(s)
    }
}

fn check_alpha(alpha: &[f64], patches: usize) -> Result<(), GeometryError> {
    if alpha.len() != patches {
        return Err(GeometryError::Topology(format!(
            "{} diffusion coefficients for {patches} patches",
            alpha.len()
        )));
    }
    for (patch, &a) in alpha.iter().enumerate() {
        if !(a.is_finite() && a > 0.0) {
            return Err(GeometryError::InvalidAlpha { patch, alpha: a });
        }
    }
    Ok(())
}

/// Side points at the sample parameters `t` and at `1 - t`.
fn side_samples(patch: &NurbsPatch, side: Side) -> Result<[Vec<Vector3<f64>>; 2], GeometryError> {
    let at = |f: fn(f64) -> f64| -> Result<Vec<_>, GeometryError> {
        MATCH_SAMPLES.iter().map(|&t| patch.point(side.param(f(t)))).collect()
    };
    Ok([at(|t| t)?, at(|t| 1.0 - t)?])
}

/// Pair patch sides whose traced curves coincide and classify the rest by tag.
pub fn match_interfaces(
    patches: Vec<NurbsPatch>,
    alpha: Vec<f64>,
    tags: &BoundaryTags,
) -> Result<MultiPatchSurface, GeometryError> {
    match_interfaces_with_tolerance(patches, alpha, tags, MATCH_TOLERANCE)
}

pub fn match_interfaces_with_tolerance(
    patches: Vec<NurbsPatch>,
    alpha: Vec<f64>,
    tags: &BoundaryTags,
    tolerance: f64,
) -> Result<MultiPatchSurface, GeometryError> {
    check_alpha(&alpha, patches.len())?;
    for (i, p) in patches.iter().enumerate() {
        if p.id() != i {
            return Err(GeometryError::Topology(format!("patch at position {i} has id {}", p.id())));
        }
    }
    for r in tags.sides.keys() {
        if r.patch >= patches.len() {
            return Err(GeometryError::Topology(format!("tag references missing patch {}", r.patch)));
        }
    }
    let sides: Vec<SideRef> = (0..patches.len())
        .flat_map(|patch| Side::ALL.into_iter().map(move |side| SideRef { patch, side }))
        .collect();
    let samples = sides
        .iter()
        .map(|r| side_samples(&patches[r.patch], r.side))
        .collect::<Result<Vec<_>, _>>()?;

    let close = |a: &[Vec<Vector3<f64>>; 2], b: &[Vec<Vector3<f64>>; 2], flip: bool| {
        let b = &b[usize::from(flip)];
        a[0].iter().zip(b).all(|(p, q)| (p - q).norm() <= tolerance)
    };

    let mut partner: Vec<Option<(usize, bool)>> = vec![None; sides.len()];
    for i in 0..sides.len() {
        if partner[i].is_some() || tags.sides.contains_key(&sides[i]) {
            continue;
        }
        for j in i + 1..sides.len() {
            if partner[j].is_some() || tags.sides.contains_key(&sides[j]) {
                continue;
            }
            let flip = if close(&samples[i], &samples[j], false) {
                false
            } else if close(&samples[i], &samples[j], true) {
                true
            } else {
                continue;
            };
            let (l, r) = (sides[i], sides[j]);
            let kl = patches[l.patch].knots(l.side.running_axis());
            let kr = patches[r.patch].knots(r.side.running_axis());
            let kr = if flip { kr.reversed() } else { kr.clone() };
            if !kl.approx_eq(&kr) {
                return Err(GeometryError::NonMatchingMesh {
                    left: l.patch,
                    left_side: l.side,
                    right: r.patch,
                    right_side: r.side,
                });
            }
            partner[i] = Some((j, flip));
            partner[j] = Some((i, flip));
            break;
        }
    }

    let mut edges = Vec::new();
    for (i, r) in sides.iter().enumerate() {
        match partner[i] {
            Some((j, flip)) if j > i => edges.push(InterfaceEdge {
                kind: EdgeKind::Interior,
                left: *r,
                right: Some(sides[j]),
                orientation_flip: flip,
            }),
            Some(_) => {}
            None => {
                let kind = tags.sides.get(r).copied().or(tags.default).ok_or_else(|| {
                    GeometryError::Topology(format!(
                        "patch {} {} side matches no other side and carries no boundary tag",
                        r.patch, r.side
                    ))
                })?;
                edges.push(InterfaceEdge {
                    kind: kind.into(),
                    left: *r,
                    right: None,
                    orientation_flip: false,
                });
            }
        }
    }
    Ok(MultiPatchSurface {
        patches,
        edges,
        alpha,
    })
}
