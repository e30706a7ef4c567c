//! Programmatic versions of the bundled test geometries.
//!
//! `data/square4*.g` and `data/qcyl4*.g` are serializations of these builders
//! (see `examples/write_bundled.rs`).

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Vector3, Vector4};

use crate::geometry::{match_interfaces, BoundaryKind, BoundaryTags, MultiPatchSurface, NurbsPatch};
use crate::splines::{KnotVector, NurbsBasis2D};

/// Polynomial patch mapping `[0,1]^2` affinely onto `x_range x y_range` (z = 0),
/// with `elements` uniform spans per direction.
pub fn affine_patch(id: usize, p: usize, elements: usize, x_range: [f64; 2], y_range: [f64; 2]) -> NurbsPatch {
    let ku = KnotVector::uniform(p, elements).expect("valid uniform knots");
    let kv = ku.clone();
    let gu = ku.greville();
    let gv = kv.greville();
    let mut cps = Vec::with_capacity(gu.len() * gv.len());
    for &v in &gv {
        for &u in &gu {
            cps.push(Vector3::new(
                x_range[0] + u * (x_range[1] - x_range[0]),
                y_range[0] + v * (y_range[1] - y_range[0]),
                0.0,
            ));
        }
    }
    NurbsPatch::new(id, NurbsBasis2D::polynomial(ku, kv), cps).expect("consistent control net")
}

/// Homogeneous Bezier control points of the unit-circle arc between two angles.
fn arc_bezier(p: usize, theta: [f64; 2]) -> Vec<Vector4<f64>> {
    assert!(p >= 2, "circular arcs need degree at least 2");
    let half = 0.5 * (theta[1] - theta[0]);
    let mid = 0.5 * (theta[0] + theta[1]);
    let w = half.cos();
    // The middle point sits at the tangent intersection, at radius 1/w, so its
    // homogeneous form w * P1 lands back on the unit circle.
    let mut q = vec![
        Vector4::new(theta[0].cos(), theta[0].sin(), 0.0, 1.0),
        Vector4::new(mid.cos(), mid.sin(), 0.0, w),
        Vector4::new(theta[1].cos(), theta[1].sin(), 0.0, 1.0),
    ];
    for n in 2..p {
        let mut r = Vec::with_capacity(n + 2);
        r.push(q[0]);
        for i in 1..=n {
            let a = i as f64 / (n + 1) as f64;
            r.push(q[i - 1] * a + q[i] * (1.0 - a));
        }
        r.push(q[n]);
        q = r;
    }
    q
}

/// Unit-radius cylinder piece over the angle range `theta` and height range
/// `z`, exact for every degree `p >= 2`, with `elements` uniform spans.
pub fn arc_patch(id: usize, p: usize, elements: usize, theta: [f64; 2], z: [f64; 2]) -> NurbsPatch {
    let arc = arc_bezier(p, theta);
    let ku = KnotVector::uniform(p, 1).expect("Bezier knots");
    let kv = KnotVector::uniform(p, elements).expect("uniform knots");
    let gv = kv.greville();
    let mut cps = Vec::new();
    let mut weights = Vec::new();
    for &v in &gv {
        for h in &arc {
            cps.push(Vector3::new(h.x / h.w, h.y / h.w, z[0] + v * (z[1] - z[0])));
            weights.push(h.w);
        }
    }
    let basis = NurbsBasis2D::new(ku, kv, weights).expect("positive weights");
    let patch = NurbsPatch::new(id, basis, cps).expect("consistent control net");
    let interior: Vec<f64> = (1..elements).map(|k| k as f64 / elements as f64).collect();
    patch.refine(&interior, &[]).expect("interior knots")
}

/// Quarter of the unit cylinder, `theta in [0, pi/2]`, `z in [0, 1]`, one element.
pub fn quarter_cylinder_patch(p: usize) -> NurbsPatch {
    arc_patch(0, p, 1, [0.0, FRAC_PI_2], [0.0, 1.0])
}

/// The unit square split into 2x2 patches, Dirichlet on the outer boundary.
/// Patch `2 j + i` covers `[i/2, (i+1)/2] x [j/2, (j+1)/2]`.
pub fn square4(p: usize, elements: usize) -> MultiPatchSurface {
    let mut patches = Vec::new();
    for j in 0..2 {
        for i in 0..2 {
            let (x, y) = (i as f64 * 0.5, j as f64 * 0.5);
            patches.push(affine_patch(2 * j + i, p, elements, [x, x + 0.5], [y, y + 0.5]));
        }
    }
    match_interfaces(patches, vec![1.0; 4], &BoundaryTags::all(BoundaryKind::Dirichlet)).expect("square topology")
}

/// Quarter unit cylinder split 2x2 in `(theta, z)`, Dirichlet on the outer boundary.
pub fn qcyl4(p: usize, elements: usize) -> MultiPatchSurface {
    let mut patches = Vec::new();
    for j in 0..2 {
        for i in 0..2 {
            let t = i as f64 * FRAC_PI_2 / 2.0;
            let z = j as f64 * 0.5;
            patches.push(arc_patch(2 * j + i, p, elements, [t, t + FRAC_PI_2 / 2.0], [z, z + 0.5]));
        }
    }
    match_interfaces(patches, vec![1.0; 4], &BoundaryTags::all(BoundaryKind::Dirichlet)).expect("cylinder topology")
}

/// File names and builders of the bundled geometries.
pub fn bundled_geometries() -> Vec<(&'static str, usize, MultiPatchSurface)> {
    vec![
        ("square4.g", 1, square4(1, 1)),
        ("square4_p2.g", 2, square4(2, 2)),
        ("square4_p3.g", 3, square4(3, 2)),
        ("qcyl4.g", 2, qcyl4(2, 2)),
        ("qcyl4_p3.g", 3, qcyl4(3, 2)),
    ]
}
