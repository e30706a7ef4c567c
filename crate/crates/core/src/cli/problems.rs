//! Manufactured problems, either built in or given as expressions in x, y, z.

use std::f64::consts::PI;
use std::sync::Arc;

use exmex::prelude::*;
use nalgebra::Vector3;
use thiserror::Error;

use crate::assembly::{AssemblyError, ExactSolution, ProblemData};
use crate::space::{ScalarField, SurfacePoint, VectorField};

pub const BUILTIN_PROBLEMS: [&str; 3] = ["plane_sine", "cylinder_sine", "interface_sine"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemError {
    #[error("unknown problem `{0}`; available: {list}", list = BUILTIN_PROBLEMS.join(", "))]
    Unknown(String),
    #[error("expression for `{key}`: {message}")]
    Expression { key: String, message: String },
    #[error("expression problem needs `f=...`")]
    MissingSource,
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
}

fn tangential(v: Vector3<f64>, p: &SurfacePoint) -> Vector3<f64> {
    v - p.normal * p.normal.dot(&v)
}

/// `α ∇u · n` on the patch owning the point; zero away from patch sides.
fn conormal_flux(alpha: Arc<[f64]>, grad: VectorField) -> ScalarField {
    Arc::new(move |p: &SurfacePoint| match p.conormal {
        Some(n) => alpha[p.patch] * grad(p).dot(&n),
        None => 0.0,
    })
}

fn assemble_problem(alpha: &[f64], delta: f64, source: ScalarField, exact: ExactSolution) -> Result<ProblemData, ProblemError> {
    let neumann = conormal_flux(alpha.into(), exact.gradient.clone());
    Ok(ProblemData::new(source, exact.value.clone(), neumann, delta)?.with_exact(exact))
}

/// `u = sin(πx) sin(πy)`, `f = 2π² α u` on each patch.
pub fn plane_sine(alpha: &[f64], delta: f64) -> Result<ProblemData, ProblemError> {
    let u = |x: &Vector3<f64>| (PI * x.x).sin() * (PI * x.y).sin();
    let value: ScalarField = Arc::new(move |p: &SurfacePoint| u(&p.x));
    let gradient: VectorField = Arc::new(|p: &SurfacePoint| {
        let (sx, cx) = (PI * p.x.x).sin_cos();
        let (sy, cy) = (PI * p.x.y).sin_cos();
        tangential(Vector3::new(PI * cx * sy, PI * sx * cy, 0.0), p)
    });
    let a: Arc<[f64]> = alpha.into();
    let source: ScalarField = Arc::new(move |p: &SurfacePoint| a[p.patch] * 2.0 * PI * PI * u(&p.x));
    assemble_problem(alpha, delta, source, ExactSolution { value, gradient })
}

/// On the unit cylinder: `u = sin(θ) sin(πz)` with `θ = atan2(y, x)`, so that
/// `-Δ_Ω u = (1 + π²) u`.
pub fn cylinder_sine(alpha: &[f64], delta: f64) -> Result<ProblemData, ProblemError> {
    let u = |x: &Vector3<f64>| x.y.atan2(x.x).sin() * (PI * x.z).sin();
    let value: ScalarField = Arc::new(move |p: &SurfacePoint| u(&p.x));
    // gradient of the extension (y / r) sin(πz), already tangent on r = 1
    let gradient: VectorField = Arc::new(|p: &SurfacePoint| {
        let (x, y) = (p.x.x, p.x.y);
        let r = x.hypot(y);
        let (sz, cz) = (PI * p.x.z).sin_cos();
        let r3 = r * r * r;
        tangential(Vector3::new(-x * y / r3 * sz, x * x / r3 * sz, y / r * PI * cz), p)
    });
    let a: Arc<[f64]> = alpha.into();
    let source: ScalarField = Arc::new(move |p: &SurfacePoint| a[p.patch] * (1.0 + PI * PI) * u(&p.x));
    assemble_problem(alpha, delta, source, ExactSolution { value, gradient })
}

/// For piecewise-constant α on the four-patch unit square:
/// `u_i = sin(2πx) sin(2πy) / α_i`. The flux `α ∇u` is the same smooth field
/// on every patch and `u` vanishes on the patch lines x, y = 1/2, so the
/// solution is continuous with continuous flux for any α.
pub fn interface_sine(alpha: &[f64], delta: f64) -> Result<ProblemData, ProblemError> {
    let a: Arc<[f64]> = alpha.into();
    let s = |x: &Vector3<f64>| (2.0 * PI * x.x).sin() * (2.0 * PI * x.y).sin();
    let av = a.clone();
    let value: ScalarField = Arc::new(move |p: &SurfacePoint| s(&p.x) / av[p.patch]);
    let ag = a.clone();
    let gradient: VectorField = Arc::new(move |p: &SurfacePoint| {
        let (sx, cx) = (2.0 * PI * p.x.x).sin_cos();
        let (sy, cy) = (2.0 * PI * p.x.y).sin_cos();
        tangential(Vector3::new(cx * sy, sx * cy, 0.0) * (2.0 * PI / ag[p.patch]), p)
    });
    let source: ScalarField = Arc::new(move |p: &SurfacePoint| 8.0 * PI * PI * s(&p.x));
    assemble_problem(alpha, delta, source, ExactSolution { value, gradient })
}

pub fn builtin_problem(name: &str, alpha: &[f64], delta: f64) -> Result<ProblemData, ProblemError> {
    match name {
        "plane_sine" => plane_sine(alpha, delta),
        "cylinder_sine" => cylinder_sine(alpha, delta),
        "interface_sine" => interface_sine(alpha, delta),
        _ => Err(ProblemError::Unknown(name.to_string())),
    }
}

/// A parsed expression in the variables x, y, z.
#[derive(Clone)]
struct Expr {
    flat: FlatEx<f64>,
    /// Coordinate index for each variable of `flat`, in its order.
    slots: Vec<usize>,
}

impl Expr {
    fn parse(key: &str, text: &str) -> Result<Self, ProblemError> {
        let err = |message: String| ProblemError::Expression {
            key: key.to_string(),
            message,
        };
        let flat = exmex::parse::<f64>(&translate_constants(text)).map_err(|e| err(e.to_string()))?;
        let slots = flat
            .var_names()
            .iter()
            .map(|v| match v.as_str() {
                "x" => Ok(0),
                "y" => Ok(1),
                "z" => Ok(2),
                other => Err(err(format!("unknown variable `{other}` (only x, y, z are allowed)"))),
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { flat, slots })
    }

    fn eval(&self, x: &Vector3<f64>) -> f64 {
        let vals: Vec<f64> = self.slots.iter().map(|&i| x[i]).collect();
        self.flat.eval(&vals).unwrap_or(f64::NAN)
    }

    /// Central differences of the extension, projected on the tangent plane.
    fn gradient(&self, p: &SurfacePoint) -> Vector3<f64> {
        let mut g = Vector3::zeros();
        for i in 0..3 {
            let h = 1e-6 * (1.0 + p.x[i].abs());
            let mut a = p.x;
            let mut b = p.x;
            a[i] += h;
            b[i] -= h;
            g[i] = (self.eval(&a) - self.eval(&b)) / (2.0 * h);
        }
        tangential(g, p)
    }
}

/// The expression engine spells the circle constant `PI`.
fn translate_constants(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut String| {
        out.push_str(if word == "pi" { "PI" } else { word });
        word.clear();
    };
    for c in text.chars() {
        if c.is_alphanumeric() || c == '_' {
            word.push(c);
        } else {
            flush(&mut word, &mut out);
            out.push(c);
        }
    }
    flush(&mut word, &mut out);
    out
}

/// Parse `u=...;f=...;gd=...;gn=...`. Only `f` is required. `gd` defaults to
/// `u` (or 0), `gn` to `α ∇u · n` (or 0); without `u` there is no exact
/// solution to measure errors against.
pub fn expression_problem(spec: &str, alpha: &[f64], delta: f64) -> Result<ProblemData, ProblemError> {
    let (mut u, mut f, mut gd, mut gn) = (None, None, None, None);
    for part in spec.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let Some((key, text)) = part.split_once('=') else {
            return Err(ProblemError::Expression {
                key: part.to_string(),
                message: "expected `key=expression`".into(),
            });
        };
        let key = key.trim();
        let slot = match key {
            "u" => &mut u,
            "f" => &mut f,
            "gd" => &mut gd,
            "gn" => &mut gn,
            _ => {
                return Err(ProblemError::Expression {
                    key: key.to_string(),
                    message: "unknown key (expected u, f, gd or gn)".into(),
                })
            }
        };
        *slot = Some(Arc::new(Expr::parse(key, text)?));
    }
    let f = f.ok_or(ProblemError::MissingSource)?;
    let to_field = |e: Arc<Expr>| -> ScalarField { Arc::new(move |p: &SurfacePoint| e.eval(&p.x)) };
    let zero: ScalarField = Arc::new(|_: &SurfacePoint| 0.0);

    let exact = u.clone().map(|e| {
        let g = e.clone();
        ExactSolution {
            value: to_field(e),
            gradient: Arc::new(move |p: &SurfacePoint| g.gradient(p)),
        }
    });
    let dirichlet = match (gd, &exact) {
        (Some(e), _) => to_field(e),
        (None, Some(ex)) => ex.value.clone(),
        (None, None) => zero.clone(),
    };
    let neumann = match (gn, &exact) {
        (Some(e), _) => to_field(e),
        (None, Some(ex)) => conormal_flux(alpha.into(), ex.gradient.clone()),
        (None, None) => zero,
    };
    let data = ProblemData::new(to_field(f), dirichlet, neumann, delta)?;
    Ok(match exact {
        Some(ex) => data.with_exact(ex),
        None => data,
    })
}

/// A built-in name, or an expression list when the argument contains `=`.
pub fn resolve_problem(spec: &str, alpha: &[f64], delta: f64) -> Result<ProblemData, ProblemError> {
    if spec.contains('=') {
        expression_problem(spec, alpha, delta)
    } else {
        builtin_problem(spec.trim(), alpha, delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn planar(patch: usize, x: f64, y: f64) -> SurfacePoint {
        SurfacePoint {
            patch,
            param: [0.0, 0.0],
            x: Vector3::new(x, y, 0.0),
            normal: Vector3::z(),
            conormal: None,
        }
    }

    fn on_cylinder(theta: f64, z: f64) -> SurfacePoint {
        SurfacePoint {
            patch: 0,
            param: [0.0, 0.0],
            x: Vector3::new(theta.cos(), theta.sin(), z),
            normal: Vector3::new(theta.cos(), theta.sin(), 0.0),
            conormal: None,
        }
    }

    #[test]
    fn plane_sine_peak() {
        let d = plane_sine(&[1.0], 12.0).unwrap();
        let p = planar(0, 0.5, 0.5);
        assert!(((d.exact.unwrap().value)(&p) - 1.0).abs() < 1e-15);
        assert!(((d.source)(&p) - 2.0 * PI * PI).abs() < 1e-12);
    }

    #[test]
    fn cylinder_seam_is_homogeneous() {
        let d = cylinder_sine(&[1.0], 24.0).unwrap();
        for z in [0.1, 0.4, 0.9] {
            assert_eq!((d.dirichlet)(&on_cylinder(0.0, z)), 0.0);
        }
    }

    #[test]
    fn cylinder_source_matches_laplace_beltrami_by_differences() {
        // On the unit cylinder Δ_Ω u = u_θθ + u_zz in (θ, z).
        let d = cylinder_sine(&[1.0], 24.0).unwrap();
        let u = d.exact.clone().unwrap().value;
        let eval = |t: f64, z: f64| u(&on_cylinder(t, z));
        let mut rng = StdRng::seed_from_u64(20);
        let h = 1e-4;
        for _ in 0..20 {
            let t = rng.gen_range(0.1..1.4);
            let z = rng.gen_range(0.1..0.9);
            let c = eval(t, z);
            let lap = (eval(t + h, z) - 2.0 * c + eval(t - h, z)) / (h * h)
                + (eval(t, z + h) - 2.0 * c + eval(t, z - h)) / (h * h);
            let f = (d.source)(&on_cylinder(t, z));
            assert!((f + lap).abs() < 1e-5 * (1.0 + f.abs()), "f = {f}, -lap = {}", -lap);
        }
    }

    #[test]
    fn cylinder_gradient_matches_parametric_derivatives() {
        let d = cylinder_sine(&[1.0], 24.0).unwrap();
        let ex = d.exact.unwrap();
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..20 {
            let (t, z) = (rng.gen_range(0.0..1.5), rng.gen_range(0.0..1.0));
            let p = on_cylinder(t, z);
            let g = (ex.gradient)(&p);
            let e_theta = Vector3::new(-t.sin(), t.cos(), 0.0);
            assert!((g.dot(&e_theta) - t.cos() * (PI * z).sin()).abs() < 1e-13);
            assert!((g.z - t.sin() * PI * (PI * z).cos()).abs() < 1e-13);
            assert!(g.dot(&p.normal).abs() < 1e-14);
        }
    }

    #[test]
    fn interface_flux_is_patch_independent() {
        let d = interface_sine(&[1.0, 1e4, 1e4, 1.0], 24.0).unwrap();
        let ex = d.exact.unwrap();
        let (a, b) = (planar(0, 0.5, 0.3), planar(1, 0.5, 0.3));
        let fa = (ex.gradient)(&a) * 1.0;
        let fb = (ex.gradient)(&b) * 1e4;
        assert!((fa - fb).norm() < 1e-10);
        assert!((ex.value)(&a).abs() < 1e-15 && (ex.value)(&b).abs() < 1e-15);
    }

    #[test]
    fn unknown_name_lists_cases() {
        let err = builtin_problem("nope", &[1.0], 12.0).unwrap_err();
        let msg = err.to_string();
        for name in BUILTIN_PROBLEMS {
            assert!(msg.contains(name), "{msg}");
        }
    }

    #[test]
    fn expressions_match_builtin() {
        let e = expression_problem("u = sin(pi*x)*sin(pi*y); f = 2*pi^2*sin(pi*x)*sin(pi*y)", &[1.0], 12.0).unwrap();
        let b = plane_sine(&[1.0], 12.0).unwrap();
        let mut p = planar(0, 0.3, 0.8);
        p.conormal = Some(Vector3::new(1.0, 0.0, 0.0));
        assert!(((e.source)(&p) - (b.source)(&p)).abs() < 1e-12);
        assert!(((e.dirichlet)(&p) - (b.dirichlet)(&p)).abs() < 1e-14);
        assert!(((e.neumann)(&p) - (b.neumann)(&p)).abs() < 1e-7);
        let (ge, gb) = ((e.exact.unwrap().gradient)(&p), (b.exact.unwrap().gradient)(&p));
        assert!((ge - gb).norm() < 1e-7);
    }

    #[test]
    fn expression_supports_atan2_and_exp() {
        let e = expression_problem("f = atan2(y, x) + exp(z)", &[1.0], 12.0).unwrap();
        let p = on_cylinder(0.7, 0.0);
        assert!(((e.source)(&p) - 1.7).abs() < 1e-14);
        assert!(e.exact.is_none());
        assert_eq!((e.dirichlet)(&p), 0.0);
    }

    #[test]
    fn expression_errors() {
        assert_eq!(expression_problem("u = x", &[1.0], 12.0).unwrap_err(), ProblemError::MissingSource);
        assert!(matches!(
            expression_problem("f = x + w", &[1.0], 12.0),
            Err(ProblemError::Expression { .. })
        ));
        assert!(matches!(expression_problem("f = sin(", &[1.0], 12.0), Err(ProblemError::Expression { .. })));
        assert!(matches!(expression_problem("q = 1; f = 1", &[1.0], 12.0), Err(ProblemError::Expression { .. })));
        assert_eq!(translate_constants("pi*sin(pi2 + pi)"), "PI*sin(pi2 + PI)");
    }
}
