//! Gauss–Legendre rules on intervals, knot-span elements and element edges.

use thiserror::Error;

pub const MAX_POINTS: usize = 30;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadratureError {
    #[error("unsupported Gauss-Legendre order {0} (supported: 1..={MAX_POINTS})")]
    UnsupportedOrder(usize),
    #[error("empty interval [{0}, {1}]")]
    EmptyInterval(f64, f64),
}

/// Nodes and weights on an interval.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadRule {
    /// Gauss–Legendre rule with `q` points on `[-1, 1]`.
    pub fn reference(q: usize) -> Result<Self, QuadratureError> {
        if q == 0 || q > MAX_POINTS {
            return Err(QuadratureError::UnsupportedOrder(q));
        }
        let mut points = vec![0.0; q];
        let mut weights = vec![0.0; q];
        let half = q.div_ceil(2);
        for i in 0..half {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (q as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(q, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() <= 1e-15 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(q, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            points[i] = -x;
            points[q - 1 - i] = x;
            weights[i] = w;
            weights[q - 1 - i] = w;
        }
        if q % 2 == 1 {
            points[q / 2] = 0.0;
        }
        Ok(Self { points, weights })
    }

    /// The rule affinely mapped from `[-1, 1]` to `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> Self {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        Self {
            points: self.points.iter().map(|x| mid + half * x).collect(),
            weights: self.weights.iter().map(|w| w * half).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.iter().map(|(x, w)| w * f(x)).sum()
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// `q`-point Gauss–Legendre rule on `[a, b]`.
pub fn gauss_on_interval(q: usize, a: f64, b: f64) -> Result<QuadRule, QuadratureError> {
    if !(a < b) {
        return Err(QuadratureError::EmptyInterval(a, b));
    }
    Ok(QuadRule::reference(q)?.mapped(a, b))
}

/// Tensor-product rule on the parametric box `span_u x span_v`.
pub fn element_rule(reference: &QuadRule, span_u: (f64, f64), span_v: (f64, f64)) -> Vec<([f64; 2], f64)> {
    let ru = reference.mapped(span_u.0, span_u.1);
    let rv = reference.mapped(span_v.0, span_v.1);
    let mut out = Vec::with_capacity(ru.len() * rv.len());
    for (y, wy) in rv.iter() {
        for (x, wx) in ru.iter() {
            out.push(([x, y], wx * wy));
        }
    }
    out
}

/// Rule on one edge element `span`.
pub fn edge_rule(reference: &QuadRule, span: (f64, f64)) -> QuadRule {
    reference.mapped(span.0, span.1)
}
