//! Univariate B-splines on open knot vectors and the bivariate tensor-product
//! NURBS basis built on top of them.
//!
//! Evaluation follows the triangular-table Cox–de Boor scheme: only the `p + 1`
//! functions that can be nonzero on the knot span containing the parameter are
//! computed. Interior knots are treated right-continuously and the parameter
//! `1.0` is evaluated in the final non-empty span.

use nalgebra::DMatrix;
use thiserror::Error;

/// Tolerance used when comparing knot values.
pub const KNOT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SplineError {
    #[error("invalid knot vector: {0}")]
    InvalidKnots(String),
    #[error("parameter {0} lies outside [0, 1]")]
    OutOfDomain(f64),
    #[error("inserting knot {knot} raises its multiplicity to {multiplicity}, above degree {degree}")]
    MultiplicityExceeded {
        knot: f64,
        multiplicity: usize,
        degree: usize,
    },
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
}

/// Open knot vector on `[0, 1]` together with its degree.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    degree: usize,
    knots: Vec<f64>,
}

/// Values and first derivatives of the `p + 1` possibly-nonzero B-splines at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisEval {
    pub first_active: usize,
    pub values: Vec<f64>,
    pub derivs: Vec<f64>,
}

/// Result of knot insertion: the refined knot vector and the matrix `R` with
/// `Q = R P` mapping old (homogeneous) control coefficients to new ones.
#[derive(Debug, Clone)]
pub struct Refinement {
    pub knots: KnotVector,
    pub matrix: DMatrix<f64>,
}

impl KnotVector {
    pub fn new(degree: usize, knots: Vec<f64>) -> Result<Self, SplineError> {
        let p = degree;
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(SplineError::InvalidKnots("non-finite knot".into()));
        }
        if knots.len() < 2 * (p + 1) {
            return Err(SplineError::InvalidKnots(format!(
                "{} knots is too few for degree {p} (need at least {})",
                knots.len(),
                2 * (p + 1)
            )));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(SplineError::InvalidKnots("knots must be non-decreasing".into()));
        }
        let m = knots.len();
        if knots[..=p].iter().any(|&k| k != 0.0) || knots[m - p - 1..].iter().any(|&k| k != 1.0) {
            return Err(SplineError::InvalidKnots(format!(
                "knot vector must be open on [0, 1] (first and last {} knots equal to 0 and 1)",
                p + 1
            )));
        }
        let interior = &knots[p + 1..m - p - 1];
        if interior.iter().any(|&k| k <= 0.0 || k >= 1.0) {
            return Err(SplineError::InvalidKnots(
                "interior knots must lie strictly inside (0, 1)".into(),
            ));
        }
        let kv = Self { degree, knots };
        for (knot, mult) in kv.interior_multiplicities() {
            if mult > p {
                return Err(SplineError::MultiplicityExceeded {
                    knot,
                    multiplicity: mult,
                    degree: p,
                });
            }
        }
        Ok(kv)
    }

    /// Open knot vector with `elements` uniform spans.
    pub fn uniform(degree: usize, elements: usize) -> Result<Self, SplineError> {
        let elements = elements.max(1);
        let mut knots = vec![0.0; degree + 1];
        knots.extend((1..elements).map(|i| i as f64 / elements as f64));
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        Self::new(degree, knots)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn num_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    fn interior_multiplicities(&self) -> Vec<(f64, usize)> {
        let p = self.degree;
        let interior = &self.knots[p + 1..self.knots.len() - p - 1];
        let mut out: Vec<(f64, usize)> = Vec::new();
        for &k in interior {
            match out.last_mut() {
                Some((v, m)) if (*v - k).abs() <= KNOT_EPS => *m += 1,
                _ => out.push((k, 1)),
            }
        }
        out
    }

    /// Non-empty knot spans `(a, b)` in increasing order.
    pub fn spans(&self) -> Vec<(f64, f64)> {
        self.knots
            .windows(2)
            .filter(|w| w[1] - w[0] > KNOT_EPS)
            .map(|w| (w[0], w[1]))
            .collect()
    }

    pub fn num_elements(&self) -> usize {
        self.spans().len()
    }

    /// Midpoints of every non-empty span.
    pub fn midpoints(&self) -> Vec<f64> {
        self.spans().into_iter().map(|(a, b)| 0.5 * (a + b)).collect()
    }

    /// Greville abscissae, one per basis function.
    pub fn greville(&self) -> Vec<f64> {
        let p = self.degree;
        if p == 0 {
            return self.spans().iter().map(|(a, b)| 0.5 * (a + b)).collect();
        }
        (0..self.num_basis())
            .map(|i| self.knots[i + 1..=i + p].iter().sum::<f64>() / p as f64)
            .collect()
    }

    /// The knot vector of the reversed parameterization `xi -> 1 - xi`.
    pub fn reversed(&self) -> Self {
        let knots = self.knots.iter().rev().map(|k| 1.0 - k).collect();
        Self {
            degree: self.degree,
            knots,
        }
    }

    /// Knot vectors describe the same mesh (same degree and knots within tolerance).
    pub fn approx_eq(&self, other: &Self) -> bool {
        self.degree == other.degree
            && self.knots.len() == other.knots.len()
            && self
                .knots
                .iter()
                .zip(&other.knots)
                .all(|(a, b)| (a - b).abs() <= KNOT_EPS)
    }

    /// Index `s` of the span `[knots[s], knots[s+1])` containing `xi`.
    pub fn find_span(&self, xi: f64) -> Result<usize, SplineError> {
        if !(0.0..=1.0).contains(&xi) {
            return Err(SplineError::OutOfDomain(xi));
        }
        let n = self.num_basis();
        let p = self.degree;
        if xi >= self.knots[n] {
            return Ok(n - 1);
        }
        let s = self.knots.partition_point(|&k| k <= xi);
        Ok(s.saturating_sub(1).clamp(p, n - 1))
    }

    /// Values and first derivatives of the active basis functions at `xi`.
    pub fn eval(&self, xi: f64) -> Result<BasisEval, SplineError> {
        let span = self.find_span(xi)?;
        let p = self.degree;
        let t = &self.knots;
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = xi - t[span + 1 - j];
            right[j] = t[span + j] - xi;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let values: Vec<f64> = (0..=p).map(|r| ndu[r][p]).collect();
        let derivs = if p == 0 {
            vec![0.0]
        } else {
            (0..=p)
                .map(|r| {
                    let mut d = 0.0;
                    if r >= 1 {
                        d += ndu[r - 1][p - 1] / ndu[p][r - 1];
                    }
                    if r < p {
                        d -= ndu[r][p - 1] / ndu[p][r];
                    }
                    d * p as f64
                })
                .collect()
        };
        Ok(BasisEval {
            first_active: span - p,
            values,
            derivs,
        })
    }

    /// Insert `new_knots` (each strictly inside `(0, 1)`), returning the refined
    /// knot vector and the control-coefficient refinement matrix.
    pub fn insert_knots(&self, new_knots: &[f64]) -> Result<Refinement, SplineError> {
        let mut sorted = new_knots.to_vec();
        sorted.sort_by(f64::total_cmp);
        if let Some(&bad) = sorted.iter().find(|&&k| !(k > 0.0 && k < 1.0)) {
            return Err(SplineError::InvalidKnots(format!(
                "inserted knot {bad} is not strictly inside (0, 1)"
            )));
        }
        let p = self.degree;
        let mut knots = self.knots.clone();
        let mut matrix = DMatrix::<f64>::identity(self.num_basis(), self.num_basis());
        for &u in &sorted {
            let n = knots.len() - p - 1;
            let k = knots.partition_point(|&t| t <= u) - 1;
            let mut step = DMatrix::<f64>::zeros(n + 1, n);
            for i in 0..=n {
                let alpha = if i + p <= k {
                    1.0
                } else if i > k {
                    0.0
                } else {
                    (u - knots[i]) / (knots[i + p] - knots[i])
                };
                if i < n {
                    step[(i, i)] = alpha;
                }
                if i >= 1 {
                    step[(i, i - 1)] = 1.0 - alpha;
                }
            }
            matrix = step * matrix;
            knots.insert(k + 1, u);
        }
        let refined = Self {
            degree: p,
            knots,
        };
        for (knot, mult) in refined.interior_multiplicities() {
            if mult > p {
                return Err(SplineError::MultiplicityExceeded {
                    knot,
                    multiplicity: mult,
                    degree: p,
                });
            }
        }
        Ok(Refinement {
            knots: refined,
            matrix,
        })
    }
}

/// Values and parametric gradients of the active bivariate functions.
///
/// `indices` are local tensor indices `k2 * n1 + k1`, ordered with the
/// first direction running fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct NurbsEval {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    pub grads: Vec<[f64; 2]>,
}

/// Tensor-product rational basis on `[0, 1]^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct NurbsBasis2D {
    basis_u: KnotVector,
    basis_v: KnotVector,
    weights: Vec<f64>,
}

impl NurbsBasis2D {
    pub fn new(basis_u: KnotVector, basis_v: KnotVector, weights: Vec<f64>) -> Result<Self, SplineError> {
        let expected = basis_u.num_basis() * basis_v.num_basis();
        if weights.len() != expected {
            return Err(SplineError::InvalidWeights(format!(
                "expected {expected} weights, got {}",
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(SplineError::InvalidWeights(format!("weight {w} is not positive")));
        }
        Ok(Self {
            basis_u,
            basis_v,
            weights,
        })
    }

    /// Unit weights: the rational basis reduces to the tensor-product B-splines.
    pub fn polynomial(basis_u: KnotVector, basis_v: KnotVector) -> Self {
        let n = basis_u.num_basis() * basis_v.num_basis();
        Self {
            basis_u,
            basis_v,
            weights: vec![1.0; n],
        }
    }

    pub fn basis_u(&self) -> &KnotVector {
        &self.basis_u
    }

    pub fn basis_v(&self) -> &KnotVector {
        &self.basis_v
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `(n1, n2)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.basis_u.num_basis(), self.basis_v.num_basis())
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn eval(&self, xi: [f64; 2]) -> Result<NurbsEval, SplineError> {
        let bu = self.basis_u.eval(xi[0])?;
        let bv = self.basis_v.eval(xi[1])?;
        let n1 = self.basis_u.num_basis();
        let count = bu.values.len() * bv.values.len();
        let mut indices = Vec::with_capacity(count);
        let mut values = Vec::with_capacity(count);
        let mut grads = Vec::with_capacity(count);
        let (mut w_sum, mut dw_u, mut dw_v) = (0.0, 0.0, 0.0);
        for (b, (&nv, &dv)) in bv.values.iter().zip(&bv.derivs).enumerate() {
            for (a, (&nu, &du)) in bu.values.iter().zip(&bu.derivs).enumerate() {
                let idx = (bv.first_active + b) * n1 + bu.first_active + a;
                let w = self.weights[idx];
                let val = nu * nv * w;
                let gu = du * nv * w;
                let gv = nu * dv * w;
                w_sum += val;
                dw_u += gu;
                dw_v += gv;
                indices.push(idx);
                values.push(val);
                grads.push([gu, gv]);
            }
        }
        let inv = 1.0 / w_sum;
        for (val, g) in values.iter_mut().zip(grads.iter_mut()) {
            let r = *val * inv;
            g[0] = (g[0] - r * dw_u) * inv;
            g[1] = (g[1] - r * dw_v) * inv;
            *val = r;
        }
        Ok(NurbsEval {
            indices,
            values,
            grads,
        })
    }
}
