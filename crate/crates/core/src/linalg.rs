//! Compressed sparse row storage and preconditioned conjugate gradients.

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("dimension mismatch: matrix is {n}x{n}, vector has length {len}")]
    DimensionMismatch { n: usize, len: usize },
    #[error("tolerance {0} must lie in (0, 1)")]
    InvalidTolerance(f64),
    #[error("numerical breakdown in CG at iteration {0}")]
    Breakdown(usize),
    #[error("Jacobi preconditioner needs a positive diagonal (row {row} has {value})")]
    NonPositiveDiagonal { row: usize, value: f64 },
}

/// Square CSR matrix with sorted, unique column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from `(row, col, value)` triplets; duplicates are summed in input order.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_by_key(|&k| (triplets[k].0, triplets[k].1));
        let mut row_offsets = vec![0; n + 1];
        let mut col_indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for k in order {
            let (r, c, v) = triplets[k];
            assert!(r < n && c < n, "triplet ({r}, {c}) outside {n}x{n}");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_indices.push(c);
                values.push(v);
                row_offsets[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_offsets[i + 1] += row_offsets[i];
        }
        Self {
            n,
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let t: Vec<_> = diag.iter().enumerate().map(|(i, &d)| (i, i, d)).collect();
        Self::from_triplets(diag.len(), &t)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_offsets[i]..self.row_offsets[i + 1];
        (&self.col_indices[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map_or(0.0, |k| vals[k])
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum();
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        dot(v, &self.mul_vec(v))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |a_ij - a_ji| / max |a_ij|`.
    pub fn relative_asymmetry(&self) -> f64 {
        let scale = self.max_abs();
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst / scale
    }

    pub fn is_structurally_symmetric(&self) -> bool {
        (0..self.n).all(|i| {
            let (cols, _) = self.row(i);
            cols.iter().all(|&j| self.row(j).0.binary_search(&i).is_ok())
        })
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                m[(i, j)] = v;
            }
        }
        m
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn remove_mean(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preconditioner {
    None,
    Jacobi,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    pub tol: f64,
    /// Defaults to `10 n` when unset.
    pub max_iter: Option<usize>,
    pub preconditioner: Preconditioner,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: None,
            preconditioner: Preconditioner::Jacobi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_relative_residual: f64,
    pub converged: bool,
}

/// Solve `A x = b` from a zero initial guess.
pub fn cg_solve(a: &CsrMatrix, b: &[f64], opts: &CgOptions) -> Result<(Vec<f64>, SolveReport), LinalgError> {
    pcg(a, b, None, opts, false, &mut |_, _| {})
}

pub fn cg_solve_from(
    a: &CsrMatrix,
    b: &[f64],
    x0: &[f64],
    opts: &CgOptions,
) -> Result<(Vec<f64>, SolveReport), LinalgError> {
    pcg(a, b, Some(x0), opts, false, &mut |_, _| {})
}

/// CG with every iterate handed to `monitor` (iteration index, current x).
pub fn cg_solve_monitored(
    a: &CsrMatrix,
    b: &[f64],
    opts: &CgOptions,
    monitor: &mut dyn FnMut(usize, &[f64]),
) -> Result<(Vec<f64>, SolveReport), LinalgError> {
    pcg(a, b, None, opts, false, monitor)
}

/// CG restricted to vectors with zero coefficient sum, for operators whose
/// kernel is the constant vector (pure Neumann, closed surfaces). The
/// constant is projected out of `b`, the initial guess and every iterate.
pub fn cg_solve_projected(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: &CgOptions,
) -> Result<(Vec<f64>, SolveReport), LinalgError> {
    pcg(a, b, x0, opts, true, &mut |_, _| {})
}

fn pcg(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: &CgOptions,
    project: bool,
    monitor: &mut dyn FnMut(usize, &[f64]),
) -> Result<(Vec<f64>, SolveReport), LinalgError> {
    let n = a.dim();
    if b.len() != n {
        return Err(LinalgError::DimensionMismatch { n, len: b.len() });
    }
    if let Some(x0) = x0 {
        if x0.len() != n {
            return Err(LinalgError::DimensionMismatch { n, len: x0.len() });
        }
    }
    if !(opts.tol > 0.0 && opts.tol < 1.0) {
        return Err(LinalgError::InvalidTolerance(opts.tol));
    }
    let max_iter = opts.max_iter.unwrap_or(10 * n.max(1));
    let inv_diag = match opts.preconditioner {
        Preconditioner::None => None,
        Preconditioner::Jacobi => {
            let d = a.diagonal();
            if let Some((row, &value)) = d.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
                return Err(LinalgError::NonPositiveDiagonal { row, value });
            }
            Some(d.iter().map(|v| 1.0 / v).collect::<Vec<_>>())
        }
    };
    let precondition = |r: &[f64], z: &mut [f64]| {
        match &inv_diag {
            Some(inv) => z.iter_mut().zip(r.iter().zip(inv)).for_each(|(z, (r, d))| *z = r * d),
            None => z.copy_from_slice(r),
        }
        if project {
            remove_mean(z);
        }
    };

    let mut rhs = b.to_vec();
    if project {
        remove_mean(&mut rhs);
    }
    if rhs.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::Breakdown(0));
    }
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    if project {
        remove_mean(&mut x);
    }
    let b_norm = norm2(&rhs);
    if b_norm == 0.0 {
        return Ok((
            vec![0.0; n],
            SolveReport {
                iterations: 0,
                final_relative_residual: 0.0,
                converged: true,
            },
        ));
    }
    let residual = |x: &[f64]| {
        let mut r = a.mul_vec(x);
        r.iter_mut().zip(&rhs).for_each(|(ri, bi)| *ri = bi - *ri);
        if project {
            remove_mean(&mut r);
        }
        r
    };

    let mut r = residual(&x);
    let mut z = vec![0.0; n];
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut rel = norm2(&r) / b_norm;
    let mut iterations = 0;
    monitor(0, &x);
    while iterations < max_iter {
        if rel <= opts.tol {
            // confirm on the true residual before declaring convergence
            r = residual(&x);
            rel = norm2(&r) / b_norm;
            if rel <= opts.tol {
                break;
            }
            precondition(&r, &mut z);
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
        }
        a.matvec(&p, &mut ap);
        if project {
            remove_mean(&mut ap);
        }
        let pap = dot(&p, &ap);
        if !pap.is_finite() || pap == 0.0 {
            return Err(LinalgError::Breakdown(iterations));
        }
        let step = rz / pap;
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += step * pi);
        r.iter_mut().zip(&ap).for_each(|(ri, api)| *ri -= step * api);
        iterations += 1;
        monitor(iterations, &x);
        precondition(&r, &mut z);
        let rz_new = dot(&r, &z);
        rel = norm2(&r) / b_norm;
        if !rel.is_finite() || !rz_new.is_finite() {
            return Err(LinalgError::Breakdown(iterations));
        }
        let beta = rz_new / rz;
        rz = rz_new;
        p.iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + beta * *pi);
    }
    if project {
        remove_mean(&mut x);
    }
    let final_relative_residual = norm2(&residual(&x)) / b_norm;
    Ok((
        x,
        SolveReport {
            iterations,
            final_relative_residual,
            converged: final_relative_residual <= opts.tol,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_spd(n: usize, seed: u64) -> (CsrMatrix, DMatrix<f64>) {
        let mut rng = StdRng::seed_from_u64(seed);
        let b = DMatrix::<f64>::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let a = b.transpose() * &b + DMatrix::identity(n, n);
        let mut t = Vec::new();
        for i in 0..n {
            for j in 0..n {
                t.push((i, j, a[(i, j)]));
            }
        }
        (CsrMatrix::from_triplets(n, &t), a)
    }

    #[test]
    fn identity_solves_in_one_iteration() {
        let a = CsrMatrix::identity(7);
        let b: Vec<f64> = (0..7).map(|i| i as f64 - 2.5).collect();
        let (x, rep) = cg_solve(&a, &b, &CgOptions::default()).unwrap();
        assert_eq!(rep.iterations, 1);
        assert!(rep.converged);
        for (xi, bi) in x.iter().zip(&b) {
            assert!((xi - bi).abs() < 1e-14);
        }
    }

    #[test]
    fn diagonal_solve() {
        let a = CsrMatrix::from_diagonal(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let opts = CgOptions {
            preconditioner: Preconditioner::None,
            ..Default::default()
        };
        let (x, rep) = cg_solve(&a, &[1.0; 5], &opts).unwrap();
        assert!(rep.converged);
        for (i, xi) in x.iter().enumerate() {
            assert!((xi - 1.0 / (i as f64 + 1.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn matches_dense_factorization() {
        let (a, dense) = random_spd(50, 42);
        let mut rng = StdRng::seed_from_u64(43);
        let b: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let opts = CgOptions {
            tol: 1e-13,
            ..Default::default()
        };
        let (x, rep) = cg_solve(&a, &b, &opts).unwrap();
        assert!(rep.converged);
        let oracle = dense.lu().solve(&nalgebra::DVector::from_vec(b)).unwrap();
        for (xi, oi) in x.iter().zip(oracle.iter()) {
            assert!((xi - oi).abs() < 1e-8);
        }
    }

    #[test]
    fn a_norm_error_decreases_monotonically() {
        let (a, dense) = random_spd(50, 7);
        let b: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let exact = dense.clone().lu().solve(&nalgebra::DVector::from_vec(b.clone())).unwrap();
        let opts = CgOptions {
            tol: 1e-12,
            preconditioner: Preconditioner::None,
            ..Default::default()
        };
        let mut errors = Vec::new();
        cg_solve_monitored(&a, &b, &opts, &mut |_, x| {
            let e: Vec<f64> = x.iter().zip(exact.iter()).map(|(a, b)| a - b).collect();
            errors.push(a.quadratic_form(&e).sqrt());
        })
        .unwrap();
        assert!(errors.len() > 5);
        for w in errors.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-14, "{} > {}", w[1], w[0]);
        }
    }

    #[test]
    fn max_iter_reports_non_convergence() {
        let (a, _) = random_spd(30, 3);
        let opts = CgOptions {
            max_iter: Some(2),
            ..Default::default()
        };
        let (_, rep) = cg_solve(&a, &[1.0; 30], &opts).unwrap();
        assert!(!rep.converged);
        assert_eq!(rep.iterations, 2);
    }

    #[test]
    fn nan_is_a_breakdown() {
        let a = CsrMatrix::identity(3);
        assert!(matches!(
            cg_solve(&a, &[1.0, f64::NAN, 0.0], &CgOptions::default()),
            Err(LinalgError::Breakdown(_))
        ));
        let bad = CsrMatrix::from_triplets(2, &[(0, 0, 1.0), (1, 1, f64::NAN)]);
        assert!(cg_solve(&bad, &[1.0, 1.0], &CgOptions {
            preconditioner: Preconditioner::None,
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn triplets_sum_duplicates_and_sort() {
        let m = CsrMatrix::from_triplets(3, &[(2, 1, 1.0), (0, 2, 2.0), (2, 1, 0.5), (0, 0, 1.0)]);
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.get(2, 1), 1.5);
        assert_eq!(m.row(0).0, &[0, 2]);
        assert_eq!(m.get(1, 1), 0.0);
    }

    #[test]
    fn matvec_matches_dense() {
        let mut rng = StdRng::seed_from_u64(99);
        for _ in 0..5 {
            let n = 100;
            let mut t = Vec::new();
            for _ in 0..600 {
                t.push((rng.gen_range(0..n), rng.gen_range(0..n), rng.gen_range(-1.0..1.0)));
            }
            let m = CsrMatrix::from_triplets(n, &t);
            let d = m.to_dense();
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y = m.mul_vec(&x);
            let yd = &d * nalgebra::DVector::from_vec(x);
            for (a, b) in y.iter().zip(yd.iter()) {
                assert!((a - b).abs() < 1e-13);
            }
        }
    }

    fn path_laplacian(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n - 1 {
            t.extend([(i, i, 1.0), (i + 1, i + 1, 1.0), (i, i + 1, -1.0), (i + 1, i, -1.0)]);
        }
        CsrMatrix::from_triplets(n, &t)
    }

    #[test]
    fn projected_constant_rhs_gives_zero() {
        let a = path_laplacian(10);
        let (x, rep) = cg_solve_projected(&a, &[3.0; 10], None, &CgOptions::default()).unwrap();
        assert!(rep.converged);
        assert!(x.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn projected_solution_is_shift_invariant() {
        let a = path_laplacian(20);
        let b: Vec<f64> = (0..20).map(|i| (i as f64 * 0.7).cos()).collect();
        let x0: Vec<f64> = (0..20).map(|i| (i as f64).sqrt()).collect();
        let shifted: Vec<f64> = x0.iter().map(|v| v + 12.5).collect();
        let opts = CgOptions::default();
        let (x1, r1) = cg_solve_projected(&a, &b, Some(&x0), &opts).unwrap();
        let (x2, _) = cg_solve_projected(&a, &b, Some(&shifted), &opts).unwrap();
        assert!(r1.converged);
        assert!(x1.iter().sum::<f64>().abs() < 1e-10);
        for (a, b) in x1.iter().zip(&x2) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let a = CsrMatrix::identity(3);
        assert!(matches!(cg_solve(&a, &[1.0; 2], &CgOptions::default()), Err(LinalgError::DimensionMismatch { .. })));
        let opts = CgOptions {
            tol: 1.5,
            ..Default::default()
        };
        assert!(matches!(cg_solve(&a, &[1.0; 3], &opts), Err(LinalgError::InvalidTolerance(_))));
    }
}
