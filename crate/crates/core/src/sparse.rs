//! Compressed-row matrices and a (preconditioned) conjugate gradient solver.

use crate::error::{Error, Result};

/// Square matrix in compressed-row storage.
///
/// Column indices are sorted and unique within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col: Vec<u32>,
    val: Vec<f64>,
}

impl SparseMatrix {
    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            n,
            row_ptr: (0..=n).collect(),
            col: (0..n as u32).collect(),
            val: vec![1.0; n],
        }
    }

    /// Assemble from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|(r, c, _)| *r >= n || *c >= n) {
            return Err(Error::DimensionMismatch {
                context: "sparsekit",
                expected: n,
                got: r.max(c) + 1,
            });
        }
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col = Vec::with_capacity(triplets.len());
        let mut val: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *val.last_mut().unwrap() += v;
                continue;
            }
            col.push(c as u32);
            val.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(SparseMatrix {
            n,
            row_ptr,
            col,
            val,
        })
    }

    /// Build row by row. Each row must list strictly increasing columns.
    pub(crate) fn from_sorted_rows(
        n: usize,
        nnz_hint: usize,
        mut fill_row: impl FnMut(usize, &mut Vec<(u32, f64)>),
    ) -> Self {
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col = Vec::with_capacity(nnz_hint);
        let mut val = Vec::with_capacity(nnz_hint);
        let mut scratch = Vec::new();
        row_ptr.push(0);
        for r in 0..n {
            scratch.clear();
            fill_row(r, &mut scratch);
            debug_assert!(scratch.windows(2).all(|w| w[0].0 < w[1].0));
            for &(c, v) in &scratch {
                col.push(c);
                val.push(v);
            }
            row_ptr.push(col.len());
        }
        SparseMatrix {
            n,
            row_ptr,
            col,
            val,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    /// Entries `(col, value)` of row `r`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col[span.clone()]
            .iter()
            .zip(&self.val[span])
            .map(|(&c, &v)| (c as usize, v))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(cc, _)| cc == c).map_or(0.0, |(_, v)| v)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|r| self.get(r, r)).collect()
    }

    /// `alpha * I + beta * self`, sharing the sparsity pattern plus the diagonal.
    pub fn shifted(&self, alpha: f64, beta: f64) -> SparseMatrix {
        SparseMatrix::from_sorted_rows(self.n, self.nnz() + self.n, |r, row| {
            let mut placed = false;
            for (c, v) in self.row(r) {
                if !placed && c >= r {
                    if c == r {
                        row.push((c as u32, alpha + beta * v));
                        placed = true;
                        continue;
                    }
                    row.push((r as u32, alpha));
                    placed = true;
                }
                row.push((c as u32, beta * v));
            }
            if !placed {
                row.push((r as u32, alpha));
            }
        })
    }

    /// Exact structural and numerical symmetry.
    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|r| self.row(r).all(|(c, v)| self.get(c, r) == v))
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                context: "sparsekit",
                expected: self.n,
                got: x.len(),
            });
        }
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        Ok(y)
    }

    /// `y = A x` without allocation; lengths are the caller's contract.
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for (r, out) in y.iter_mut().enumerate() {
            let (start, end) = (self.row_ptr[r], self.row_ptr[r + 1]);
            let mut acc = 0.0;
            for k in start..end {
                acc += self.val[k] * x[self.col[k] as usize];
            }
            *out = acc;
        }
    }

    /// `x^T A x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (r, &xr) in x.iter().enumerate() {
            let mut row = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                row += self.val[k] * x[self.col[k] as usize];
            }
            acc += xr * row;
        }
        acc
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.n]; self.n];
        for (r, row) in dense.iter_mut().enumerate() {
            for (c, v) in self.row(r) {
                row[c] = v;
            }
        }
        dense
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Approximate inverse applied inside [`pcg`].
pub trait Preconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

pub struct Jacobi {
    inv_diag: Vec<f64>,
}

impl Jacobi {
    pub fn new(a: &SparseMatrix) -> Self {
        Jacobi {
            inv_diag: a.diagonal().iter().map(|d| 1.0 / d).collect(),
        }
    }
}

impl Preconditioner for Jacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((z, r), d) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *z = r * d;
        }
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final relative residual `||b - A x|| / ||b||`.
    pub residual: f64,
}

/// Unpreconditioned conjugate gradients from a zero start.
pub fn cg_solve(a: &SparseMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<CgOutcome> {
    pcg(a, b, None, tol, max_iter, &IdentityPreconditioner)
}

/// Preconditioned conjugate gradients for SPD `a`.
///
/// Stops when the true relative residual `||b - A x|| / ||b||` is at most
/// `tol`. A zero right-hand side returns zero immediately.
pub fn pcg(
    a: &SparseMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
    precond: &dyn Preconditioner,
) -> Result<CgOutcome> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            context: "sparsekit",
            expected: n,
            got: b.len(),
        });
    }
    if let Some(x0) = x0 {
        if x0.len() != n {
            return Err(Error::DimensionMismatch {
                context: "sparsekit",
                expected: n,
                got: x0.len(),
            });
        }
    }
    let b_norm = norm(b);
    if !b_norm.is_finite() {
        return Err(Error::NotFinite { context: "sparsekit" });
    }
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            x: vec![0.0; n],
            iterations: 0,
            residual: 0.0,
        });
    }
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut iterations = 0;

    let true_residual = |x: &[f64], r: &mut [f64], q: &mut [f64]| {
        a.matvec_into(x, q);
        for i in 0..n {
            r[i] = b[i] - q[i];
        }
        norm(r) / b_norm
    };

    let mut rel = true_residual(&x, &mut r, &mut q);
    // The recurrence residual drifts from the true one; re-anchor and resume
    // a bounded number of times.
    for _restart in 0..4 {
        if rel <= tol {
            break;
        }
        precond.apply(&r, &mut z);
        p.copy_from_slice(&z);
        let mut rz = dot(&r, &z);
        while iterations < max_iter {
            a.matvec_into(&p, &mut q);
            let pq = dot(&p, &q);
            if !pq.is_finite() || pq <= 0.0 {
                return Err(Error::NotFinite { context: "sparsekit" });
            }
            let alpha = rz / pq;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * q[i];
            }
            iterations += 1;
            let r_norm = norm(&r);
            if !r_norm.is_finite() {
                return Err(Error::NotFinite { context: "sparsekit" });
            }
            if r_norm <= tol * b_norm {
                break;
            }
            precond.apply(&r, &mut z);
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        rel = true_residual(&x, &mut r, &mut q);
        if iterations >= max_iter {
            break;
        }
    }
    if rel > tol {
        return Err(Error::MaxIterations {
            context: "sparsekit",
            iterations,
            residual: rel,
        });
    }
    Ok(CgOutcome {
        x,
        iterations,
        residual: rel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense_matvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        a.iter().map(|row| dot(row, x)).collect()
    }

    fn laplacian_1d(n: usize, h: f64) -> SparseMatrix {
        let s = 1.0 / (h * h);
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 * s));
            if i > 0 {
                t.push((i, i - 1, -s));
            }
            if i + 1 < n {
                t.push((i, i + 1, -s));
            }
        }
        SparseMatrix::from_triplets(n, t).unwrap()
    }

    #[test]
    fn identity_matvec() {
        let y = SparseMatrix::identity(3).matvec(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(y, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn stencil_on_constant() {
        let a = SparseMatrix::from_triplets(
            2,
            vec![(0, 0, 2.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 2.0)],
        )
        .unwrap();
        assert_eq!(a.matvec(&[1.0, 1.0]).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn matvec_dimension_mismatch() {
        let err = SparseMatrix::identity(3).matvec(&[1.0]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 3, got: 1, .. }));
    }

    #[test]
    fn duplicate_triplets_sum() {
        let a = SparseMatrix::from_triplets(2, vec![(0, 1, 1.0), (0, 1, 2.5), (1, 1, 1.0)]).unwrap();
        assert_eq!(a.get(0, 1), 3.5);
        assert_eq!(a.nnz(), 2);
    }

    #[test]
    fn shifted_inserts_missing_diagonal() {
        let a = SparseMatrix::from_triplets(2, vec![(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let s = a.shifted(2.0, 3.0);
        assert_eq!(s.to_dense(), vec![vec![2.0, 3.0], vec![3.0, 2.0]]);
        let l = laplacian_1d(4, 0.5).shifted(1.0, 0.1);
        assert_eq!(l.get(1, 1), 1.0 + 0.1 * 8.0);
        assert_eq!(l.get(1, 2), -0.4);
    }

    #[test]
    fn cg_identity_single_iteration() {
        let b = vec![0.5, -2.0, 3.0, 7.0];
        let out = cg_solve(&SparseMatrix::identity(4), &b, 1e-12, 10).unwrap();
        assert_eq!(out.x, b);
        assert!(out.iterations <= 1);
    }

    #[test]
    fn cg_small_dirichlet_problem() {
        // Oracle: Gaussian elimination on 16*tridiag(-1,2,-1) x = 1 by hand,
        // x = (3/32, 1/8, 3/32).
        let a = laplacian_1d(3, 0.25);
        let out = cg_solve(&a, &[1.0, 1.0, 1.0], 1e-14, 10).unwrap();
        let expected = [3.0 / 32.0, 0.125, 3.0 / 32.0];
        for (x, e) in out.x.iter().zip(expected) {
            assert!((x - e).abs() < 1e-15);
        }
        assert!(out.iterations <= 3);
    }

    #[test]
    fn cg_zero_rhs() {
        let out = cg_solve(&laplacian_1d(5, 0.1), &[0.0; 5], 1e-8, 10).unwrap();
        assert_eq!(out.x, vec![0.0; 5]);
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn cg_reports_max_iterations() {
        let a = laplacian_1d(200, 1.0 / 201.0);
        let err = cg_solve(&a, &vec![1.0; 200], 1e-12, 5).unwrap_err();
        assert!(matches!(err, Error::MaxIterations { iterations: 5, .. }));
    }

    #[test]
    fn cg_rejects_indefinite() {
        let a = SparseMatrix::from_triplets(2, vec![(0, 0, 1.0), (1, 1, -1.0)]).unwrap();
        assert!(matches!(
            cg_solve(&a, &[0.0, 1.0], 1e-10, 10).unwrap_err(),
            Error::NotFinite { .. }
        ));
    }

    #[test]
    fn jacobi_preconditioned_solve() {
        let mut t = Vec::new();
        for i in 0..50 {
            t.push((i, i, 1.0 + i as f64));
            if i > 0 {
                t.push((i, i - 1, -0.5));
                t.push((i - 1, i, -0.5));
            }
        }
        let a = SparseMatrix::from_triplets(50, t).unwrap();
        let b: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let plain = cg_solve(&a, &b, 1e-10, 500).unwrap();
        let pre = pcg(&a, &b, None, 1e-10, 500, &Jacobi::new(&a)).unwrap();
        assert!(pre.iterations <= plain.iterations);
        let r: Vec<f64> = a.matvec(&pre.x).unwrap().iter().zip(&b).map(|(ax, b)| ax - b).collect();
        assert!(norm(&r) <= 1e-10 * norm(&b));
    }

    fn random_sparse(n: usize, entries: &[(usize, usize, f64)]) -> SparseMatrix {
        let t = entries
            .iter()
            .map(|&(r, c, v)| (r % n, c % n, v))
            .collect();
        SparseMatrix::from_triplets(n, t).unwrap()
    }

    proptest! {
        #[test]
        fn matvec_matches_dense(
            n in 1usize..50,
            entries in prop::collection::vec((0usize..1000, 0usize..1000, -10.0f64..10.0), 0..200),
            seed in prop::collection::vec(-5.0f64..5.0, 50),
        ) {
            let a = random_sparse(n, &entries);
            let x = &seed[..n];
            let y = a.matvec(x).unwrap();
            let oracle = dense_matvec(&a.to_dense(), x);
            for (u, v) in y.iter().zip(&oracle) {
                prop_assert!((u - v).abs() <= 1e-13 * v.abs().max(1.0));
            }
        }

        #[test]
        fn cg_meets_tolerance_on_random_stencils(
            n in 2usize..1000,
            shift in 0.0f64..2.0,
            b_seed in 0u64..1000,
        ) {
            // Shifted 1D stencil: SPD for every shift >= 0.
            let h = 1.0 / (n as f64 + 1.0);
            let a = laplacian_1d(n, h).shifted(shift, 1.0);
            let b: Vec<f64> = (0..n).map(|i| ((i as u64 * 2654435761 + b_seed) % 97) as f64 - 48.0).collect();
            let out = cg_solve(&a, &b, 1e-8, 4 * n).unwrap();
            let r: Vec<f64> = a.matvec(&out.x).unwrap().iter().zip(&b).map(|(ax, b)| ax - b).collect();
            prop_assert!(norm(&r) <= 1e-8 * norm(&b) + 1e-300);
        }
    }
}
