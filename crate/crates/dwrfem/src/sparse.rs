//! Sparse linear algebra: a small CSR matrix builder and a direct solver.
//!
//! Assembly accumulates into a fixed sparsity pattern (binary search per
//! scatter) so repeated assemblies on the same mesh reuse allocations and
//! stay deterministic. Factorization is delegated to faer's sparse LU.

use faer::prelude::Solve;
use faer::sparse::{SparseColMat, Triplet};

use crate::{Error, Result};

/// Square CSR matrix with a fixed symbolic pattern.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds the pattern from per-row column sets. Columns are sorted and
    /// deduplicated; values start at zero.
    pub fn from_pattern(rows: Vec<Vec<usize>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for mut cols in rows {
            cols.sort_unstable();
            cols.dedup();
            col_idx.extend_from_slice(&cols);
            row_ptr.push(col_idx.len());
        }
        let values = vec![0.0; col_idx.len()];
        CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn set_zero(&mut self) {
        for v in &mut self.values {
            *v = 0.0;
        }
    }

    /// Adds `v` at (i, j). The entry must exist in the pattern.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        match self.col_idx[lo..hi].binary_search(&j) {
            Ok(k) => self.values[lo + k] += v,
            Err(_) => panic!("entry ({i}, {j}) outside sparsity pattern"),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        match self.col_idx[lo..hi].binary_search(&j) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    /// Replaces row `i` with a single unit diagonal entry (other stored
    /// entries zeroed, pattern unchanged).
    pub fn set_identity_row(&mut self, i: usize) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        let mut found = false;
        for k in lo..hi {
            if self.col_idx[k] == i {
                self.values[k] = 1.0;
                found = true;
            } else {
                self.values[k] = 0.0;
            }
        }
        assert!(found, "diagonal ({i}, {i}) missing from pattern");
    }

    /// Row-sum norm ||A||_inf.
    pub fn inf_norm(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                self.values[self.row_ptr[i]..self.row_ptr[i + 1]]
                    .iter()
                    .map(|v| v.abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[i] = acc;
        }
        y
    }

    /// y = A^T x. Used for dual-consistency checks.
    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                y[self.col_idx[k]] += self.values[k] * x[i];
            }
        }
        y
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.n]; self.n];
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                dense[i][self.col_idx[k]] = self.values[k];
            }
        }
        dense
    }
}

/// Assembled linear system: matrix, right-hand side, and the Dirichlet
/// constraints already applied (constrained rows are identity rows, the
/// rhs carries the prescribed values).
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub constrained: Vec<(usize, f64)>,
}

impl SparseSystem {
    /// Symmetric Dirichlet elimination: constrained rows become identity
    /// rows carrying the prescribed value, constrained columns are zeroed
    /// with the known values moved to the right-hand side. Call once after
    /// accumulation.
    pub fn apply_constraints(&mut self) {
        let n = self.matrix.n;
        let mut value = vec![0.0; n];
        let mut flag = vec![false; n];
        for &(dof, v) in &self.constrained {
            value[dof] = v;
            flag[dof] = true;
        }
        for i in 0..n {
            if flag[i] {
                continue;
            }
            for k in self.matrix.row_ptr[i]..self.matrix.row_ptr[i + 1] {
                let j = self.matrix.col_idx[k];
                if flag[j] {
                    self.rhs[i] -= self.matrix.values[k] * value[j];
                    self.matrix.values[k] = 0.0;
                }
            }
        }
        for &(dof, v) in &self.constrained {
            self.matrix.set_identity_row(dof);
            self.rhs[dof] = v;
        }
    }

    /// Residual `A x - rhs` (after constraints the constrained rows
    /// contribute `x_i - g_i`).
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let ax = self.matrix.matvec(x);
        ax.iter().zip(&self.rhs).map(|(a, b)| a - b).collect()
    }
}

/// Matrix with Dirichlet elimination baked in and the eliminated column
/// entries retained, so one factorization serves many right-hand sides
/// with time-varying boundary values.
pub struct ConstrainedMatrix {
    pub matrix: CsrMatrix,
    /// (free row, constrained dof, original coefficient) triples.
    couplings: Vec<(usize, usize, f64)>,
    constrained: Vec<usize>,
}

impl ConstrainedMatrix {
    pub fn new(mut matrix: CsrMatrix, constrained: &[usize]) -> Self {
        let n = matrix.n;
        let mut flag = vec![false; n];
        for &d in constrained {
            flag[d] = true;
        }
        let mut couplings = Vec::new();
        for i in 0..n {
            if flag[i] {
                continue;
            }
            for k in matrix.row_ptr[i]..matrix.row_ptr[i + 1] {
                let j = matrix.col_idx[k];
                if flag[j] {
                    if matrix.values[k] != 0.0 {
                        couplings.push((i, j, matrix.values[k]));
                    }
                    matrix.values[k] = 0.0;
                }
            }
        }
        for &d in constrained {
            matrix.set_identity_row(d);
        }
        ConstrainedMatrix {
            matrix,
            couplings,
            constrained: constrained.to_vec(),
        }
    }

    /// Applies the stored elimination to a raw right-hand side:
    /// `values[d]` prescribes the solution at constrained dof `d`.
    pub fn constrain_rhs(&self, rhs: &mut [f64], values: &[(usize, f64)]) {
        let n = self.matrix.n;
        let mut value = vec![0.0; n];
        for &(d, v) in values {
            value[d] = v;
        }
        for &(i, j, a) in &self.couplings {
            rhs[i] -= a * value[j];
        }
        for &d in &self.constrained {
            rhs[d] = value[d];
        }
    }
}

/// Reusable LU factorization of a CSR matrix.
pub struct Factorization {
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
    n: usize,
}

impl Factorization {
    pub fn new(matrix: &CsrMatrix) -> Result<Self> {
        let mut triplets = Vec::with_capacity(matrix.values.len());
        for i in 0..matrix.n {
            for k in matrix.row_ptr[i]..matrix.row_ptr[i + 1] {
                triplets.push(Triplet::new(i, matrix.col_idx[k], matrix.values[k]));
            }
        }
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(matrix.n, matrix.n, &triplets)
            .map_err(|e| Error::LinearSolve(format!("sparse matrix build failed: {e:?}")))?;
        let lu = mat
            .sp_lu()
            .map_err(|e| Error::LinearSolve(format!("sparse LU failed: {e:?}")))?;
        Ok(Factorization { lu, n: matrix.n })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.n);
        let b = faer::Mat::from_fn(self.n, 1, |i, _| rhs[i]);
        let x = self.lu.solve(&b);
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }
}

/// Direct solve with a residual acceptance check
/// `||A x - rhs||_inf / (1 + ||rhs||_inf) < 1e-10`.
pub fn sparse_solve(system: &SparseSystem) -> Result<Vec<f64>> {
    let fact = Factorization::new(&system.matrix)?;
    let x = fact.solve(&system.rhs);
    check_residual(system, &x)?;
    Ok(x)
}

/// Accepts a solve when its backward error
/// ||Ax - b||_inf / (||A||_inf ||x||_inf + ||b||_inf) is at machine
/// level, which a stable LU delivers regardless of conditioning. Rejects
/// non-finite results (faer factorizes singular matrices without error
/// and returns NaN solutions).
pub fn check_residual(system: &SparseSystem, x: &[f64]) -> Result<()> {
    let mut res_inf: f64 = 0.0;
    let mut rhs_inf: f64 = 0.0;
    let mut x_inf: f64 = 0.0;
    let ax = system.matrix.matvec(x);
    for i in 0..system.rhs.len() {
        let r = (ax[i] - system.rhs[i]).abs();
        if !r.is_finite() {
            return Err(Error::LinearSolve(
                "solve rejected: non-finite residual (singular matrix?)".into(),
            ));
        }
        res_inf = res_inf.max(r);
        rhs_inf = rhs_inf.max(system.rhs[i].abs());
        x_inf = x_inf.max(x[i].abs());
    }
    let norm_a = system.matrix.inf_norm();
    let rel = res_inf / (norm_a * x_inf + rhs_inf + f64::MIN_POSITIVE);
    if !rel.is_finite() || rel >= 1e-9 {
        return Err(Error::LinearSolve(format!(
            "solve rejected: backward error {rel:.3e}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_pattern(n: usize) -> CsrMatrix {
        CsrMatrix::from_pattern((0..n).map(|_| (0..n).collect()).collect())
    }

    #[test]
    fn identity_system_returns_rhs() {
        let mut m = dense_pattern(5);
        for i in 0..5 {
            m.add(i, i, 1.0);
        }
        let rhs = vec![3.0, -1.0, 0.5, 2.0, 7.0];
        let sys = SparseSystem {
            matrix: m,
            rhs: rhs.clone(),
            constrained: vec![],
        };
        let x = sparse_solve(&sys).unwrap();
        for i in 0..5 {
            assert!((x[i] - rhs[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn tridiagonal_poisson_matches_dense_oracle() {
        // 1D Poisson stencil, 100 dofs; oracle is nalgebra's dense LU.
        let n = 100;
        let rows: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                let mut cols = vec![i];
                if i > 0 {
                    cols.push(i - 1);
                }
                if i + 1 < n {
                    cols.push(i + 1);
                }
                cols
            })
            .collect();
        let mut m = CsrMatrix::from_pattern(rows);
        for i in 0..n {
            m.add(i, i, 2.0);
            if i > 0 {
                m.add(i, i - 1, -1.0);
            }
            if i + 1 < n {
                m.add(i, i + 1, -1.0);
            }
        }
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();

        let dense = nalgebra::DMatrix::<f64>::from_fn(n, n, |i, j| m.get(i, j));
        let b = nalgebra::DVector::from_vec(rhs.clone());
        let oracle = dense.lu().solve(&b).expect("dense solve");

        let sys = SparseSystem {
            matrix: m,
            rhs,
            constrained: vec![],
        };
        let x = sparse_solve(&sys).unwrap();
        for i in 0..n {
            assert!((x[i] - oracle[i]).abs() < 1e-10, "dof {i}");
        }
    }

    #[test]
    fn singular_matrix_is_an_error() {
        let m = dense_pattern(3); // all zeros
        let sys = SparseSystem {
            matrix: m,
            rhs: vec![1.0, 0.0, 0.0],
            constrained: vec![],
        };
        assert!(sparse_solve(&sys).is_err());
    }

    #[test]
    fn constraints_make_identity_rows() {
        let mut m = dense_pattern(4);
        for i in 0..4 {
            for j in 0..4 {
                m.add(i, j, 1.0 + (i * 4 + j) as f64);
            }
        }
        let mut sys = SparseSystem {
            matrix: m,
            rhs: vec![1.0; 4],
            constrained: vec![(0, 5.0), (3, -2.0)],
        };
        sys.apply_constraints();
        for j in 0..4 {
            let want = if j == 0 { 1.0 } else { 0.0 };
            assert_eq!(sys.matrix.get(0, j), want);
        }
        assert_eq!(sys.rhs[0], 5.0);
        assert_eq!(sys.rhs[3], -2.0);
        let x = sparse_solve(&sys).unwrap();
        assert!((x[0] - 5.0).abs() < 1e-12);
        assert!((x[3] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn transpose_matvec_agrees_with_dense() {
        let n = 7;
        let mut m = dense_pattern(n);
        let mut rng = crate::test_rng(42);
        for i in 0..n {
            for j in 0..n {
                m.add(i, j, rng() - 0.5);
            }
        }
        let x: Vec<f64> = (0..n).map(|_| rng() - 0.5).collect();
        let yt = m.matvec_transpose(&x);
        let dense = m.to_dense();
        for j in 0..n {
            let mut acc = 0.0;
            for i in 0..n {
                acc += dense[i][j] * x[i];
            }
            assert!((yt[j] - acc).abs() < 1e-13);
        }
    }
}
